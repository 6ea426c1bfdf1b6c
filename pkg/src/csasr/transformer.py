"""Token embedding plus the pre-norm encoder and cross-attention decoder stacks."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .config import TransformerConfig
from .imaging import cubic_weights
from .params import Params, kaiming_uniform, linear_params, norm_params, prefixed, sub
from .tensor import (
    ShapeError,
    Tensor,
    add,
    conv2d,
    gelu,
    layer_norm,
    linear,
    matmul,
    mul,
    permute,
    reshape,
    scale,
    softmax_last_axis,
    split_last,
)

LN_EPS = 1e-6


@dataclass
class TokenSequence:
    tokens: Tensor  # (N, T, D)
    grid: tuple[int, int]  # token rows, token cols; T = rows * cols
    source_shape: tuple[int, int, int]  # (C, H, W) of the embedded feature map
    patch: tuple[int, int]

    def with_tokens(self, tokens: Tensor) -> TokenSequence:
        return replace(self, tokens=tokens)


# ---------------------------------------------------------------- init

def init_embed(rng, cfg: TransformerConfig, channels: int, patch: tuple[int, int], dtype) -> dict[str, np.ndarray]:
    fan_in = patch[0] * patch[1] * channels
    out = {"proj": kaiming_uniform(rng, (fan_in, cfg.embed_dim), fan_in, dtype)}
    if cfg.use_positional_embedding:
        out["pos"] = (0.02 * rng.standard_normal((cfg.pos_grid_h, cfg.pos_grid_w, cfg.embed_dim))).astype(dtype)
    return out


def init_unembed(rng, cfg: TransformerConfig, channels: int, patch: tuple[int, int], dtype) -> dict[str, np.ndarray]:
    return {"proj": kaiming_uniform(rng, (cfg.embed_dim, patch[0] * patch[1] * channels), cfg.embed_dim, dtype)}


def init_attention(rng, d: int, dtype) -> dict[str, np.ndarray]:
    out = {}
    for name in ("q", "k", "v", "o"):
        out.update(prefixed(name, linear_params(rng, d, d, dtype)))
    return out


def init_sgfn(rng, cfg: TransformerConfig, dtype) -> dict[str, np.ndarray]:
    hidden = cfg.sgfn_hidden
    half = hidden // 2
    out = prefixed("l1", linear_params(rng, cfg.embed_dim, hidden, dtype))
    out["dw.weight"] = kaiming_uniform(rng, (half, 1, 3, 3), 9, dtype)
    out["dw.bias"] = np.zeros(half, dtype=dtype)
    out.update(prefixed("l2", linear_params(rng, half, cfg.embed_dim, dtype)))
    return out


def init_encoder_stack(rng, cfg: TransformerConfig, dtype) -> dict[str, np.ndarray]:
    d = cfg.embed_dim
    out = {}
    for i in range(cfg.num_encoders):
        layer = {}
        layer.update(prefixed("norm1", norm_params(d, dtype)))
        layer.update(prefixed("attn", init_attention(rng, d, dtype)))
        layer.update(prefixed("norm2", norm_params(d, dtype)))
        layer.update(prefixed("sgfn", init_sgfn(rng, cfg, dtype)))
        out.update(prefixed(f"layers.{i}", layer))
    return out


def init_decoder_stack(rng, cfg: TransformerConfig, dtype) -> dict[str, np.ndarray]:
    d = cfg.embed_dim
    out = {}
    for i in range(cfg.num_decoders):
        layer = {}
        layer.update(prefixed("norm1", norm_params(d, dtype)))
        layer.update(prefixed("self_attn", init_attention(rng, d, dtype)))
        layer.update(prefixed("norm2", norm_params(d, dtype)))
        layer.update(prefixed("norm_mem", norm_params(d, dtype)))
        layer.update(prefixed("cross_attn", init_attention(rng, d, dtype)))
        layer.update(prefixed("norm3", norm_params(d, dtype)))
        layer.update(prefixed("sgfn", init_sgfn(rng, cfg, dtype)))
        out.update(prefixed(f"layers.{i}", layer))
    return out


# ---------------------------------------------------------------- embedding

def _check_patching(h: int, w: int, ph: int, pw: int) -> None:
    if h % ph or w % pw:
        raise ShapeError(
            f"feature map {h}x{w} cannot be split into {ph}x{pw} patches "
            f"(H={h} % P_h={ph} = {h % ph}, W={w} % P_w={pw} = {w % pw}); "
            f"crop the input so both extents are multiples of the patch size"
        )


def positional_table(pos: Tensor, grid: tuple[int, int]) -> Tensor:
    """(gh*gw, D) positional embedding, cubic-resampled when ``grid`` differs from the table."""
    ph, pw, d = pos.shape
    gh, gw = grid
    if (gh, gw) == (ph, pw):
        return reshape(pos, (gh * gw, d))
    rows = Tensor(cubic_weights(ph, gh).astype(pos.dtype))
    cols = Tensor(cubic_weights(pw, gw).T.astype(pos.dtype).copy())
    t = reshape(matmul(rows, reshape(pos, (ph, pw * d))), (gh, pw, d))
    t = matmul(permute(t, (0, 2, 1)), cols)  # gh, d, gw
    return reshape(permute(t, (0, 2, 1)), (gh * gw, d))


def patchify(f: Tensor, patch: tuple[int, int]) -> tuple[Tensor, tuple[int, int]]:
    """(N,C,H,W) -> (N, T, C*ph*pw); within a patch channels vary slowest, then rows, then columns."""
    n, c, h, w = f.shape
    ph, pw = patch
    _check_patching(h, w, ph, pw)
    gh, gw = h // ph, w // pw
    x = reshape(f, (n, c, gh, ph, gw, pw))
    x = permute(x, (0, 2, 4, 1, 3, 5))
    return reshape(x, (n, gh * gw, c * ph * pw)), (gh, gw)


def unpatchify(x: Tensor, grid: tuple[int, int], source_shape: tuple[int, int, int], patch: tuple[int, int]) -> Tensor:
    n = x.shape[0]
    c, h, w = source_shape
    gh, gw = grid
    ph, pw = patch
    x = reshape(x, (n, gh, gw, c, ph, pw))
    x = permute(x, (0, 3, 1, 4, 2, 5))
    return reshape(x, (n, c, h, w))


def patch_embed(f: Tensor, cfg: TransformerConfig, params: Params, patch: tuple[int, int] | None = None) -> TokenSequence:
    patch = patch or (cfg.patch_h, cfg.patch_w)
    raw, grid = patchify(f, patch)
    tokens = matmul(raw, params["proj"])
    if cfg.use_positional_embedding:
        tokens = add(tokens, positional_table(params["pos"], grid))
    return TokenSequence(tokens, grid, tuple(f.shape[1:]), patch)


def patch_unembed(t: TokenSequence, cfg: TransformerConfig, params: Params) -> Tensor:
    n, count, _ = t.tokens.shape
    gh, gw = t.grid
    c, h, w = t.source_shape
    ph, pw = t.patch
    if count != gh * gw or gh * ph != h or gw * pw != w:
        raise ShapeError(f"patch_unembed: {count} tokens on grid {t.grid} do not tile {t.source_shape} with patch {t.patch}")
    proj = params["proj"]
    if proj.shape[1] != c * ph * pw:
        raise ShapeError(f"patch_unembed: projection width {proj.shape[1]} != C*P_h*P_w = {c * ph * pw}")
    return unpatchify(matmul(t.tokens, proj), t.grid, t.source_shape, t.patch)


# ---------------------------------------------------------------- attention / ffn

def multi_head_attention(q_src: Tensor, kv_src: Tensor, cfg: TransformerConfig, params: Params,
                         return_weights: bool = False):
    n, tq, d = q_src.shape
    tk = kv_src.shape[1]
    if kv_src.shape[2] != d:
        raise ShapeError(f"attention: query width {d} != key/value width {kv_src.shape[2]}")
    if d % cfg.num_heads:
        raise ShapeError(f"attention: width {d} not divisible by {cfg.num_heads} heads")
    h = cfg.num_heads
    dh = d // h

    def heads(x: Tensor, name: str, t: int, axes) -> Tensor:
        y = linear(x, params[f"{name}.weight"], params[f"{name}.bias"])
        return permute(reshape(y, (n, t, h, dh)), axes)

    q = heads(q_src, "q", tq, (0, 2, 1, 3))  # n, h, tq, dh
    k = heads(kv_src, "k", tk, (0, 2, 3, 1))  # n, h, dh, tk
    v = heads(kv_src, "v", tk, (0, 2, 1, 3))  # n, h, tk, dh
    weights = softmax_last_axis(scale(matmul(q, k), 1.0 / math.sqrt(dh)))
    ctx = reshape(permute(matmul(weights, v), (0, 2, 1, 3)), (n, tq, d))
    out = linear(ctx, params["o.weight"], params["o.bias"])
    return (out, weights) if return_weights else out


def sgfn(x: Tensor, grid: tuple[int, int], cfg: TransformerConfig, params: Params) -> Tensor:
    """GeLU projection, split in two, depth-wise 3x3 conv on one half, gate the other."""
    n, t, _ = x.shape
    gh, gw = grid
    if t != gh * gw:
        raise ShapeError(f"sgfn: {t} tokens do not form a {gh}x{gw} grid")
    hidden = gelu(linear(x, params["l1.weight"], params["l1.bias"]))
    half = hidden.shape[-1] // 2
    x1, x2 = split_last(hidden, [half, half])
    spatial = permute(reshape(x2, (n, gh, gw, half)), (0, 3, 1, 2))
    spatial = conv2d(spatial, params["dw.weight"], params["dw.bias"], padding=1, groups=half)
    x2 = reshape(permute(spatial, (0, 2, 3, 1)), (n, t, half))
    return linear(mul(x1, x2), params["l2.weight"], params["l2.bias"])


def _norm(x: Tensor, params: Params, name: str) -> Tensor:
    return layer_norm(x, params[f"{name}.gamma"], params[f"{name}.beta"], LN_EPS)


def encoder_stack(e0: TokenSequence, cfg: TransformerConfig, params: Params) -> TokenSequence:
    x = e0.tokens
    for i in range(cfg.num_encoders):
        p = sub(params, f"layers.{i}")
        y = _norm(x, p, "norm1")
        x = add(multi_head_attention(y, y, cfg, sub(p, "attn")), x)
        x = add(sgfn(_norm(x, p, "norm2"), e0.grid, cfg, sub(p, "sgfn")), x)
    return e0.with_tokens(x)


def decoder_stack(d0: TokenSequence, memory: TokenSequence, cfg: TransformerConfig, params: Params) -> TokenSequence:
    """Decoder layers; every layer's cross-attention reads the same normalized ``memory``."""
    if memory.tokens.shape[-1] != d0.tokens.shape[-1]:
        raise ShapeError(f"decoder: memory width {memory.tokens.shape[-1]} != input width {d0.tokens.shape[-1]}")
    x = d0.tokens
    for i in range(cfg.num_decoders):
        p = sub(params, f"layers.{i}")
        y = _norm(x, p, "norm1")
        x = add(multi_head_attention(y, y, cfg, sub(p, "self_attn")), x)
        mem = _norm(memory.tokens, p, "norm_mem")
        x = add(multi_head_attention(_norm(x, p, "norm2"), mem, cfg, sub(p, "cross_attn")), x)
        x = add(sgfn(_norm(x, p, "norm3"), d0.grid, cfg, sub(p, "sgfn")), x)
    return d0.with_tokens(x)
