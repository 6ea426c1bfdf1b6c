"""Gradient-check suite over every differentiable operation, in float64."""
from __future__ import annotations

import numpy as np

from .config import CsaConfig, ModelConfig, TransformerConfig, toy_model_config
from .csa import channel_attention, csa_block, csa_fe_stage, init_csa_block, init_csa_stage, spatial_attention
from .gradcheck import GradCheckReport, grad_check
from .network import build_model, forward
from .params import prefixed
from .tensor import (
    Tensor,
    apply_activation,
    conv2d,
    layer_norm,
    matmul,
    pixel_shuffle,
    pixel_unshuffle,
    pool,
    precision,
    softmax_last_axis,
)
from .transformer import (
    TokenSequence,
    decoder_stack,
    encoder_stack,
    init_attention,
    init_decoder_stack,
    init_embed,
    init_encoder_stack,
    init_sgfn,
    init_unembed,
    multi_head_attention,
    patch_embed,
    patch_unembed,
    sgfn,
)

OP_TOL = 1e-4
MODEL_TOL = 1e-3


def _t(rng, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape))


def _params(arrays: dict[str, np.ndarray], rng: np.random.Generator | None = None, jitter: float = 0.0) -> dict[str, Tensor]:
    # jitter moves gammas/biases off their trivial init so their gradients are generic
    out = {}
    for k, v in arrays.items():
        v = v.astype(np.float64)
        if rng is not None and jitter:
            v = v + jitter * rng.standard_normal(v.shape)
        out[k] = Tensor(v)
    return out


def _check_with_params(fn, inputs: dict[str, Tensor], params: dict[str, Tensor], name: str, tol: float,
                       max_entries: int | None = None) -> GradCheckReport:
    keys = list(inputs) + [f"p:{k}" for k in params]
    everything = {**inputs, **{f"p:{k}": v for k, v in params.items()}}

    def wrapped(*tensors):
        named = dict(zip(keys, tensors))
        ins = [named[k] for k in inputs]
        ps = {k[2:]: v for k, v in named.items() if k.startswith("p:")}
        return fn(*ins, ps)

    return grad_check(wrapped, everything, name=name, tol=tol, max_entries=max_entries)


def op_reports(seed: int = 0) -> list[GradCheckReport]:
    rng = np.random.default_rng(seed)
    r: list[GradCheckReport] = []
    with precision("float64"):
        r.append(grad_check(matmul, [_t(rng, 3, 4), _t(rng, 4, 2)], h=1e-3, tol=OP_TOL, name="matmul"))
        r.append(grad_check(matmul, [_t(rng, 2, 3, 4), _t(rng, 4, 5)], tol=OP_TOL, name="matmul batched"))
        r.append(grad_check(lambda x, w, b: conv2d(x, w, b, padding=1), [_t(rng, 2, 3, 5, 5), _t(rng, 4, 3, 3, 3), _t(rng, 4)],
                            tol=OP_TOL, name="conv2d 3x3"))
        r.append(grad_check(lambda x, w, b: conv2d(x, w, b, padding=1, groups=4), [_t(rng, 2, 4, 5, 5), _t(rng, 4, 1, 3, 3), _t(rng, 4)],
                            tol=OP_TOL, name="conv2d depth-wise"))
        r.append(grad_check(lambda x, w, b: conv2d(x, w, b, padding=0, groups=2), [_t(rng, 1, 4, 5, 5), _t(rng, 6, 2, 3, 3), _t(rng, 6)],
                            tol=OP_TOL, name="conv2d grouped"))
        r.append(grad_check(lambda x, w: conv2d(x, w, padding=3), [_t(rng, 1, 1, 7, 7), _t(rng, 1, 1, 7, 7)],
                            tol=OP_TOL, name="conv2d 7x7"))
        for kind in ("relu", "gelu", "sigmoid"):
            r.append(grad_check(lambda x, k=kind: apply_activation(x, k), [_t(rng, 4, 5)], tol=OP_TOL, name=kind))
        r.append(grad_check(lambda x, g, b: layer_norm(x, g, b, 1e-6), [_t(rng, 2, 3, 6), _t(rng, 6), _t(rng, 6)],
                            tol=OP_TOL, name="layer_norm"))
        r.append(grad_check(softmax_last_axis, [_t(rng, 2, 3, 5)], tol=OP_TOL, name="softmax"))
        for mode in ("channel_max", "channel_avg", "spatial_max", "spatial_avg"):
            r.append(grad_check(lambda x, m=mode: pool(x, m), [_t(rng, 2, 3, 4, 4)], tol=OP_TOL, name=f"pool {mode}"))
        r.append(grad_check(lambda x: pixel_shuffle(x, 2), [_t(rng, 1, 8, 3, 3)], tol=OP_TOL, name="pixel_shuffle"))
        r.append(grad_check(lambda x: pixel_unshuffle(x, 3), [_t(rng, 1, 2, 6, 6)], tol=OP_TOL, name="pixel_unshuffle"))
    return r


def block_reports(seed: int = 0) -> list[GradCheckReport]:
    rng = np.random.default_rng(seed)
    r: list[GradCheckReport] = []
    f64 = np.float64
    with precision("float64"):
        csa = CsaConfig(channels=8, reduction=4)
        p = _params(init_csa_block(rng, csa, f64), rng, 0.1)
        r.append(_check_with_params(channel_attention, {"f": _t(rng, 1, 8, 6, 6)}, p, "channel_attention", OP_TOL))
        r.append(_check_with_params(spatial_attention, {"f": _t(rng, 1, 8, 6, 6)}, p, "spatial_attention", OP_TOL))
        r.append(_check_with_params(csa_block, {"f": _t(rng, 1, 8, 6, 6)}, _params(init_csa_block(rng, CsaConfig(channels=8), f64), rng, 0.1),
                                    "csa_block", OP_TOL))
        stage = _params(prefixed("s", init_csa_stage(rng, CsaConfig(channels=8), f64)), rng, 0.1)
        r.append(_check_with_params(lambda f, ps: csa_fe_stage(f, {k[2:]: v for k, v in ps.items()}),
                                    {"f": _t(rng, 1, 8, 8, 8)}, stage, "csa_fe_stage", OP_TOL, max_entries=40))

        tcfg = TransformerConfig(patch_h=2, patch_w=2, embed_dim=8, num_heads=2, num_encoders=2, num_decoders=2,
                                 pos_grid_h=2, pos_grid_w=2)
        attn = _params(init_attention(rng, 8, f64), rng, 0.1)
        r.append(_check_with_params(lambda q, kv, ps: multi_head_attention(q, kv, tcfg, ps),
                                    {"q": _t(rng, 1, 3, 8), "kv": _t(rng, 1, 4, 8)}, attn, "multi_head_attention", OP_TOL))
        ff = _params(init_sgfn(rng, tcfg, f64), rng, 0.1)
        r.append(_check_with_params(lambda x, ps: sgfn(x, (2, 3), tcfg, ps), {"x": _t(rng, 1, 6, 8)}, ff, "sgfn", OP_TOL))

        emb = _params(init_embed(rng, tcfg, 3, (2, 2), f64), rng, 0.1)
        r.append(_check_with_params(lambda f, ps: patch_embed(f, tcfg, ps).tokens, {"f": _t(rng, 1, 3, 6, 4)}, emb,
                                    "patch_embed (resampled positions)", OP_TOL))
        unemb = _params(init_unembed(rng, tcfg, 3, (2, 2), f64), rng)
        r.append(_check_with_params(
            lambda tok, ps: patch_unembed(TokenSequence(tok, (2, 2), (3, 4, 4), (2, 2)), tcfg, ps),
            {"tokens": _t(rng, 1, 4, 8)}, unemb, "patch_unembed", OP_TOL))

        enc = _params(init_encoder_stack(rng, tcfg, f64), rng, 0.1)
        r.append(_check_with_params(
            lambda x, ps: encoder_stack(TokenSequence(x, (2, 2), (1, 1, 1), (1, 1)), tcfg, ps).tokens,
            {"x": _t(rng, 1, 4, 8)}, enc, "encoder_stack", OP_TOL, max_entries=30))
        dec = _params(init_decoder_stack(rng, tcfg, f64), rng, 0.1)
        r.append(_check_with_params(
            lambda x, m, ps: decoder_stack(TokenSequence(x, (2, 2), (1, 1, 1), (1, 1)),
                                           TokenSequence(m, (1, 3), (1, 1, 1), (1, 1)), tcfg, ps).tokens,
            {"d0": _t(rng, 1, 4, 8), "memory": _t(rng, 1, 3, 8)}, dec, "decoder_stack", OP_TOL, max_entries=30))
    return r


def model_report(seed: int = 0, cfg: ModelConfig | None = None, max_entries: int = 3) -> GradCheckReport:
    """End-to-end check of the toy network on a (1, 3, 8, 8) input, sampled parameter entries."""
    cfg = cfg or toy_model_config(2)
    rng = np.random.default_rng(seed)
    with precision("float64"):
        params = build_model(cfg, seed=seed, dtype="float64")
        for v in params.values():
            v.data = v.data + 0.05 * rng.standard_normal(v.shape)
        x = Tensor(rng.random((1, cfg.in_channels, 8, 8)))
        inputs = {"lr": x, **{f"p:{k}": v for k, v in params.items()}}
        keys = list(inputs)

        def fn(*tensors):
            named = dict(zip(keys, tensors))
            return forward(named["lr"], cfg, {k[2:]: v for k, v in named.items() if k.startswith("p:")})

        return grad_check(fn, inputs, name="full model (toy)", tol=MODEL_TOL, max_entries=max_entries, seed=seed)


def gradcheck_suite(seed: int = 0) -> list[GradCheckReport]:
    return op_reports(seed) + block_reports(seed) + [model_report(seed)]
