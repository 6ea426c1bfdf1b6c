"""The full super-resolution network and its L1 objective."""
from __future__ import annotations

import numpy as np

from .config import ModelConfig
from .csa import csa_fe_stage, init_csa_stage
from .imaging import bicubic_resize
from .params import Params, conv_params, prefixed, sub, to_tensors
from .tensor import ShapeError, Tensor, add, conv2d, no_grad, pixel_shuffle, sub as tsub, tabs, tmean
from .transformer import (
    decoder_stack,
    encoder_stack,
    init_decoder_stack,
    init_embed,
    init_encoder_stack,
    init_unembed,
    patch_embed,
    patch_unembed,
)


def upsample_steps(scale: int) -> list[int]:
    if scale in (2, 3):
        return [scale]
    if scale == 4:
        return [2, 2]
    raise ValueError(f"unsupported scale {scale}; expected 2, 3 or 4")


def hr_patch(cfg: ModelConfig) -> tuple[int, int]:
    t = cfg.transformer
    return t.patch_h * cfg.scale, t.patch_w * cfg.scale


def build_model(cfg: ModelConfig, seed: int = 0, dtype="float32") -> dict[str, Tensor]:
    """Allocate and initialize every parameter; identical seeds give identical arrays."""
    cfg.validate()
    cfg = cfg.resolved()
    dtype = np.dtype(dtype)
    rng = np.random.default_rng(seed)
    c = cfg.feat_channels
    t = cfg.transformer
    lr_patch = (t.patch_h, t.patch_w)
    arrays: dict[str, np.ndarray] = {}
    arrays.update(prefixed("head", conv_params(rng, c, cfg.in_channels, 3, dtype)))
    for k in range(cfg.num_stages):
        arrays.update(prefixed(f"stages.{k}", init_csa_stage(rng, cfg.csa, dtype)))
    for j, r in enumerate(upsample_steps(cfg.scale)):
        arrays.update(prefixed(f"upsample.{j}", conv_params(rng, c * r * r, c, 3, dtype)))
    for k in range(cfg.num_stages):
        arrays.update(prefixed(f"embed.stage{k}", init_embed(rng, t, c, lr_patch, dtype)))
        arrays.update(prefixed(f"enc.stage{k}", init_encoder_stack(rng, t, dtype)))
    arrays.update(prefixed("embed.hr", init_embed(rng, t, c, hr_patch(cfg), dtype)))
    arrays.update(prefixed("enc.hr", init_encoder_stack(rng, t, dtype)))
    for k in range(cfg.num_stages):
        arrays.update(prefixed(f"dec.{k}", init_decoder_stack(rng, t, dtype)))
    arrays.update(prefixed("unembed", init_unembed(rng, t, c, hr_patch(cfg), dtype)))
    arrays.update(prefixed("reduce", conv_params(rng, c, c, 1, dtype)))
    arrays.update(prefixed("tail", conv_params(rng, cfg.in_channels, c, 3, dtype)))
    return to_tensors(arrays)


def _conv(x: Tensor, params: Params, name: str) -> Tensor:
    w = params[f"{name}.weight"]
    return conv2d(x, w, params[f"{name}.bias"], padding=w.shape[-1] // 2)


def subpixel_upsample(f: Tensor, scale: int, params: Params) -> Tensor:
    """3x3 conv to C*r*r channels then pixel shuffle; x4 runs two x2 steps."""
    for j, r in enumerate(upsample_steps(scale)):
        f = pixel_shuffle(_conv(f, params, str(j)), r)
    return f


def forward(lr: Tensor, cfg: ModelConfig, params: Params) -> Tensor:
    """(N, 3, h, w) -> (N, 3, s*h, s*w)."""
    cfg = cfg.resolved()
    t = cfg.transformer
    if lr.ndim != 4 or lr.shape[1] != cfg.in_channels:
        raise ShapeError(f"forward expects (N, {cfg.in_channels}, h, w), got {lr.shape}")
    h, w = lr.shape[2:]
    if h % t.patch_h or w % t.patch_w:
        raise ShapeError(
            f"LR input {h}x{w} must be a multiple of the transformer patch {t.patch_h}x{t.patch_w}; "
            f"crop or pad the LR image (HR patch must be a multiple of {t.patch_h * cfg.scale}x{t.patch_w * cfg.scale})"
        )
    x = _conv(lr, params, "head")
    stages = []
    for k in range(cfg.num_stages):
        x = csa_fe_stage(x, sub(params, f"stages.{k}"), residual=cfg.stage_residual)
        stages.append(x)
    up = subpixel_upsample(x, cfg.scale, sub(params, "upsample"))

    memories = [
        encoder_stack(patch_embed(f, t, sub(params, f"embed.stage{k}")), t, sub(params, f"enc.stage{k}"))
        for k, f in enumerate(stages)
    ]
    d = encoder_stack(patch_embed(up, t, sub(params, "embed.hr"), patch=hr_patch(cfg)), t, sub(params, "enc.hr"))
    for k, mem in enumerate(memories):
        d = decoder_stack(d, mem, t, sub(params, f"dec.{k}"))
    y = patch_unembed(d, t, sub(params, "unembed"))
    y = _conv(y, params, "reduce")
    y = _conv(y, params, "tail")
    if cfg.global_skip:
        base = bicubic_resize(lr.data, h * cfg.scale, w * cfg.scale).astype(lr.dtype)
        y = add(y, Tensor(base))
    return y


def l1_loss(sr: Tensor, hr: Tensor) -> Tensor:
    """Mean absolute error over every element."""
    if sr.shape != hr.shape:
        raise ShapeError(f"l1_loss: shape mismatch {sr.shape} vs {hr.shape}")
    return tmean(tabs(tsub(sr, hr)))


def super_resolve(lr: np.ndarray, cfg: ModelConfig, params: Params) -> np.ndarray:
    """Inference on a (C, h, w) or (N, C, h, w) float image of any size.

    The LR image is edge-padded up to the patch grid, the output is cropped
    back to ``scale * (h, w)`` and clamped to [0, 1].
    """
    single = lr.ndim == 3
    x = lr[None] if single else lr
    t = cfg.transformer
    h, w = x.shape[2:]
    ph, pw = -h % t.patch_h, -w % t.patch_w
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="edge")
    dtype = next(iter(params.values())).dtype
    with no_grad():
        y = forward(Tensor(np.ascontiguousarray(x, dtype=dtype)), cfg, params).data
    y = np.clip(y[:, :, : h * cfg.scale, : w * cfg.scale], 0.0, 1.0)
    return y[0] if single else y
