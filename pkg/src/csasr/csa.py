"""Channel and spatial attention feature extraction.

Channel gate: sigmoid(FC(ReLU(FC(maxpool + avgpool)))) with one shared
dense pair acting on the summed per-channel statistics. Spatial gate:
sigmoid(conv7x7(max_c + mean_c)). Gates are applied multiplicatively,
channel first, then spatial.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import CsaConfig
from .params import Params, conv_params, linear_params, prefixed, sub
from .tensor import ShapeError, Tensor, add, conv2d, linear, mul, pool, relu, reshape, sigmoid


@dataclass
class AttentionGates:
    m_c: Tensor  # (N, C, 1, 1)
    m_s: Tensor  # (N, 1, H, W)


def init_csa_block(rng: np.random.Generator, cfg: CsaConfig, dtype) -> dict[str, np.ndarray]:
    out = {}
    out.update(prefixed("fc1", linear_params(rng, cfg.channels, cfg.hidden, dtype)))
    out.update(prefixed("fc2", linear_params(rng, cfg.hidden, cfg.channels, dtype)))
    out.update(prefixed("spatial", conv_params(rng, 1, 1, cfg.spatial_kernel, dtype)))
    return out


def init_csa_stage(rng: np.random.Generator, cfg: CsaConfig, dtype) -> dict[str, np.ndarray]:
    out = prefixed("conv", conv_params(rng, cfg.channels, cfg.channels, 3, dtype))
    out.update(prefixed("csa", init_csa_block(rng, cfg, dtype)))
    return out


def channel_attention(f: Tensor, params: Params) -> Tensor:
    n, c = f.shape[:2]
    w1 = params["fc1.weight"]
    if w1.shape[0] != c:
        raise ShapeError(f"channel_attention: input has {c} channels, parameters expect {w1.shape[0]}")
    pooled = add(pool(f, "channel_max"), pool(f, "channel_avg"))
    z = reshape(pooled, (n, c))
    hidden = relu(linear(z, w1, params["fc1.bias"]))
    fc = linear(hidden, params["fc2.weight"], params["fc2.bias"])
    return reshape(sigmoid(fc), (n, c, 1, 1))


def spatial_attention(f: Tensor, params: Params) -> Tensor:
    pooled = add(pool(f, "spatial_max"), pool(f, "spatial_avg"))
    w = params["spatial.weight"]
    return sigmoid(conv2d(pooled, w, params["spatial.bias"], padding=w.shape[-1] // 2))


def attention_gates(f: Tensor, params: Params) -> tuple[AttentionGates, Tensor]:
    """Both gates plus the gated features ``M_s * (M_c * f)``."""
    m_c = channel_attention(f, params)
    f1 = mul(f, m_c)
    m_s = spatial_attention(f1, params)
    return AttentionGates(m_c, m_s), mul(f1, m_s)


def csa_block(f: Tensor, params: Params) -> Tensor:
    return attention_gates(f, params)[1]


def csa_fe_stage(f: Tensor, params: Params, residual: bool = True) -> Tensor:
    """3x3 conv followed by CSA gating, plus a skip from the stage input by default."""
    w = params["conv.weight"]
    y = csa_block(conv2d(f, w, params["conv.bias"], padding=w.shape[-1] // 2), sub(params, "csa"))
    return add(y, f) if residual else y
