"""Quick executable examples across all modules, runnable without pytest."""
from __future__ import annotations

import math
import tempfile
from pathlib import Path
from typing import Callable

import numpy as np

from . import imaging
from .config import CsaConfig, TrainConfig, toy_model_config
from .csa import channel_attention, csa_block, init_csa_block, spatial_attention
from .network import build_model, forward, l1_loss
from .params import to_tensors
from .tensor import Tape, Tensor, apply_activation, backward, layer_norm, matmul, pixel_shuffle, pixel_unshuffle, pool, precision, softmax_last_axis, tsum
from .trainer import AdamState, adam_step

CHECKS: list[tuple[str, Callable[[], None]]] = []


def check(fn: Callable[[], None]) -> Callable[[], None]:
    CHECKS.append((fn.__name__, fn))
    return fn


def _close(a, b, tol=1e-6) -> None:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    assert a.shape == b.shape and np.allclose(a, b, atol=tol, rtol=0), f"{a} != {b}"


@check
def matmul_small() -> None:
    _close(matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data, [[11.0]])
    _close(matmul(Tensor(np.eye(2)), Tensor([[1.0, 2], [3, 4]])).data, [[1, 2], [3, 4]])


@check
def activations() -> None:
    _close(apply_activation(Tensor([0.0]), "sigmoid").data, [0.5])
    _close(apply_activation(Tensor([-2.0, 3.0]), "relu").data, [0.0, 3.0])
    x = np.array([-2.0, -1.0, 1.0, 2.0])
    want = [0.5 * v * (1 + math.erf(v / math.sqrt(2))) for v in x]
    _close(apply_activation(Tensor(x), "gelu").data, want, 1e-12)


@check
def layer_norm_cases() -> None:
    one, zero = Tensor(np.ones(2)), Tensor(np.zeros(2))
    _close(layer_norm(Tensor([3.0, 3.0]), one, zero).data, [0, 0])
    _close(layer_norm(Tensor([1.0, -1.0]), one, zero, 1e-6).data, [1 / math.sqrt(1 + 1e-6), -1 / math.sqrt(1 + 1e-6)])


@check
def softmax_cases() -> None:
    _close(softmax_last_axis(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    _close(softmax_last_axis(Tensor([1000.0, 1000.0])).data, [0.5, 0.5])
    _close(softmax_last_axis(Tensor([7.0])).data, [1.0])


@check
def pooling() -> None:
    x = Tensor(np.array([1.0, 3, 5, 7]).reshape(1, 1, 2, 2))
    _close(pool(x, "channel_max").data.ravel(), [7])
    _close(pool(x, "channel_avg").data.ravel(), [4])
    y = Tensor(np.array([2.0, -4.0]).reshape(1, 2, 1, 1))
    _close(pool(y, "spatial_max").data.ravel(), [2])
    _close(pool(y, "spatial_avg").data.ravel(), [-1])


@check
def pixel_shuffle_cases() -> None:
    x = Tensor(np.arange(4.0).reshape(1, 4, 1, 1))
    _close(pixel_shuffle(x, 2).data, [[[[0, 1], [2, 3]]]])
    z = Tensor(np.random.default_rng(0).random((2, 18, 3, 4)))
    assert np.array_equal(pixel_unshuffle(pixel_shuffle(z, 3), 3).data, z.data)


@check
def backward_basics() -> None:
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        loss = tsum(x * x)
    backward(loss, tape)
    _close(x.grad, [2, 4])


@check
def gates_are_half_with_zero_weights() -> None:
    cfg = CsaConfig(channels=4, reduction=2)
    p = to_tensors({k: np.zeros_like(v) for k, v in init_csa_block(np.random.default_rng(0), cfg, np.float64).items()})
    f = Tensor(np.random.default_rng(1).standard_normal((1, 4, 7, 7)))
    _close(channel_attention(f, p).data, np.full((1, 4, 1, 1), 0.5))
    _close(spatial_attention(f, p).data, np.full((1, 1, 7, 7), 0.5))
    _close(csa_block(f, p).data, 0.25 * f.data)


@check
def forward_shapes() -> None:
    for s in (2, 3, 4):
        cfg = toy_model_config(s)
        params = build_model(cfg, seed=0)
        y = forward(Tensor(np.zeros((1, 3, 8, 8), dtype=np.float32)), cfg, params)
        assert y.shape == (1, 3, 8 * s, 8 * s), y.shape


@check
def l1_arithmetic() -> None:
    assert abs(l1_loss(Tensor([[[[0.0, 0.0]]]]), Tensor([[[[1.0, 3.0]]]])).item() - 2.0) < 1e-12


@check
def metrics() -> None:
    a = np.zeros((3, 16, 16))
    assert imaging.psnr(a, a) == math.inf
    assert abs(imaging.psnr(a, a + 1, peak=255.0) - 48.1308) < 1e-3
    x = np.random.default_rng(0).random((3, 16, 16))
    assert imaging.ssim(x, x) == 1.0
    c = imaging.ssim(np.full((3, 16, 16), 0.5), np.full((3, 16, 16), 0.25))
    assert abs(c - 0.8001) < 1e-3, c


@check
def bicubic_and_degrade() -> None:
    img = np.full((3, 12, 12), 0.3)
    _close(imaging.bicubic_resize(img, 5, 7), np.full((3, 5, 7), 0.3), 1e-12)
    pair = imaging.degrade(np.random.default_rng(0).random((3, 256, 256)), 3)
    assert pair.lr.shape == (3, 85, 85) and pair.hr.shape == (3, 255, 255)


@check
def image_roundtrip() -> None:
    img = np.random.default_rng(0).integers(0, 256, (8, 8, 3), dtype=np.uint8)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "x.png"
        imaging.save_image(path, img)
        assert np.array_equal(imaging.load_image(path), img)
    assert imaging.to_u8(np.full((3, 1, 1), 0.5))[0, 0, 0] == 128


@check
def adam_first_step() -> None:
    with precision("float64"):
        p = {"w": Tensor(np.array([0.0]))}
        adam_step(p, {"w": np.array([1.0])}, AdamState(), TrainConfig(lr=1e-4))
        _close(p["w"].data, [-1e-4 / (1 + 1e-8)], 1e-15)


def run(verbose: bool = True) -> list[str]:
    failures = []
    for name, fn in CHECKS:
        try:
            fn()
            ok, detail = True, ""
        except Exception as exc:  # report every failure, keep going
            ok, detail = False, f"{type(exc).__name__}: {exc}"
            failures.append(name)
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'} {name}{(' - ' + detail) if detail else ''}")
    return failures
