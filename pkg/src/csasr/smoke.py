"""Single-patch overfitting run used as a training sanity check."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig, TrainConfig, toy_model_config
from .imaging import bicubic_resize, degrade, psnr
from .network import super_resolve
from .trainer import FixedPair, init_state, train


def synthetic_patch(size: int = 32, seed: int = 1) -> np.ndarray:
    """(3, size, size) synthetic test card with flat shapes over a smooth color field."""
    r = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = 0.3 + 0.4 * bicubic_resize(r.random((3, 6, 6)), size, size)
    for _ in range(5):
        y0, x0 = r.integers(0, size - 6, 2)
        hh, ww = r.integers(3, 10, 2)
        img[:, y0:y0 + hh, x0:x0 + ww] = r.random((3, 1, 1))
    bar = size * 3 // 8
    img[:, :, bar:bar + 2] = 0.85
    img += 0.03 * np.sin(2 * np.pi * (xx * 5 + yy * 3))
    return np.clip(img, 0, 1).astype(np.float32)


@dataclass
class OverfitResult:
    steps: int
    initial_loss: float
    final_loss: float
    sr_psnr: float
    bicubic_psnr: float
    seconds: float
    losses: list[float] = field(default_factory=list)

    @property
    def loss_ratio(self) -> float:
        return self.final_loss / self.initial_loss

    @property
    def psnr_gain(self) -> float:
        return self.sr_psnr - self.bicubic_psnr


def overfit(model_cfg: ModelConfig | None = None, train_cfg: TrainConfig | None = None, hr: np.ndarray | None = None,
            max_steps: int = 2000, check_every: int = 100, stop_early: bool = True,
            loss_target: float = 0.1, gain_target: float = 3.0) -> OverfitResult:
    """Memorize one HR patch; stops at the first checkpoint meeting both targets when ``stop_early``."""
    model_cfg = model_cfg or toy_model_config(2)
    train_cfg = train_cfg or TrainConfig()
    hr = synthetic_patch() if hr is None else hr
    pair = degrade(hr, model_cfg.scale)
    bic = np.clip(bicubic_resize(pair.lr, *pair.hr.shape[-2:]), 0.0, 1.0)
    bicubic_psnr = psnr(bic, pair.hr)
    source = FixedPair(pair.lr, pair.hr)
    state = init_state(model_cfg, train_cfg)
    losses: list[float] = []
    sr_psnr = float("nan")
    start = time.perf_counter()
    while len(losses) < max_steps:
        n = min(check_every, max_steps - len(losses))
        out = train(model_cfg, train_cfg, source, epochs=state.epoch + 1, iters_per_epoch=n, state=state)
        losses.extend(out.losses[-n:])
        sr_psnr = psnr(super_resolve(pair.lr, model_cfg, state.params), pair.hr)
        if stop_early and losses[-1] < loss_target * losses[0] and sr_psnr - bicubic_psnr >= gain_target:
            break
    return OverfitResult(len(losses), losses[0], losses[-1], sr_psnr, bicubic_psnr,
                         time.perf_counter() - start, losses)
