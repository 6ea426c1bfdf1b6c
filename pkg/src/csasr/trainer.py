"""Adam and the training loop, plus evaluation over a split."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ModelConfig, TrainConfig
from .dataset import DatasetIndex, ImageCache, next_batch, stack_pairs
from .imaging import ImageError, bicubic_resize, degrade, load_image, psnr, ssim, to_float
from .network import build_model, forward, l1_loss, super_resolve
from .params import Params
from .tensor import Tape, Tensor, backward

log = logging.getLogger(__name__)

LOG_FIELDS = ("iter", "epoch", "loss", "lr", "elapsed_s")
REPORT_FIELDS = ("class", "count", "psnr_mean", "ssim_mean")


class NonFiniteLossError(RuntimeError):
    pass


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update in place; clears ``.grad`` of every parameter."""
    missing = [k for k in params if k not in grads or grads[k] is None]
    if missing:
        raise KeyError(f"no gradient for parameter(s): {', '.join(missing)}")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=p.dtype)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        p.data = (p.data - update).astype(p.dtype)
        p.grad = None


def collect_grads(params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}


# ---------------------------------------------------------------- batch sources

class BatchSource(Protocol):
    def __call__(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]: ...


@dataclass
class FixedPair:
    """Always yields the same (LR, HR) batch; for overfitting checks."""

    lr: np.ndarray
    hr: np.ndarray

    def __call__(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        lr = self.lr if self.lr.ndim == 4 else self.lr[None]
        hr = self.hr if self.hr.ndim == 4 else self.hr[None]
        return lr, hr


@dataclass
class DatasetBatches:
    index: DatasetIndex
    split: list[int]
    scale: int
    patch_hr: int
    batch: int
    patch_multiple: int
    augment: bool = False
    cache: ImageCache = field(default_factory=lambda: ImageCache(512))

    def __call__(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        pairs = next_batch(self.index, self.split, self.scale, self.patch_hr, self.batch, rng,
                           self.patch_multiple, self.augment, self.cache)
        return stack_pairs(pairs)


# ---------------------------------------------------------------- training

@dataclass
class TrainState:
    params: dict[str, Tensor]
    optim: AdamState
    rng: np.random.Generator
    epoch: int = 0
    iteration: int = 0
    best_psnr: float | None = None


@dataclass
class TrainResult:
    state: TrainState
    log: list[dict] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [row["loss"] for row in self.log]


def init_state(model_cfg: ModelConfig, train_cfg: TrainConfig) -> TrainState:
    params = build_model(model_cfg, seed=train_cfg.seed, dtype=train_cfg.dtype)
    # batch sampling draws from its own stream so model size never shifts the data order
    rng = np.random.default_rng([train_cfg.seed, 1])
    return TrainState(params, AdamState(), rng)


def state_to_checkpoint(state: TrainState, model_cfg: ModelConfig, train_cfg: TrainConfig) -> Checkpoint:
    return Checkpoint(
        model_config=model_cfg,
        train_config=train_cfg,
        params={k: p.data for k, p in state.params.items()},
        adam_m=dict(state.optim.m),
        adam_v=dict(state.optim.v),
        adam_t=state.optim.t,
        epoch=state.epoch,
        iteration=state.iteration,
        rng_state=state.rng.bit_generator.state,
        best_psnr=state.best_psnr,
    )


def state_from_checkpoint(ckpt: Checkpoint) -> TrainState:
    params = {k: Tensor(np.array(v), requires_grad=True, name=k) for k, v in ckpt.params.items()}
    optim = AdamState({k: np.array(v) for k, v in ckpt.adam_m.items()},
                      {k: np.array(v) for k, v in ckpt.adam_v.items()}, ckpt.adam_t)
    rng = np.random.default_rng()
    if ckpt.rng_state is not None:
        rng.bit_generator.state = ckpt.rng_state
    return TrainState(params, optim, rng, ckpt.epoch, ckpt.iteration, ckpt.best_psnr)


def expected_shapes(model_cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    return {k: p.shape for k, p in build_model(model_cfg, seed=0).items()}


def resume(path: str | Path, model_cfg: ModelConfig | None = None) -> tuple[TrainState, Checkpoint]:
    ckpt = load_checkpoint(path, expected_shapes(model_cfg) if model_cfg is not None else None)
    return state_from_checkpoint(ckpt), ckpt


def _grad_norms(params: Mapping[str, Tensor]) -> dict[str, float]:
    return {k: float(np.linalg.norm(p.grad)) if p.grad is not None else 0.0 for k, p in params.items()}


def train_step(state: TrainState, model_cfg: ModelConfig, train_cfg: TrainConfig,
               lr_batch: np.ndarray, hr_batch: np.ndarray) -> float:
    dtype = np.dtype(train_cfg.dtype)
    x = Tensor(np.ascontiguousarray(lr_batch, dtype=dtype))
    y = Tensor(np.ascontiguousarray(hr_batch, dtype=dtype))
    with Tape() as tape:
        loss = l1_loss(forward(x, model_cfg, state.params), y)
    value = loss.item()
    if not math.isfinite(value):
        raise NonFiniteLossError(f"non-finite loss {value} at iteration {state.iteration}")
    backward(loss, tape)
    grads = collect_grads(state.params)
    if not all(np.isfinite(g).all() for g in grads.values()):
        norms = _grad_norms(state.params)
        raise NonFiniteLossError(f"non-finite gradient at iteration {state.iteration}; grad norms: {norms}")
    adam_step(state.params, grads, state.optim, train_cfg)
    state.iteration += 1
    return value


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, batches: BatchSource,
          epochs: int | None = None, iters_per_epoch: int | None = None,
          state: TrainState | None = None, evaluate_fn: Callable[[Params], float] | None = None,
          out_dir: str | Path | None = None, log_path: str | Path | None = None) -> TrainResult:
    """Run the epoch loop; returns the per-iteration log.

    ``evaluate_fn`` maps parameters to a validation PSNR and is called every
    ``eval_interval`` epochs; with ``out_dir`` set, ``last.ckpt`` is written at
    those points and ``best.ckpt`` whenever the validation PSNR improves.
    """
    model_cfg.validate()
    train_cfg.validate()
    state = state or init_state(model_cfg, train_cfg)
    epochs = train_cfg.epochs if epochs is None else epochs
    iters = iters_per_epoch or train_cfg.iters_per_epoch or 1
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    result = TrainResult(state)
    writer = None
    fh = None
    if log_path is not None:
        new = not Path(log_path).exists() or state.iteration == 0
        fh = open(log_path, "w" if new else "a", newline="")
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        if new:
            writer.writeheader()
    start = time.perf_counter()
    try:
        while state.epoch < epochs:
            for _ in range(iters):
                lr_b, hr_b = batches(state.rng)
                loss = train_step(state, model_cfg, train_cfg, lr_b, hr_b)
                row = {"iter": state.iteration, "epoch": state.epoch, "loss": loss, "lr": train_cfg.lr,
                       "elapsed_s": round(time.perf_counter() - start, 3)}
                result.log.append(row)
                if writer is not None:
                    writer.writerow(row)
            state.epoch += 1
            interval = max(1, train_cfg.eval_interval)
            if state.epoch % interval == 0 or state.epoch == epochs:
                improved = False
                if evaluate_fn is not None:
                    score = evaluate_fn(state.params)
                    log.info("epoch %d: validation PSNR %.3f dB", state.epoch, score)
                    if state.best_psnr is None or score > state.best_psnr:
                        state.best_psnr = score
                        improved = True
                if out is not None:
                    ckpt = state_to_checkpoint(state, model_cfg, train_cfg)
                    save_checkpoint(out / "last.ckpt", ckpt)
                    if improved:
                        save_checkpoint(out / "best.ckpt", ckpt)
    finally:
        if fh is not None:
            fh.close()
    return result


# ---------------------------------------------------------------- evaluation

@dataclass
class ImageScore:
    cls: str
    name: str
    psnr: float
    ssim: float


@dataclass
class EvalReport:
    images: list[ImageScore]
    failures: int = 0

    def rows(self) -> list[dict]:
        classes = sorted({s.cls for s in self.images})
        out = [self._summary(c, [s for s in self.images if s.cls == c]) for c in classes]
        out.append(self._summary("mean", self.images))
        return out

    @staticmethod
    def _summary(name: str, scores: list[ImageScore]) -> dict:
        finite = [s.psnr for s in scores if math.isfinite(s.psnr)]
        if len(finite) < len(scores):
            log.warning("%s: %d identical image pair(s) (infinite PSNR) excluded from the PSNR mean",
                        name, len(scores) - len(finite))
        psnr_mean = float(np.mean(finite)) if finite else math.inf
        ssim_mean = float(np.mean([s.ssim for s in scores])) if scores else math.nan
        return {"class": name, "count": len(scores), "psnr_mean": psnr_mean, "ssim_mean": ssim_mean}

    @property
    def mean_psnr(self) -> float:
        return self.rows()[-1]["psnr_mean"]

    @property
    def mean_ssim(self) -> float:
        return self.rows()[-1]["ssim_mean"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows():
            writer.writerow({**row, "psnr_mean": f"{row['psnr_mean']:.4f}", "ssim_mean": f"{row['ssim_mean']:.4f}"})
        return buf.getvalue()

    def pretty(self) -> str:
        lines = [f"{'class':<20} {'count':>5} {'PSNR':>9} {'SSIM':>7}"]
        for row in self.rows():
            lines.append(f"{row['class']:<20} {row['count']:>5} {row['psnr_mean']:>9.2f} {row['ssim_mean']:>7.4f}")
        return "\n".join(lines)


EvalItem = tuple[str, str, np.ndarray | Path]


def split_items(index: DatasetIndex, split: Iterable[int]) -> list[EvalItem]:
    return [(index.entries[i][0], index.key(i), index.entries[i][1]) for i in split]


def evaluate(params: Params | None, model_cfg: ModelConfig, items: Iterable[EvalItem], scale: int,
             mode: str = "model") -> EvalReport:
    """Score full images. ``mode``: ``model``, ``bicubic`` (upscale baseline) or ``identity`` (HR as SR)."""
    if mode not in ("model", "bicubic", "identity"):
        raise ValueError(f"unknown evaluation mode {mode!r}")
    if mode == "model" and params is None:
        raise ValueError("model evaluation needs parameters")
    scores: list[ImageScore] = []
    failures = 0
    for cls, name, source in items:
        try:
            hr_full = source if isinstance(source, np.ndarray) else to_float(load_image(source))
            pair = degrade(hr_full, scale)
            hr = pair.hr
            if mode == "identity":
                sr = hr
            elif mode == "bicubic":
                sr = np.clip(bicubic_resize(pair.lr, *hr.shape[-2:]), 0.0, 1.0)
            else:
                sr = super_resolve(pair.lr, model_cfg, params)
            scores.append(ImageScore(cls, name, psnr(sr, hr), ssim(sr, hr)))
        except (ImageError, ValueError) as exc:
            failures += 1
            log.warning("evaluation of %s failed: %s", name, exc)
    if failures:
        log.warning("%d image(s) excluded from the report after failures", failures)
    return EvalReport(scores, failures)
