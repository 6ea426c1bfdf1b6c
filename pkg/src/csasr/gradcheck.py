"""Central-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward, mul, no_grad, tsum


@dataclass
class GradCheckReport:
    name: str
    max_rel_err: float
    tol: float
    checked: int
    per_input: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_err) and self.max_rel_err < self.tol)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max rel err {self.max_rel_err:.3e} (tol {self.tol:.0e}, {self.checked} entries)"


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), elementwise."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor] | dict[str, Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    name: str = "op",
    max_entries: int | None = None,
    seed: int = 0,
    floor: float = 1e-5,
) -> GradCheckReport:
    """Compare backprop against central differences for ``fn(*inputs)``.

    A non-scalar output is contracted with a fixed random tensor so every
    output direction is exercised. With ``max_entries`` only that many
    randomly chosen coordinates per input are perturbed.
    """
    named = dict(inputs) if isinstance(inputs, dict) else {f"in{i}": t for i, t in enumerate(inputs)}
    args = list(named.values())
    rng = np.random.default_rng(seed)
    probe: list[np.ndarray] = []

    def scalar(out: Tensor) -> Tensor:
        if out.size == 1:
            return tsum(out)
        if not probe:
            probe.append(rng.standard_normal(out.shape).astype(out.dtype))
        return tsum(mul(out, Tensor(probe[0])))

    for t in args:
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        loss = scalar(fn(*args))
    backward(loss, tape)
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for k, t in named.items()}

    per_input: dict[str, float] = {}
    worst, checked = 0.0, 0
    with no_grad():
        for key, t in named.items():
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
            num = np.empty(idx.size)
            for k, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(scalar(fn(*args)).data)
                flat[i] = orig - h
                fm = float(scalar(fn(*args)).data)
                flat[i] = orig
                num[k] = (fp - fm) / (2 * h)
            err = relative_error(analytic[key].reshape(-1)[idx].astype(np.float64), num, floor)
            per_input[key] = float(err.max()) if err.size else 0.0
            worst = max(worst, per_input[key])
            checked += idx.size
    return GradCheckReport(name, worst, tol, checked, per_input)
