"""Named parameter maps and initializers."""
from __future__ import annotations

from typing import Mapping

import numpy as np

from .tensor import Tensor

Params = Mapping[str, Tensor]


def sub(params: Params, prefix: str) -> dict[str, Tensor]:
    """View of the entries under ``prefix.`` with the prefix stripped."""
    p = prefix + "."
    n = len(p)
    return {k[n:]: v for k, v in params.items() if k.startswith(p)}


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def conv_params(rng, cout: int, cin_per_group: int, k: int, dtype) -> dict[str, np.ndarray]:
    return {
        "weight": kaiming_uniform(rng, (cout, cin_per_group, k, k), cin_per_group * k * k, dtype),
        "bias": np.zeros(cout, dtype=dtype),
    }


def linear_params(rng, fan_in: int, fan_out: int, dtype) -> dict[str, np.ndarray]:
    return {
        "weight": kaiming_uniform(rng, (fan_in, fan_out), fan_in, dtype),
        "bias": np.zeros(fan_out, dtype=dtype),
    }


def norm_params(dim: int, dtype) -> dict[str, np.ndarray]:
    return {"gamma": np.ones(dim, dtype=dtype), "beta": np.zeros(dim, dtype=dtype)}


def prefixed(prefix: str, arrays: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k}": v for k, v in arrays.items()}


def to_tensors(arrays: Mapping[str, np.ndarray], requires_grad: bool = True) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in arrays.items()}


def count_parameters(params: Params) -> int:
    return sum(t.size for t in params.values())
