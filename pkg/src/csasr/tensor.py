"""Dense tensors with tape-based reverse-mode differentiation.

Every op is a plain function of numpy arrays plus a closure computing the
vector-Jacobian product. While a :class:`Tape` is active, ops whose inputs
require gradients append a node to it; :func:`backward` walks the nodes in
reverse creation order.
"""
from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, expit

_state = threading.local()
_DEFAULT_DTYPE = np.float32

# op name -> multiplicative corruption applied to that op's backward (test hook)
_FAULTS: dict[str, float] = {}


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


def default_dtype() -> np.dtype:
    return np.dtype(getattr(_state, "dtype", _DEFAULT_DTYPE))


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the dtype used for tensors built from Python data."""
    old = getattr(_state, "dtype", _DEFAULT_DTYPE)
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = old


@contextlib.contextmanager
def inject_backward_fault(op: str, factor: float) -> Iterator[None]:
    """Scale the backward pass of ``op`` by ``factor``. Only for checking the gradient checker."""
    _FAULTS[op] = factor
    try:
        yield
    finally:
        _FAULTS.pop(op, None)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(default_dtype())
        if any(n < 1 for n in arr.shape):
            raise ShapeError(f"tensor extents must be >= 1, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    # arithmetic sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(self, other)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(_as_tensor(other, self.dtype), self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(self, other)
    def __neg__(self): return scale(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return scale(self, 1.0 / other)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes) -> Tensor:
        return permute(self, axes)

    def sum(self) -> Tensor:
        return tsum(self)

    def mean(self) -> Tensor:
        return tmean(self)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Records differentiable ops executed while it is the active tape on this thread."""

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> Tape:
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def _tape_stack() -> list[Tape]:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording on this thread (inference)."""
    stack = _tape_stack()
    saved = list(stack)
    stack.clear()
    try:
        yield
    finally:
        stack.extend(saved)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or default_dtype()))


def _make(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        factor = _FAULTS.get(op)
        if factor is not None:
            inner = vjp

            def vjp(g, _inner=inner, _f=factor):
                return [None if d is None else d * _f for d in _inner(g)]

        tape.nodes.append(Node(op, inputs, out, vjp))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` of every requires-grad tensor reachable from ``loss``.

    Leaf gradients accumulate across calls; call ``zero_grad`` between steps.
    """
    if loss.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not any(node.output is loss for node in tape.nodes):
        raise TapeError("loss was not produced on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(node.output) for node in tape.nodes}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        _accumulate_into(node.output, g, leaf=False)
        for inp, d in zip(node.inputs, node.vjp(g)):
            if d is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in produced:
                grads[key] = grads[key] + d if key in grads else d
            else:
                _accumulate_into(inp, d, leaf=True)


def _accumulate_into(t: Tensor, g: np.ndarray, leaf: bool) -> None:
    g = np.asarray(g, dtype=t.data.dtype).reshape(t.shape)
    if leaf and t.grad is not None:
        t.grad = t.grad + g
    else:
        t.grad = g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        return scale(a, float(b))
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return _make("scale", a.data * a.data.dtype.type(c), (a,), lambda g: (g * c,))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _as_tensor(b, a.dtype)
    b = _as_tensor(b)
    return _as_tensor(a, b.dtype), b


def tabs(x: Tensor) -> Tensor:
    xd = x.data
    return _make("abs", np.abs(xd), (x,), lambda g: (g * np.sign(xd),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make("relu", np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)
    return _make("sigmoid", y, (x,), lambda g: (g * y * (1 - y),))


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GeLU, ``x * Phi(x)`` with the Gaussian CDF."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * xd * xd)
    return _make("gelu", (xd * cdf).astype(x.dtype), (x,), lambda g: (g * (cdf + xd * pdf),))


_ACTIVATIONS = {"relu": relu, "gelu": gelu, "sigmoid": sigmoid}


def apply_activation(x: Tensor, kind: str) -> Tensor:
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}") from None


# ---------------------------------------------------------------- reductions / shape

def tsum(x: Tensor) -> Tensor:
    shape = x.shape
    return _make("sum", np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                 lambda g: (np.broadcast_to(g, shape),))


def tmean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return _make("mean", np.asarray(x.data.mean(), dtype=x.dtype), (x,),
                 lambda g: (np.broadcast_to(g / n, shape),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return _make("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make("permute", np.ascontiguousarray(x.data.transpose(axes)), (x,),
                 lambda g: (g.transpose(inv),))


def split_last(x: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    """Split along the last axis into consecutive chunks of the given widths."""
    if sum(sizes) != x.shape[-1]:
        raise ShapeError(f"cannot split last axis {x.shape[-1]} into {list(sizes)}")
    out, start = [], 0
    for n in sizes:
        lo, hi = start, start + n
        shape = x.shape

        def vjp(g, lo=lo, hi=hi, shape=shape):
            full = np.zeros(shape, dtype=g.dtype)
            full[..., lo:hi] = g
            return (full,)

        out.append(_make("split", np.ascontiguousarray(x.data[..., lo:hi]), (x,), vjp))
        start = hi
    return out


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    la, lb = a.shape[:-2], b.shape[:-2]
    if la and lb and la != lb:
        raise ShapeError(f"matmul batch extents differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        da = g @ np.swapaxes(bd, -1, -2)
        db = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(da, ad.shape), _unbroadcast(db, bd.shape)

    return _make("matmul", ad @ bd, (a, b), vjp)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis; ``w`` is (in, out)."""
    y = matmul(x, w)
    return y if b is None else add(y, b)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: last axis {d} vs gamma {gamma.shape}, beta {beta.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data

    def vjp(g):
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make("layer_norm", (xhat * gd + beta.data).astype(x.dtype), (x, gamma, beta), vjp)


def softmax_last_axis(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return _make("softmax", y, (x,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


# ---------------------------------------------------------------- convolution

def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, padding: int = 0, groups: int = 1) -> Tensor:
    """Stride-1 zero-padded cross-correlation, NCHW input, (Cout, Cin/groups, kh, kw) weight."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {w.shape}")
    n, cin, h, wd = x.shape
    cout, cpg, kh, kw = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel must be odd, got {kh}x{kw}")
    if cin % groups or cout % groups or cpg != cin // groups:
        raise ShapeError(f"conv2d group mismatch: input {x.shape}, weight {w.shape}, groups={groups}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv2d bias shape {b.shape}, expected ({cout},)")
    ho, wo = h + 2 * padding - kh + 1, wd + 2 * padding - kw + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: input {h}x{wd} too small for kernel {kh}x{kw} with padding {padding}")
    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    wdat = w.data

    if groups == 1:
        cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # n, cin, ho, wo, kh, kw
        out = np.tensordot(cols, wdat, axes=([1, 4, 5], [1, 2, 3]))  # n, ho, wo, cout
        out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    elif cpg == 1 and cout == cin:
        out = np.zeros((n, cout, ho, wo), dtype=xp.dtype)
        for i in range(kh):
            for j in range(kw):
                out += xp[:, :, i:i + ho, j:j + wo] * wdat[None, :, 0, i, j, None, None]
    else:
        out = _grouped_padded(xp, wdat, groups)
    if b is not None:
        out = out + b.data[None, :, None, None]

    def vjp(g):
        dxp = np.zeros_like(xp)
        if groups == 1:
            cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))
            dw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))  # cout, cin, kh, kw
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + ho, j:j + wo] += np.tensordot(wdat[:, :, i, j], g, axes=([0], [1])).transpose(1, 0, 2, 3)
        elif cpg == 1 and cout == cin:
            dw = np.empty_like(wdat)
            for i in range(kh):
                for j in range(kw):
                    dw[:, 0, i, j] = np.einsum("nchw,nchw->c", g, xp[:, :, i:i + ho, j:j + wo])
                    dxp[:, :, i:i + ho, j:j + wo] += g * wdat[None, :, 0, i, j, None, None]
        else:
            dw = np.zeros_like(wdat)
            opg = cout // groups
            for gi in range(groups):
                xs = xp[:, gi * cpg:(gi + 1) * cpg]
                gs = g[:, gi * opg:(gi + 1) * opg]
                ws = wdat[gi * opg:(gi + 1) * opg]
                for i in range(kh):
                    for j in range(kw):
                        win = xs[:, :, i:i + ho, j:j + wo]
                        dw[gi * opg:(gi + 1) * opg, :, i, j] = np.tensordot(gs, win, axes=([0, 2, 3], [0, 2, 3]))
                        dxp[:, gi * cpg:(gi + 1) * cpg, i:i + ho, j:j + wo] += np.tensordot(ws[:, :, i, j], gs, axes=([0], [1])).transpose(1, 0, 2, 3)
        dx = dxp[:, :, p:p + h, p:p + wd] if p else dxp
        db = g.sum(axis=(0, 2, 3)) if b is not None else None
        return dx, dw, db

    inputs = (x, w) if b is None else (x, w, b)
    return _make("conv2d", out, inputs, vjp)


def _grouped_padded(xp: np.ndarray, w: np.ndarray, groups: int) -> np.ndarray:
    cpg = w.shape[1]
    opg = w.shape[0] // groups
    kh, kw = w.shape[2:]
    n, _, hp, wp = xp.shape
    ho, wo = hp - kh + 1, wp - kw + 1
    out = np.zeros((n, w.shape[0], ho, wo), dtype=xp.dtype)
    for gi in range(groups):
        xs = xp[:, gi * cpg:(gi + 1) * cpg]
        ws = w[gi * opg:(gi + 1) * opg]
        for i in range(kh):
            for j in range(kw):
                out[:, gi * opg:(gi + 1) * opg] += np.tensordot(ws[:, :, i, j], xs[:, :, i:i + ho, j:j + wo], axes=([1], [1])).transpose(1, 0, 2, 3)
    return out


# ---------------------------------------------------------------- pooling / rearrangement

_POOL_MODES = ("channel_max", "channel_avg", "spatial_max", "spatial_avg")


def pool(x: Tensor, mode: str) -> Tensor:
    """Global pooling: ``channel_*`` -> (N,C,1,1) over H,W; ``spatial_*`` -> (N,1,H,W) over C.

    Max routes its gradient to the first (lowest flat index) maximal element.
    """
    if x.ndim != 4:
        raise ShapeError(f"pool expects a 4-D tensor, got shape {x.shape}")
    if mode not in _POOL_MODES:
        raise ValueError(f"unknown pool mode {mode!r}")
    n, c, h, w = x.shape
    xd = x.data
    if mode == "channel_avg":
        return _make("pool", xd.mean(axis=(2, 3), keepdims=True), (x,),
                     lambda g: (np.broadcast_to(g / (h * w), xd.shape),))
    if mode == "spatial_avg":
        return _make("pool", xd.mean(axis=1, keepdims=True), (x,),
                     lambda g: (np.broadcast_to(g / c, xd.shape),))
    if mode == "channel_max":
        flat = xd.reshape(n, c, h * w)
        idx = flat.argmax(axis=2)
        out = np.take_along_axis(flat, idx[..., None], axis=2).reshape(n, c, 1, 1)

        def vjp(g):
            d = np.zeros_like(flat)
            np.put_along_axis(d, idx[..., None], g.reshape(n, c, 1), axis=2)
            return (d.reshape(xd.shape),)

        return _make("pool", out, (x,), vjp)
    idx = xd.argmax(axis=1)[:, None]
    out = np.take_along_axis(xd, idx, axis=1)

    def vjp(g):
        d = np.zeros_like(xd)
        np.put_along_axis(d, idx, g, axis=1)
        return (d,)

    return _make("pool", out, (x,), vjp)


def _shuffle(a: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = a.shape
    return a.reshape(n, c // (r * r), r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c // (r * r), h * r, w * r)


def _unshuffle(a: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = a.shape
    return a.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h // r, w // r)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(N, C*r*r, H, W) -> (N, C, H*r, W*r) with out[c, h*r+i, w*r+j] = in[c*r*r + i*r + j, h, w]."""
    if x.ndim != 4 or x.shape[1] % (r * r):
        raise ShapeError(f"pixel_shuffle: channels of {x.shape} not divisible by r^2={r * r}")
    return _make("pixel_shuffle", _shuffle(x.data, r), (x,), lambda g: (_unshuffle(g, r),))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    if x.ndim != 4 or x.shape[2] % r or x.shape[3] % r:
        raise ShapeError(f"pixel_unshuffle: spatial extents of {x.shape} not divisible by {r}")
    return _make("pixel_unshuffle", _unshuffle(x.data, r), (x,), lambda g: (_shuffle(g, r),))
