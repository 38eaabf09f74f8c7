"""Dense float64 tensors with reverse-mode automatic differentiation.

A dynamic ``GradientTape`` records every operation whose inputs are
connected to a ``requires_grad`` leaf. ``GradientTape.backward`` walks the
tape once, in reverse, accumulating gradients into ``.grad``. Ops executed
while no tape is active (or under ``no_grad``) run plain numpy.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from . import kernels

MASK_SENTINEL = -1e30


class DimensionError(ValueError):
    """Shapes incompatible for the requested operation."""


class DomainError(ValueError):
    """Input outside the mathematical domain of the operation."""


_ACTIVE: "GradientTape | None" = None


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        global _ACTIVE
        self._saved = _ACTIVE
        _ACTIVE = None
        return self

    def __exit__(self, *exc):
        global _ACTIVE
        _ACTIVE = self._saved
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_recorded")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0 and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._recorded = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars are wrapped as constant tensors
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class GradientTape:
    """Ordered record of operations; parents of a node always precede it."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self):
        global _ACTIVE
        if _ACTIVE is not None:
            raise RuntimeError("a gradient tape is already active on this thread")
        _ACTIVE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE
        _ACTIVE = None
        return False

    def record(self, out: Tensor, parents: tuple[Tensor, ...], backward: Callable):
        self.nodes.append((out, parents, backward))
        out._recorded = True

    def backward(self, loss: Tensor):
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable tensor."""
        if loss.data.ndim != 0:
            raise DimensionError("backward requires a scalar loss")
        if loss.grad is None:
            loss.grad = np.array(1.0)
        else:
            loss.grad = loss.grad + np.array(1.0)
        for out, parents, bwd in reversed(self.nodes):
            g = out.grad
            if g is None:
                continue
            for p, pg in zip(parents, bwd(g)):
                if pg is None:
                    continue
                pg = np.asarray(pg)
                if pg.shape != p.data.shape:
                    # size must already agree; broadcasting is handled per-op
                    pg = pg.reshape(p.data.shape)
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
                p.grad = p.grad + pg


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _apply(out: Tensor, parents: tuple[Tensor, ...], backward: Callable) -> Tensor:
    tape = _ACTIVE
    if tape is not None and any(p.requires_grad or p._recorded for p in parents):
        tape.record(out, parents, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)
    return _apply(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)
    return _apply(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)
    return _apply(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data)
    return _apply(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2):
        raise DimensionError(f"matmul expects 2-D by 1/2-D, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        if b.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        return g @ b.data.T, a.data.T @ g

    return _apply(out, (a, b), bwd)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got {a.shape}")
    out = Tensor(a.data.T)
    return _apply(out, (a,), lambda g: (g.T,))


def dot(a, b) -> Tensor:
    """Inner product of two vectors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"dot expects matching vectors, got {a.shape} and {b.shape}")
    out = Tensor(np.dot(a.data, b.data))
    return _apply(out, (a, b), lambda g: (g * b.data, g * a.data))


# ---------------------------------------------------------------------------
# elementwise


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(1.0 / (1.0 + np.exp(-x.data)))
    return _apply(out, (x,), lambda g: (g * out.data * (1.0 - out.data),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.tanh(x.data))
    return _apply(out, (x,), lambda g: (g * (1.0 - out.data * out.data),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.maximum(x.data, 0.0))
    return _apply(out, (x,), lambda g: (g * (x.data > 0.0),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.exp(x.data))
    return _apply(out, (x,), lambda g: (g * out.data,))


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0.0):
        raise DomainError("log of non-positive entry")
    out = Tensor(np.log(x.data))
    return _apply(out, (x,), lambda g: (g / x.data,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0.0):
        raise DomainError("sqrt of negative entry")
    out = Tensor(np.sqrt(x.data))
    return _apply(out, (x,), lambda g: (g * 0.5 / out.data,))


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes through only inside [lo, hi]."""
    x = as_tensor(x)
    out = Tensor(np.clip(x.data, lo, hi))
    mask = (x.data >= lo) & (x.data <= hi)
    return _apply(out, (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.sum(axis=axis))

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _apply(out, (x,), bwd)


def reduce_mean(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else x.shape[axis]
    out = Tensor(x.data.mean(axis=axis))

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / n, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy() / n,)

    return _apply(out, (x,), bwd)


def frobenius_norm_sq(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.sum(x.data * x.data))
    return _apply(out, (x,), lambda g: (g * 2.0 * x.data,))


def trace(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise DimensionError(f"trace requires a square matrix, got {x.shape}")
    out = Tensor(np.trace(x.data))

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.fill_diagonal(gx, g)
        return (gx,)

    return _apply(out, (x,), bwd)


# ---------------------------------------------------------------------------
# structure


def softmax_rows(x) -> Tensor:
    """Row-stabilized softmax; entries at the mask sentinel get zero weight."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"softmax_rows expects a matrix, got {x.shape}")
    rowmax = x.data.max(axis=1, keepdims=True)
    if np.any(rowmax <= MASK_SENTINEL / 10.0):
        raise DomainError("fully masked row")
    e = np.exp(x.data - rowmax)
    out = Tensor(e / e.sum(axis=1, keepdims=True))

    def bwd(g):
        s = out.data
        return (s * (g - np.sum(g * s, axis=1, keepdims=True)),)

    return _apply(out, (x,), bwd)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if any(p.ndim != 2 for p in parts):
        raise DimensionError("concat_rows expects matrices")
    widths = {p.shape[1] for p in parts}
    if len(widths) != 1:
        raise DimensionError(f"concat_rows width mismatch: {[p.shape for p in parts]}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=0))
    offsets = np.cumsum([0] + [p.shape[0] for p in parts])

    def bwd(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return _apply(out, tuple(parts), bwd)


def concat_vec(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    flat = [p.data.reshape(-1) for p in parts]
    out = Tensor(np.concatenate(flat))
    offsets = np.cumsum([0] + [f.size for f in flat])

    def bwd(g):
        return tuple(
            g[offsets[i]:offsets[i + 1]].reshape(parts[i].shape) for i in range(len(parts))
        )

    return _apply(out, tuple(parts), bwd)


def stack_rows(vectors: Sequence[Tensor]) -> Tensor:
    vectors = [as_tensor(v) for v in vectors]
    if any(v.ndim != 1 for v in vectors):
        raise DimensionError("stack_rows expects vectors")
    out = Tensor(np.stack([v.data for v in vectors], axis=0))

    def bwd(g):
        return tuple(g[i] for i in range(len(vectors)))

    return _apply(out, tuple(vectors), bwd)


def slice_rows(x, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data[start:stop].copy())

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[start:stop] = g
        return (gx,)

    return _apply(out, (x,), bwd)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape))
    return _apply(out, (x,), lambda g: (g.reshape(x.shape),))


# ---------------------------------------------------------------------------
# fused kernels


def gru_layer(x, wz, uz, bz, wr, ur, br, wh, uh, bh) -> Tensor:
    """Gated recurrent scan as one tape node (see kernels.gru_forward)."""
    x = as_tensor(x)
    params = (wz, uz, bz, wr, ur, br, wh, uh, bh)
    if x.ndim != 2 or wz.shape[1] != x.shape[1]:
        raise DimensionError(
            f"gru_layer feature width mismatch: input {x.shape}, Wz {wz.shape}"
        )
    h, z, r, hc = kernels.gru_forward(x.data, *(p.data for p in params))
    out = Tensor(h)

    def bwd(g):
        return kernels.gru_backward(
            np.ascontiguousarray(g), x.data, h, z, r, hc,
            wz.data, uz.data, wr.data, ur.data, wh.data, uh.data,
        )

    return _apply(out, (x,) + params, bwd)


def gaussian_gram(zm, sigma: float) -> Tensor:
    """Gaussian kernel matrix over rows of zm; sigma is treated as constant."""
    zm = as_tensor(zm)
    if zm.ndim != 2:
        raise DimensionError(f"gaussian_gram expects a matrix, got {zm.shape}")
    K = kernels.gaussian_gram_forward(zm.data, float(sigma))
    out = Tensor(K)

    def bwd(g):
        return (kernels.gaussian_gram_backward(np.ascontiguousarray(g), zm.data, K, float(sigma)),)

    return _apply(out, (zm,), bwd)


# ---------------------------------------------------------------------------
# verification


def grad_check(f: Callable[..., Tensor], leaves: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` is called as ``f(*leaves)`` and must return a scalar tensor. The
    relative error is |analytic - numeric| / max(1, |analytic|, |numeric|),
    maximized over every coordinate of every leaf.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    for leaf in leaves:
        leaf.zero_grad()
    with GradientTape() as tape:
        y = f(*leaves)
        if y.data.ndim != 0:
            raise ValueError("grad_check requires a scalar-valued function")
        tape.backward(y)
    analytic = [
        leaf.grad.copy() if leaf.grad is not None else np.zeros_like(leaf.data)
        for leaf in leaves
    ]
    max_rel = 0.0
    with no_grad():
        for leaf, an in zip(leaves, analytic):
            flat = leaf.data.reshape(-1)
            an_flat = an.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = f(*leaves).item()
                flat[i] = orig - eps
                fm = f(*leaves).item()
                flat[i] = orig
                numeric = (fp - fm) / (2.0 * eps)
                rel = abs(an_flat[i] - numeric) / max(1.0, abs(an_flat[i]), abs(numeric))
                max_rel = max(max_rel, rel)
    return max_rel
