"""Dense 2-D tensors with reverse-mode differentiation.

Only the handful of operations the message-passing model needs are provided:
matrix products, row-broadcast addition, segment means for neighbour
aggregation, GELU, dropout and a masked L1 loss. Everything runs in float64.

Gradients are recorded on a dynamic tape: each non-leaf tensor keeps its
parents and a closure that pushes its gradient to them. ``Tensor.backward``
walks the tape in reverse topological order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import ndtr

from .errors import ShapeError

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """A 2-D float64 array that can take part in a differentiation tape."""

    __array_priority__ = 100

    def __init__(self, values, requires_grad=False, name=None, _parents=(), _backward=None):
        # op results are fresh arrays and need no defensive copy
        data = np.asarray(values, dtype=np.float64) if _backward is not None else np.array(values, dtype=np.float64)
        if data.ndim == 0:
            data = data.reshape(1, 1)
        elif data.ndim == 1:
            data = data.reshape(1, -1)
        elif data.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got an array of shape {data.shape}")
        self._data = data
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    @property
    def data(self) -> np.ndarray:
        return self._data

    @data.setter
    def data(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self._data.shape:
            raise ShapeError(f"cannot assign {values.shape} values to tensor of shape {self._data.shape}")
        self._data = values

    @property
    def shape(self) -> tuple[int, int]:
        return self._data.shape

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def item(self) -> float:
        if self._data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self._data[0, 0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        """Backpropagate from this tensor; a scalar tensor seeds with 1."""
        if grad is None:
            if self._data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got {self.shape}")
            grad = np.ones_like(self._data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.shape:
            raise ShapeError(f"seed gradient {grad.shape} does not match tensor {self.shape}")

        order = _topological_order(self)
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and node._backward is None:
                node._accumulate(g)
            if node._backward is not None:
                for parent, pg in zip(node._parents, node._backward(g)):
                    if pg is None or not _needs_grad(parent):
                        continue
                    key = id(parent)
                    grads[key] = grads[key] + pg if key in grads else pg


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _topological_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and _needs_grad(parent):
                stack.append((parent, False))
    return order


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(values, parents, backward):
    parents = tuple(parents)
    if any(_needs_grad(p) for p in parents):
        return Tensor(values, _parents=parents, _backward=backward)
    return Tensor(values)


# ---------------------------------------------------------------------------
# operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    av, bv = a.data, b.data

    def backward(g):
        return g @ bv.T, av.T @ g

    return _result(av @ bv, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a single row broadcast over ``a``'s rows."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        return _result(a.data + b.data, (a, b), lambda g: (g, g))
    if b.shape == (1, a.shape[1]):
        return _result(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0, keepdims=True)))
    if a.shape == (1, b.shape[1]):
        return _result(a.data + b.data, (a, b), lambda g: (g.sum(axis=0, keepdims=True), g))
    raise ShapeError(f"cannot add tensors of shapes {a.shape} and {b.shape}")


def broadcast_rows(x: Tensor, n: int) -> Tensor:
    """Repeat a single row ``n`` times."""
    if x.shape[0] != 1:
        raise ShapeError(f"broadcast_rows expects one row, got {x.shape}")
    return _result(np.repeat(x.data, n, axis=0), (x,), lambda g: (g.sum(axis=0, keepdims=True),))


def square(x: Tensor) -> Tensor:
    xv = x.data
    return _result(xv * xv, (x,), lambda g: (2.0 * xv * g,))


def total(x: Tensor) -> Tensor:
    """Sum of all entries as a 1x1 tensor."""
    shape = x.shape
    return _result(x.data.sum(), (x,), lambda g: (np.full(shape, g[0, 0]),))


@dataclass(frozen=True)
class SegmentMap:
    """Maps source rows onto destination segments for mean aggregation.

    Entry ``k`` says row ``source_indices[k]`` of the input belongs to
    segment ``segment_ids[k]``.
    """

    source_indices: np.ndarray
    segment_ids: np.ndarray
    num_segments: int
    counts: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        src = np.asarray(self.source_indices, dtype=np.int64).reshape(-1)
        seg = np.asarray(self.segment_ids, dtype=np.int64).reshape(-1)
        if src.shape != seg.shape:
            raise ShapeError(f"source_indices ({src.size}) and segment_ids ({seg.size}) differ in length")
        if self.num_segments < 0:
            raise ValueError("num_segments must be non-negative")
        if seg.size and (seg.min() < 0 or seg.max() >= self.num_segments):
            raise IndexError(f"segment id out of range [0, {self.num_segments})")
        if src.size and src.min() < 0:
            raise IndexError("negative source index")
        object.__setattr__(self, "source_indices", src)
        object.__setattr__(self, "segment_ids", seg)
        object.__setattr__(self, "counts", np.bincount(seg, minlength=self.num_segments))

    def check(self, n_rows: int):
        if self.source_indices.size and self.source_indices.max() >= n_rows:
            raise IndexError(
                f"source index {int(self.source_indices.max())} out of range for {n_rows} rows"
            )

    @cached_property
    def _operator(self):
        weights = 1.0 / self.counts[self.segment_ids]
        n_src = int(self.source_indices.max()) + 1 if self.source_indices.size else 0
        return sp.csr_matrix(
            (weights, (self.segment_ids, self.source_indices)), shape=(self.num_segments, n_src)
        )

    def mean_operator(self, n_rows: int) -> sp.csr_matrix:
        """Sparse (num_segments x n_rows) averaging matrix."""
        op = self._operator
        if op.shape[1] != n_rows:
            op = sp.csr_matrix((op.data, op.indices, op.indptr), shape=(self.num_segments, n_rows))
        return op


def segment_mean(x: Tensor, seg: SegmentMap) -> Tensor:
    """Row-wise mean of ``x`` over each segment; empty segments give zero rows."""
    seg.check(x.shape[0])
    op = seg.mean_operator(x.shape[0])
    return _result(np.asarray(op @ x.data), (x,), lambda g: (np.asarray(op.T @ g),))


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x) with Phi the standard normal CDF."""
    xv = x.data
    cdf = ndtr(xv)

    def backward(g):
        return (g * (cdf + xv * np.exp(-0.5 * xv * xv) * _INV_SQRT_2PI),)

    return _result(xv * cdf, (x,), backward)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout. The identity in eval mode or when ``rate`` is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    keep = rng.random(x.shape) >= rate
    scale = keep / (1.0 - rate)
    return _result(x.data * scale, (x,), lambda g: (g * scale,))


def l1_loss(pred: Tensor, target, mask) -> Tensor:
    """Mean absolute error over the entries selected by ``mask``."""
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    target = target.reshape(pred.shape)
    mask = np.asarray(mask, dtype=bool).reshape(pred.shape)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("l1_loss mask selects no entries")
    diff = np.where(mask, pred.data - target, 0.0)
    value = np.abs(diff).sum() / count

    def backward(g):
        return (g[0, 0] * np.sign(diff) / count,)

    return _result(value, (pred,), backward)


# ---------------------------------------------------------------------------
# initialisation and optimisation


def kaiming_uniform(rows: int, cols: int, fan_in: int, rng: np.random.Generator, name=None) -> Tensor:
    """Uniform on [-b, b] with b = sqrt(6 / fan_in) (fan-in mode, unit gain)."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=(rows, cols)), requires_grad=True, name=name)


@dataclass
class AdamState:
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_step(params: Sequence[Tensor], state: AdamState, lr: float) -> Sequence[Tensor]:
    """One bias-corrected Adam update in place; gradients are cleared afterwards."""
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"parameter {p.name or i!r} has no gradient")
    if not state.first_moment:
        state.first_moment = [np.zeros(p.shape) for p in params]
        state.second_moment = [np.zeros(p.shape) for p in params]
    elif len(state.first_moment) != len(params):
        raise ValueError("Adam state was created for a different parameter list")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    for p, m, v in zip(params, state.first_moment, state.second_moment):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        p.grad = None
    return params


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(
    f: Callable[[Tensor], Tensor],
    point,
    eps: float = 1e-5,
    indices: Iterable[tuple[int, int]] | None = None,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` maps a tensor to a 1x1 tensor. The relative error of each entry
    uses ``max(|analytic|, |numeric|, 1e-8)`` as denominator. ``indices``
    restricts the comparison to selected entries.
    """
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    if base.ndim < 2:
        base = base.reshape(1, -1)
    if not np.all(np.isfinite(base)):
        raise ValueError("grad_check point contains non-finite values")

    x = Tensor(base.copy(), requires_grad=True)
    out = f(x)
    if not np.isfinite(out.item()):
        raise ValueError("function value is not finite at the check point")
    out.backward()
    analytic = x.grad if x.grad is not None else np.zeros_like(base)

    if indices is None:
        indices = np.ndindex(base.shape)
    worst = 0.0
    for idx in indices:
        hi, lo = base.copy(), base.copy()
        hi[idx] += eps
        lo[idx] -= eps
        f_hi, f_lo = f(Tensor(hi)).item(), f(Tensor(lo)).item()
        if not (np.isfinite(f_hi) and np.isfinite(f_lo)):
            raise ValueError(f"non-finite function value near entry {idx}")
        numeric = (f_hi - f_lo) / (2.0 * eps)
        a = float(analytic[idx])
        denom = max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, abs(a - numeric) / denom)
    return worst
