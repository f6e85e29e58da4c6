"""Dense 2D float64 tensors with reverse-mode gradient accumulation.

Every operation builds a node in an implicit computation graph; calling
:func:`backward` on a scalar (1x1) result accumulates gradients into every
reachable leaf. Adjoints are hand-written per op and verified against the
central finite-difference oracle in :func:`grad_check`.

All arithmetic is float64. There is no broadcasting: elementwise ops demand
equal shapes, and anything batched is expressed with explicit concat/stack
ops so the backward pass stays auditable.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import DimensionError, EmptyInputError, NumericError

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor2D:
    """A rows x cols matrix of 64-bit floats, row-major, with an optional grad."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, _parents: tuple = (), _backward: Callable[[], None] | None = None):
        arr = np.array(data, dtype=np.float64, copy=True, order="C")
        if arr.ndim != 2:
            raise DimensionError(f"Tensor2D requires a 2D array, got ndim={arr.ndim}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self._parents = _parents if _GRAD_ENABLED else ()
        self._backward = _backward if _GRAD_ENABLED else None

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise DimensionError(f"item() requires a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def copy(self) -> "Tensor2D":
        return Tensor2D(self.data)

    def __repr__(self) -> str:
        return f"Tensor2D({self.rows}x{self.cols})"


def zeros(rows: int, cols: int) -> Tensor2D:
    return Tensor2D(np.zeros((rows, cols)))


def eye(n: int) -> Tensor2D:
    return Tensor2D(np.eye(n))


def _wrap(out_data: np.ndarray, parents: tuple) -> Tensor2D:
    # Internal fast construction: op results are freshly allocated, so skip
    # the defensive copy done by __init__.
    t = Tensor2D.__new__(Tensor2D)
    t.data = np.ascontiguousarray(out_data, dtype=np.float64)
    t.grad = None
    t._parents = parents if _GRAD_ENABLED else ()
    t._backward = None
    return t


def matmul(a: Tensor2D, b: Tensor2D) -> Tensor2D:
    if a.cols != b.rows:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    out = _wrap(a.data @ b.data, (a, b))

    def bw():
        g = out.grad
        a.ensure_grad()
        a.grad += g @ b.data.T
        b.ensure_grad()
        b.grad += a.data.T @ g

    out._backward = bw if _GRAD_ENABLED else None
    return out


def add(a: Tensor2D, b: Tensor2D) -> Tensor2D:
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes differ, {a.shape} vs {b.shape}")
    out = _wrap(a.data + b.data, (a, b))

    def bw():
        g = out.grad
        a.ensure_grad()
        a.grad += g
        b.ensure_grad()
        b.grad += g

    out._backward = bw if _GRAD_ENABLED else None
    return out


def hadamard(a: Tensor2D, b: Tensor2D) -> Tensor2D:
    if a.shape != b.shape:
        raise DimensionError(f"hadamard: shapes differ, {a.shape} vs {b.shape}")
    out = _wrap(a.data * b.data, (a, b))

    def bw():
        g = out.grad
        a.ensure_grad()
        a.grad += g * b.data
        b.ensure_grad()
        b.grad += g * a.data

    out._backward = bw if _GRAD_ENABLED else None
    return out


def affine(t: Tensor2D, scale: float, shift: float) -> Tensor2D:
    """Elementwise scale * t + shift."""
    out = _wrap(scale * t.data + shift, (t,))

    def bw():
        t.ensure_grad()
        t.grad += scale * out.grad

    out._backward = bw if _GRAD_ENABLED else None
    return out


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    pos = x >= 0
    out = np.empty_like(x)
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor2D) -> Tensor2D:
    s = _stable_sigmoid(x.data)
    out = _wrap(s, (x,))

    def bw():
        x.ensure_grad()
        x.grad += out.grad * s * (1.0 - s)

    out._backward = bw if _GRAD_ENABLED else None
    return out


def tanh(x: Tensor2D) -> Tensor2D:
    t = np.tanh(x.data)
    out = _wrap(t, (x,))

    def bw():
        x.ensure_grad()
        x.grad += out.grad * (1.0 - t * t)

    out._backward = bw if _GRAD_ENABLED else None
    return out


def log(x: Tensor2D) -> Tensor2D:
    with np.errstate(divide="ignore"):
        out = _wrap(np.log(x.data), (x,))

    def bw():
        x.ensure_grad()
        x.grad += out.grad / x.data

    out._backward = bw if _GRAD_ENABLED else None
    return out


def clamp(x: Tensor2D, lo: float, hi: float) -> Tensor2D:
    """Elementwise clip; gradient is zero outside [lo, hi] (true derivative)."""
    inside = (x.data >= lo) & (x.data <= hi)
    out = _wrap(np.clip(x.data, lo, hi), (x,))

    def bw():
        x.ensure_grad()
        x.grad += out.grad * inside

    out._backward = bw if _GRAD_ENABLED else None
    return out


def transpose(t: Tensor2D) -> Tensor2D:
    out = _wrap(t.data.T, (t,))

    def bw():
        t.ensure_grad()
        t.grad += out.grad.T

    out._backward = bw if _GRAD_ENABLED else None
    return out


def concat_cols(a: Tensor2D, b: Tensor2D) -> Tensor2D:
    if a.rows != b.rows:
        raise DimensionError(f"concat_cols: row counts differ, {a.shape} vs {b.shape}")
    out = _wrap(np.hstack([a.data, b.data]), (a, b))
    na = a.cols

    def bw():
        g = out.grad
        a.ensure_grad()
        a.grad += g[:, :na]
        b.ensure_grad()
        b.grad += g[:, na:]

    out._backward = bw if _GRAD_ENABLED else None
    return out


def concat_rows(a: Tensor2D, b: Tensor2D) -> Tensor2D:
    if a.cols != b.cols:
        raise DimensionError(f"concat_rows: column counts differ, {a.shape} vs {b.shape}")
    out = _wrap(np.vstack([a.data, b.data]), (a, b))
    na = a.rows

    def bw():
        g = out.grad
        a.ensure_grad()
        a.grad += g[:na, :]
        b.ensure_grad()
        b.grad += g[na:, :]

    out._backward = bw if _GRAD_ENABLED else None
    return out


def stack_rows(parts: Sequence[Tensor2D]) -> Tensor2D:
    """Vertically stack row tensors (all with equal column counts)."""
    if not parts:
        raise EmptyInputError("stack_rows: no tensors given")
    cols = parts[0].cols
    for p in parts:
        if p.cols != cols:
            raise DimensionError(f"stack_rows: column counts differ, {p.shape} vs (*, {cols})")
    out = _wrap(np.vstack([p.data for p in parts]), tuple(parts))
    offsets = np.cumsum([0] + [p.rows for p in parts])

    def bw():
        g = out.grad
        for p, a, b in zip(parts, offsets[:-1], offsets[1:]):
            p.ensure_grad()
            p.grad += g[a:b, :]

    out._backward = bw if _GRAD_ENABLED else None
    return out


def take_rows(t: Tensor2D, indices: Sequence[int]) -> Tensor2D:
    """Gather rows by index (repeats allowed); backward scatters with accumulation."""
    if len(indices) == 0:
        raise EmptyInputError("take_rows: no indices given")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.min() < 0 or idx.max() >= t.rows:
        raise DimensionError(f"take_rows: index out of range for {t.shape}")
    out = _wrap(t.data[idx, :], (t,))

    def bw():
        t.ensure_grad()
        np.add.at(t.grad, idx, out.grad)

    out._backward = bw if _GRAD_ENABLED else None
    return out


def rows_slice(t: Tensor2D, start: int, stop: int) -> Tensor2D:
    """Contiguous row range [start, stop); backward scatters into the range."""
    if not (0 <= start < stop <= t.rows):
        raise DimensionError(f"rows_slice: range [{start}, {stop}) invalid for {t.shape}")
    out = _wrap(t.data[start:stop, :].copy(), (t,))

    def bw():
        t.ensure_grad()
        t.grad[start:stop, :] += out.grad

    out._backward = bw if _GRAD_ENABLED else None
    return out


def max_over_rows(h: Tensor2D) -> tuple[Tensor2D, list[int]]:
    """Per-column maximum over rows, returned as a 1 x cols tensor.

    The winning row index per column is also returned; backward routes each
    output gradient only to its winning row. Ties go to the lowest row index.
    """
    if h.rows < 1:
        raise EmptyInputError("max_over_rows: tensor has no rows")
    argmax = np.argmax(h.data, axis=0)  # first occurrence wins ties
    pooled = h.data[argmax, np.arange(h.cols)].reshape(1, -1)
    out = _wrap(pooled, (h,))

    def bw():
        h.ensure_grad()
        np.add.at(h.grad, (argmax, np.arange(h.cols)), out.grad[0, :])

    out._backward = bw if _GRAD_ENABLED else None
    return out, [int(i) for i in argmax]


def sum_all(t: Tensor2D) -> Tensor2D:
    out = _wrap(np.array([[t.data.sum()]]), (t,))

    def bw():
        t.ensure_grad()
        t.grad += out.grad[0, 0]

    out._backward = bw if _GRAD_ENABLED else None
    return out


def mean_all(t: Tensor2D) -> Tensor2D:
    n = t.data.size
    out = _wrap(np.array([[t.data.sum() / n]]), (t,))

    def bw():
        t.ensure_grad()
        t.grad += out.grad[0, 0] / n

    out._backward = bw if _GRAD_ENABLED else None
    return out


def backward(loss: Tensor2D) -> None:
    """Accumulate d(loss)/d(leaf) into .grad over the whole graph.

    The loss must be scalar (1x1). Traversal is an iterative topological
    sort, so long unrolled sequences do not hit the recursion limit.
    """
    if loss.shape != (1, 1):
        raise DimensionError(f"backward: loss must be 1x1, got {loss.shape}")
    topo: list[Tensor2D] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor2D, int]] = [(loss, 0)]
    while stack:
        node, pi = stack.pop()
        if pi == 0:
            if id(node) in seen:
                continue
            seen.add(id(node))
        if pi < len(node._parents):
            stack.append((node, pi + 1))
            child = node._parents[pi]
            if id(child) not in seen:
                stack.append((child, 0))
        else:
            topo.append(node)
    loss.ensure_grad()
    loss.grad[0, 0] = 1.0
    for node in reversed(topo):
        if node._backward is not None:
            node.ensure_grad()
            node._backward()


@dataclass
class Parameter:
    """A named trainable tensor. Gradients live on the tensor itself."""

    name: str
    value: Tensor2D

    @property
    def grad(self) -> np.ndarray:
        return self.value.ensure_grad()

    def zero_grad(self) -> None:
        self.value.zero_grad()


class ParamStore:
    """Ordered, name-unique collection of parameters (insertion order)."""

    def __init__(self) -> None:
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, value: Tensor2D) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name!r}")
        p = Parameter(name, value)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params.keys())

    def zero_grad(self) -> None:
        for p in self:
            p.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.data.copy() for p in self}

    def restore(self, values: dict[str, np.ndarray]) -> None:
        for p in self:
            src = values[p.name]
            if src.shape != p.value.data.shape:
                raise DimensionError(
                    f"restore: shape mismatch for {p.name!r}, "
                    f"expected {p.value.data.shape}, found {src.shape}"
                )
            p.value.data[...] = src


def grad_check(
    loss_fn: Callable[[], Tensor2D],
    params: ParamStore,
    epsilon: float = 1e-5,
    floor: float = 1e-8,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    loss_fn must rebuild the (deterministic, scalar) loss graph from the
    current parameter values on every call. Relative error per entry is
    |g_a - g_n| / max(|g_a|, |g_n|, floor); gradients smaller than `floor`
    are effectively compared absolutely, since below the central-difference
    resolution (noise around epsilon^2 plus rounding of the loss itself) a
    relative comparison only measures that noise.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if floor <= 0:
        raise ValueError("floor must be positive")
    params.zero_grad()
    loss = loss_fn()
    if not math.isfinite(loss.item()):
        raise NumericError(f"grad_check: loss is not finite ({loss.item()})")
    backward(loss)
    analytic = {p.name: p.grad.copy() for p in params}

    worst = 0.0
    for p in params:
        data = p.value.data
        it = np.nditer(data, flags=["multi_index"])
        for _ in it:
            ij = it.multi_index
            orig = data[ij]
            with no_grad():
                data[ij] = orig + epsilon
                f_plus = loss_fn().item()
                data[ij] = orig - epsilon
                f_minus = loss_fn().item()
                data[ij] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise NumericError("grad_check: perturbed loss is not finite")
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            ga = analytic[p.name][ij]
            err = abs(ga - numeric) / max(abs(ga), abs(numeric), floor)
            worst = max(worst, err)
    return worst


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: ParamStore) -> None:
        for p in params:
            if p.value.grad is not None:
                p.value.data -= self.lr * p.value.grad
        params.zero_grad()


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: ParamStore) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p in params:
            g = p.value.grad
            if g is None:
                g = np.zeros_like(p.value.data)
            m = self._m.setdefault(p.name, np.zeros_like(p.value.data))
            v = self._v.setdefault(p.name, np.zeros_like(p.value.data))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            p.value.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        params.zero_grad()


def make_optimizer(name: str, lr: float):
    if name == "sgd":
        return SGD(lr)
    if name == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer: {name!r}")


def optimizer_step(params: ParamStore, optimizer) -> None:
    """In-place parameter update from accumulated grads; grads are then zeroed."""
    optimizer.step(params)
