"""Dense float64 tensors with a dynamic reverse-mode gradient tape.

Operations are recorded only while a :class:`GradTape` is active on the
current thread and at least one input requires a gradient::

    x = Tensor(np.ones(3), requires_grad=True)
    with GradTape() as tape:
        loss = (x * x).sum() * 0.5
    backward(loss, tape)
    x.grad  # == x.data

Also houses the probability primitives shared by every loss: temperature
softmax, cross-entropy and KL divergence on plain vectors.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError

PROB_FLOOR = 1e-12

_local = threading.local()


def _tape_stack() -> list["GradTape"]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "GradTape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


@dataclass
class _Node:
    output: "Tensor"
    inputs: tuple["Tensor", ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class GradTape:
    """Ordered record of primitive operations for one forward pass."""

    nodes: list[_Node] = field(default_factory=list)

    def __enter__(self) -> "GradTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)


class Tensor:
    """Row-major float64 array with an optional gradient slot."""

    __array_priority__ = 100  # make ndarray <op> Tensor dispatch to Tensor

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.size == 0:
            raise DomainError("tensors must hold at least one value")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def values(self) -> np.ndarray:
        """Flat row-major copy of the data."""
        return self.data.ravel().copy()

    def item(self) -> float:
        if self.size != 1:
            raise DomainError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg})"

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def tanh(self):
        return tanh(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> np.ndarray:
    """Raw values of ``x`` with any gradient link severed."""
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def record_op(
    value: np.ndarray,
    inputs: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
) -> Tensor:
    """Wrap ``value`` as the output of a primitive and put it on the tape.

    ``backward_fn`` maps the upstream gradient to one gradient per input
    (``None`` for inputs that need none).
    """
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(value, dtype=np.float64)
    out.grad = None
    tape = active_tape()
    out.requires_grad = tape is not None and any(t.requires_grad for t in inputs)
    if out.requires_grad:
        tape.nodes.append(_Node(out, tuple(inputs), backward_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


# primitives ----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record_op(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record_op(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record_op(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record_op(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DomainError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DomainError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    return record_op(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return record_op(y, (a,), lambda g: (g * (1.0 - y * y),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return record_op(y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return record_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    y = a.data.sum(axis=axis, keepdims=keepdims)

    def grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return record_op(y, (a,), grad)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return record_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return record_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, key) -> Tensor:
    a = as_tensor(a)

    def grad(g):
        out = np.zeros_like(a.data)
        np.add.at(out, key, g)
        return (out,)

    return record_op(a.data[key], (a,), grad)


def take_rows(a, index: np.ndarray) -> Tensor:
    """Per-row gather: ``out[b, m] = a[b, index[b, m]]`` for 2-D ``a``."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    rows = np.arange(index.shape[0])[:, None]

    def grad(g):
        out = np.zeros_like(a.data)
        np.add.at(out, (rows, index), g)
        return (out,)

    return record_op(a.data[rows, index], (a,), grad)


def log_softmax(a, tau: float = 1.0) -> Tensor:
    """Row-wise ``log softmax(a / tau)`` over the last axis."""
    _check_tau(tau)
    a = as_tensor(a)
    z = a.data / tau
    z = z - z.max(axis=-1, keepdims=True)
    y = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(y)

    def grad(g):
        return ((g - p * g.sum(axis=-1, keepdims=True)) / tau,)

    return record_op(y, (a,), grad)


def softmax(a, tau: float = 1.0) -> Tensor:
    return exp(log_softmax(a, tau))


# reverse pass ----------------------------------------------------------------

def backward(loss: Tensor, tape: GradTape) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every requires-grad tensor."""
    if loss.size != 1:
        raise DomainError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    seen: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        if node.output.requires_grad and node.output is not loss:
            _accumulate(node.output, g)
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            seen[key] = inp
            grads[key] = grads[key] + gi if key in grads else gi
    # whatever remains belongs to leaves (tensors no node produced)
    for key, g in grads.items():
        t = seen[key]
        if t.requires_grad:
            _accumulate(t, g)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=np.float64).reshape(t.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


def finite_difference_grad(
    f: Callable[[np.ndarray], float], x, eps: float = 1e-6
) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``."""
    if not 1e-7 <= eps <= 1e-3:
        raise DomainError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    x0 = constant(x).copy()
    flat = x0.reshape(-1)
    out = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x0.copy()))
        flat[i] = orig - eps
        fm = float(f(x0.copy()))
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * eps)
    return out.reshape(x0.shape)


def max_relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a, n = constant(analytic), constant(numeric)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


# probability primitives on plain vectors -----------------------------------------

def _check_tau(tau: float) -> None:
    if not tau > 0 or not math.isfinite(tau):
        raise DomainError(f"temperature must be positive, got {tau}")


def temp_softmax(logits, tau: float = 1.0) -> np.ndarray:
    """``exp(z / tau) / sum(exp(z / tau))`` with max subtraction."""
    _check_tau(tau)
    z = np.asarray(constant(logits), dtype=np.float64)
    if z.size == 0:
        raise DomainError("softmax of an empty vector")
    z = z / tau
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs, target_index: int) -> float:
    p = np.asarray(constant(probs)).reshape(-1)
    if not 0 <= target_index < p.size:
        raise DomainError(f"target index {target_index} out of range for K={p.size}")
    return float(-np.log(max(p[target_index], PROB_FLOOR)))


def kl_divergence(p, q) -> float:
    """KL(p || q) with ``0 log 0 = 0`` and ``q`` floored at 1e-12."""
    p = np.asarray(constant(p)).reshape(-1)
    q = np.asarray(constant(q)).reshape(-1)
    if p.shape != q.shape:
        raise DomainError(f"length mismatch {p.size} vs {q.size}")
    mask = p > 0
    qm = np.maximum(q[mask], PROB_FLOOR)
    return float(max(np.sum(p[mask] * (np.log(p[mask]) - np.log(qm))), 0.0))


def entropy(p) -> float:
    p = np.asarray(constant(p)).reshape(-1)
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))
