"""Dense float64 tensors with a reverse-mode gradient tape.

Every primitive that touches a tensor with ``requires_grad`` set appends a
record to the calling thread's tape. :func:`backward` replays that tape in
reverse order. Tapes are thread-local, so independent workers can record and
replay concurrently without sharing state.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class Tensor:
    """A float64 array plus an optional gradient buffer."""

    __slots__ = ("values", "requires_grad", "grad", "__weakref__")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.array(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.values.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.values!r}{flag})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class _Record:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output: Tensor, inputs: tuple[Tensor, ...], backward: Callable):
        self.output = output
        self.inputs = inputs
        self.backward = backward


class GradientTape:
    """Ordered record of primitive operations for one worker."""

    def __init__(self):
        self.records: list[_Record] = []
        self.enabled = True

    def __len__(self) -> int:
        return len(self.records)

    def clear(self) -> None:
        self.records.clear()


_local = threading.local()


def current_tape() -> GradientTape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = GradientTape()
    return tape


@contextmanager
def no_grad():
    """Suspend recording on this thread's tape."""
    tape = current_tape()
    previous = tape.enabled
    tape.enabled = False
    try:
        yield
    finally:
        tape.enabled = previous


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
    tape = current_tape()
    if tape.enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.records.append(_Record(out, inputs, backward))
    return out


def _check_elementwise(name: str, a: Tensor, b: Tensor) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb or sa == () or sb == ():
        return
    # leading batch axis only: (B, ...) with (...)
    if len(sa) == len(sb) + 1 and sa[1:] == sb:
        return
    if len(sb) == len(sa) + 1 and sb[1:] == sa:
        return
    raise ShapeError(f"{name}: incompatible shapes {sa} and {sb}")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    return grad.sum(axis=0)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("add", a, b)
    out = Tensor(a.values + b.values)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("sub", a, b)
    out = Tensor(a.values - b.values)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("mul", a, b)
    out = Tensor(a.values * b.values)

    def backward(g):
        return _unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)

    return _record(out, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(a.values @ b.values)

    def backward(g):
        ga = g @ b.values.T if a.requires_grad else None
        gb = a.values.T @ g if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.values > 0  # subgradient 0 at the kink
    out = Tensor(np.where(mask, a.values, 0.0))

    def backward(g):
        return (g * mask,)

    return _record(out, (a,), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.exp(a.values))

    def backward(g):
        return (g * out.values,)

    return _record(out, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.log(a.values))

    def backward(g):
        return (g / a.values,)

    return _record(out, (a,), backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = Tensor(shifted - lse)

    def backward(g):
        p = np.exp(out.values)
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _record(out, (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = Tensor(e / e.sum(axis=axis, keepdims=True))

    def backward(g):
        p = out.values
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _record(out, (a,), backward)


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = Tensor(a.values.sum(axis=axis))

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _record(out, (a,), backward)


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    count = a.values.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / count)


def l2_norm(a) -> Tensor:
    """Euclidean norm over all entries."""
    a = as_tensor(a)
    norm = float(np.sqrt((a.values**2).sum()))
    out = Tensor(norm)

    def backward(g):
        if norm == 0.0:
            return (np.zeros(a.shape),)
        return (g * a.values / norm,)

    return _record(out, (a,), backward)


def amax(a, axis: int = -1) -> Tensor:
    """Max along ``axis``; the gradient goes to the first maximizing entry."""
    a = as_tensor(a)
    idx = a.values.argmax(axis=axis)
    out = Tensor(np.take_along_axis(a.values, np.expand_dims(idx, axis), axis).squeeze(axis))

    def backward(g):
        grad = np.zeros(a.shape)
        np.put_along_axis(grad, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return (grad,)

    return _record(out, (a,), backward)


def take_rows(a, index: Sequence[int]) -> Tensor:
    """Pick ``a[i, index[i]]`` for every row ``i`` of a 2-D tensor."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if a.values.ndim != 2 or index.shape != (a.shape[0],):
        raise ShapeError(f"take_rows: index shape {index.shape} does not match {a.shape}")
    rows = np.arange(a.shape[0])
    out = Tensor(a.values[rows, index])

    def backward(g):
        grad = np.zeros(a.shape)
        grad[rows, index] = g
        return (grad,)

    return _record(out, (a,), backward)


def _replay(loss: Tensor) -> dict[int, np.ndarray]:
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = current_tape()
    if not tape.records:
        raise RuntimeError("backward called on an empty tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        for t, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    tape.clear()
    return grads


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from ``loss``.

    Gradients accumulate into existing ``.grad`` buffers. The tape is cleared
    afterwards.
    """
    leaves = {}
    for rec in current_tape().records:
        for t in rec.inputs:
            if t.requires_grad:
                leaves[id(t)] = t
    grads = _replay(loss)
    for key, g in grads.items():
        t = leaves.get(key)
        if t is None:
            continue
        g = np.asarray(g, dtype=np.float64).reshape(t.shape)
        t.grad = g.copy() if t.grad is None else t.grad + g


def grad(loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of ``loss`` with respect to ``wrt`` without touching ``.grad``."""
    grads = _replay(loss)
    return [np.asarray(grads.get(id(t), np.zeros(t.shape))).reshape(t.shape) for t in wrt]
