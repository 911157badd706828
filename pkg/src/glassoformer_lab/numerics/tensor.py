"""Dense float64 tensors and the reverse-mode tape that differentiates them."""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np


class NumericalError(FloatingPointError):
    """Raised when an operation produces NaN/Inf or a loss diverges."""


class ShapeError(ValueError):
    pass


class Tensor:
    """Row-major float64 array with an optional gradient slot.

    ``grad`` is ``None`` until a backward pass writes to it; it always has the
    same shape as ``data`` once present.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64, copy=True, order="C")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @classmethod
    def wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """Build a tensor around ``arr`` without copying (internal use)."""
        t = cls.__new__(cls)
        t.data = np.ascontiguousarray(arr, dtype=np.float64)
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # Operator sugar kept deliberately small; see ops for the full set.
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops

        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    @property
    def T(self) -> "Tensor":
        from . import ops

        return ops.transpose(self)


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class _Record:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward: BackwardFn):
        self.out = out
        self.inputs = inputs
        self.backward = backward


_local = threading.local()


def _stack() -> list["Tape"]:
    st = getattr(_local, "stack", None)
    if st is None:
        st = []
        _local.stack = st
    return st


def active_tape() -> "Tape | None":
    st = _stack()
    return st[-1] if st else None


class Tape:
    """Ordered log of differentiable primitive calls.

    Use as a context manager; ops executed inside the ``with`` block whose
    inputs require gradients are recorded here.  Tapes are thread-local.
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        st = _stack()
        if not st or st[-1] is not self:
            raise RuntimeError("tape stack corrupted")
        st.pop()

    def __len__(self) -> int:
        return len(self.records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: BackwardFn) -> None:
        self.records.append(_Record(out, inputs, backward))

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(tensor) into ``.grad`` of every tensor on ``tape``.

    Leaf gradients accumulate across calls; the caller zeroes them between
    optimisation steps.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor that requires grad")
    if not any(r.out is loss for r in reversed(tape.records)):
        raise ValueError("loss was not produced on this tape")
    # Intermediate tensors live only on this tape, so their slots start clean.
    for rec in tape.records:
        rec.out.grad = None
    loss.grad = np.ones_like(loss.data)
    for rec in reversed(tape.records):
        g_out = rec.out.grad
        if g_out is None:
            continue
        grads = rec.backward(g_out)
        for inp, g in zip(rec.inputs, grads):
            if g is None or not inp.requires_grad:
                continue
            inp._accumulate(g)


def record_op(out_arr: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    """Wrap an op result, enforce finiteness and log it on the active tape."""
    if not np.isfinite(out_arr).all():
        raise NumericalError("non-finite value produced by tensor op")
    needs = any(t.requires_grad for t in inputs)
    tape = active_tape() if needs else None
    out = Tensor.wrap(out_arr, requires_grad=tape is not None)
    if tape is not None:
        tape.record(out, inputs, backward_fn)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
