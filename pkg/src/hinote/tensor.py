"""Tape-based reverse-mode differentiation over numpy arrays.

A :class:`DiffTensor` wraps an ``np.ndarray`` value and a gradient slot.  Ops
(see :mod:`hinote.ops`) append a record to the active :class:`Tape`; calling
:meth:`Tape.backward` replays the records in reverse creation order.

Outside a ``with Tape():`` block nothing is recorded, which is how inference
runs without bookkeeping.
"""
from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "DiffTensor",
    "Tape",
    "ShapeError",
    "NonFiniteError",
    "current_tape",
    "default_dtype",
    "precision",
    "debug_mode",
    "is_debug",
    "as_array",
]


class ShapeError(ValueError):
    """Operand shapes do not conform for an op."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        joined = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: shape mismatch {joined}")


class NonFiniteError(FloatingPointError):
    """Raised in debug mode when an op produces NaN or Inf."""

    def __init__(self, op: str, where: str = "forward"):
        self.op = op
        super().__init__(f"{op}: non-finite value in {where} pass")


_state = threading.local()


def _stack() -> list:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
        _state.dtype = np.dtype(np.float32)
        _state.debug = False
    return _state.tapes


def default_dtype() -> np.dtype:
    _stack()
    return _state.dtype


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the default float dtype (e.g. ``np.float64``)."""
    _stack()
    old = _state.dtype
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = old


@contextlib.contextmanager
def debug_mode(enabled: bool = True) -> Iterator[None]:
    """Check every op output (and backward gradient) for NaN/Inf."""
    _stack()
    old = _state.debug
    _state.debug = enabled
    try:
        yield
    finally:
        _state.debug = old


def is_debug() -> bool:
    _stack()
    return _state.debug


def current_tape() -> "Tape | None":
    tapes = _stack()
    return tapes[-1] if tapes else None


def as_array(x, dtype=None) -> np.ndarray:
    if isinstance(x, DiffTensor):
        return x.data
    return np.asarray(x, dtype=dtype or default_dtype())


class DiffTensor:
    """A value on (or off) the tape, with a zero-initialised gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, np.ndarray) and data.dtype.kind == "f":
            self.data = data
        else:
            self.data = np.asarray(data, dtype=default_dtype())
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.node_id: int | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "DiffTensor":
        return DiffTensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"DiffTensor(shape={self.shape}, dtype={self.dtype}{label})"

    # operator sugar, resolved lazily to avoid an import cycle
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        if np.isscalar(other):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


@dataclass
class _Record:
    op: str
    out: DiffTensor
    inputs: tuple
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered list of recorded ops.

    Use as a context manager; ops executed inside record onto this tape.
    """

    def __init__(self) -> None:
        self.records: list[_Record] = []
        self._next_id = 0

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        tapes = _stack()
        if tapes and tapes[-1] is self:
            tapes.pop()

    def __len__(self) -> int:
        return len(self.records)

    def record(self, op: str, out: DiffTensor, inputs: tuple, backward) -> None:
        out.node_id = self._next_id
        self._next_id += 1
        self.records.append(_Record(op, out, inputs, backward))

    def backward(self, loss: DiffTensor) -> None:
        """Accumulate d(loss)/d(node) into ``.grad`` of every requires-grad node."""
        if loss.data.size != 1:
            raise ShapeError("backward", loss.shape, ())
        if not loss.requires_grad:
            return
        check = is_debug()
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            rec.out.grad = g
            for inp, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not isinstance(inp, DiffTensor) or not inp.requires_grad:
                    continue
                if check and not np.all(np.isfinite(gi)):
                    raise NonFiniteError(rec.op, "backward")
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        # whatever remains belongs to leaves (parameters and inputs)
        for rec in self.records:
            for inp in rec.inputs:
                if isinstance(inp, DiffTensor) and id(inp) in grads:
                    g = grads.pop(id(inp))
                    inp.grad = inp.grad + g if inp.grad is not None else g
        for_loss = id(loss)
        if for_loss in grads:  # loss is itself a leaf
            loss.grad = loss.grad + grads.pop(for_loss)
