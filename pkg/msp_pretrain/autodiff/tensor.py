"""Dense tensors and a recording tape for reverse-mode differentiation."""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import threading
import typing as t
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from msp_pretrain.exceptions import ContractError

DEFAULT_DTYPE = np.float64
DTYPES = {"float64": np.float64, "float32": np.float32}

BackwardFn = t.Callable[[np.ndarray], t.Sequence["np.ndarray | None"]]


class Tensor:
    """A dense numpy buffer, optionally tracked for gradients.

    Leaf tensors with ``requires_grad`` accumulate into ``grad`` when
    :func:`backward` runs over a tape they took part in.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else DEFAULT_DTYPE
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            msg = f"item() needs a single element, tensor has shape {self.shape}"
            raise ContractError(msg)
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        flag = ", requires_grad" if self.requires_grad else ""
        return f"<Tensor{label} shape={self.shape} dtype={self.dtype}{flag}>"

    # operators route through the recorded ops
    def __add__(self, other):
        from .ops import add

        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from .ops import sub

        return sub(self, other)

    def __rsub__(self, other):
        from .ops import sub

        return sub(other, self)

    def __mul__(self, other):
        from .ops import mul, scale

        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: float):
        from .ops import scale

        return scale(self, 1.0 / float(other))

    def __neg__(self):
        from .ops import scale

        return scale(self, -1.0)

    def __matmul__(self, other):
        from .ops import matmul

        return matmul(self, other)


def as_tensor(value, like: Tensor | None = None) -> Tensor:
    """Wrap ``value`` as a constant tensor, in ``like``'s dtype when given."""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype or DEFAULT_DTYPE))


@dataclass
class OpRecord:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Ordered record of the differentiable ops run while it is active.

    Use as a context manager; each thread has its own active tape. Ops with
    no gradient-tracked input are not recorded.
    """

    def __init__(self) -> None:
        self.records: list[OpRecord] = []

    def __len__(self) -> int:
        return len(self.records)

    def __enter__(self) -> Tape:
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if not stack or stack[-1] is not self:
            msg = "tapes must be exited in reverse order of entry"
            raise ContractError(msg)
        stack.pop()

    def record(self, op: str, inputs: t.Sequence[Tensor], output: Tensor, backward: BackwardFn) -> None:
        self.records.append(OpRecord(op, tuple(inputs), output, backward))

    def leaves(self) -> list[Tensor]:
        """Gradient-tracked tensors consumed on this tape but not produced by it."""
        produced = {id(rec.output) for rec in self.records}
        seen: dict[int, Tensor] = {}
        for rec in self.records:
            for x in rec.inputs:
                if x.requires_grad and id(x) not in produced:
                    seen.setdefault(id(x), x)
        return list(seen.values())


_local = threading.local()


def _stack() -> list[Tape | None]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


@contextmanager
def no_grad():
    """Run ops without recording, even inside an active tape."""
    stack = _stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


def record_op(
    op: str, inputs: t.Sequence[Tensor], out_data: np.ndarray, backward_fn: BackwardFn
) -> Tensor:
    """Wrap ``out_data`` as the output of ``op`` and record it on the active tape.

    ``backward_fn`` maps the output gradient to one gradient (or None) per
    input. The output requires grad iff some input does and a tape is active.
    """
    tape = active_tape()
    tracked = tape is not None and any(x.requires_grad for x in inputs)
    out = Tensor(out_data, requires_grad=tracked)
    if tracked:
        tape.record(op, inputs, out, backward_fn)
    return out


def backward(tape: Tape, loss: Tensor, grad_scale: float = 1.0) -> None:
    """Propagate d(grad_scale * loss) back through ``tape``.

    Leaf tensors accumulate into ``.grad``; leaves on the tape that the loss
    does not reach get a zero gradient when they had none.
    """
    if loss.size != 1:
        msg = f"backward needs a scalar loss, got shape {loss.shape}"
        raise ContractError(msg)
    if not loss.requires_grad:
        msg = "loss does not depend on any gradient-tracked tensor"
        raise ContractError(msg)

    grads: dict[int, np.ndarray] = {id(loss): np.full(loss.shape, grad_scale, dtype=loss.dtype)}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        for x, gx in zip(rec.inputs, rec.backward(g)):
            if gx is None or not x.requires_grad:
                continue
            if gx.shape != x.shape:
                msg = f"{rec.op}: backward produced {gx.shape} for input {x.shape}"
                raise ContractError(msg)
            prev = grads.get(id(x))
            grads[id(x)] = gx if prev is None else prev + gx

    for leaf in tape.leaves():
        g = grads.get(id(leaf))
        if g is None:
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)
        elif leaf.grad is None:
            leaf.grad = np.array(g, dtype=leaf.dtype)
        else:
            leaf.grad = leaf.grad + g
