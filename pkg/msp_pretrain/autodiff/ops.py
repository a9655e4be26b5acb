"""Differentiable primitives over :class:`Tensor`.

Binary ops broadcast only a scalar operand or a trailing row (a 1-d
operand whose length is the other operand's last dimension); any other
shape pairing raises :class:`ShapeError`.
"""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import typing as t

import numpy as np

from msp_pretrain.exceptions import ShapeError

from .tensor import Tensor, as_tensor, record_op


def _broadcast_kind(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape:
        return
    for x, y in ((a, b), (b, a)):
        if y.size == 1 and y.ndim <= 1:
            return
        if y.ndim == 1 and x.ndim >= 1 and x.shape[-1] == y.shape[0]:
            return
    raise ShapeError(op, a.shape, b.shape)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if int(np.prod(shape)) == 1:
        return np.asarray(g.sum()).reshape(shape)
    return g.reshape(-1, shape[0]).sum(axis=0)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_kind("add", a, b)
    return record_op(
        "add",
        (a, b),
        a.data + b.data,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_kind("sub", a, b)
    return record_op(
        "sub",
        (a, b),
        a.data - b.data,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_kind("mul", a, b)
    return record_op(
        "mul",
        (a, b),
        a.data * b.data,
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return record_op("scale", (x,), x.data * c, lambda g: (g * c,))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    z = x.data
    e = np.exp(-np.abs(z))
    y = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(z.dtype, copy=False)
    return record_op("sigmoid", (x,), y, lambda g: (g * y * (1.0 - y),))


def log(x: Tensor) -> Tensor:
    return record_op("log", (x,), np.log(x.data), lambda g: (g / x.data,))


def relu(x: Tensor) -> Tensor:
    on = x.data > 0
    return record_op("relu", (x,), np.where(on, x.data, 0.0).astype(x.dtype, copy=False), lambda g: (g * on,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return record_op("tanh", (x,), y, lambda g: (g * (1.0 - y * y),))


_ELEMENTWISE: dict[str, t.Callable[..., Tensor]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "sigmoid": sigmoid,
    "log": log,
    "relu": relu,
    "tanh": tanh,
}


def elementwise(op: str, *operands) -> Tensor:
    """Apply the named elementwise op; ``scale`` takes ``(tensor, factor)``."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        msg = f"unknown elementwise op {op!r}; expected one of {sorted(_ELEMENTWISE)}"
        raise ValueError(msg) from None
    return fn(*operands)


def matmul(a, b) -> Tensor:
    """``a @ b`` for ``a`` of shape ``(..., m, k)`` and a 2-d ``b`` of shape ``(k, n)``."""
    a, b = _pair(a, b)
    if a.ndim < 1 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    k, n = b.shape

    def _backward(g):
        da = g @ b.data.T
        db = a.data.reshape(-1, k).T @ g.reshape(-1, n)
        return da, db

    return record_op("matmul", (a, b), a.data @ b.data, _backward)


def einsum(subscripts: str, a, b) -> Tensor:
    """Two-operand ``np.einsum`` without repeated indices inside one operand."""
    a, b = _pair(a, b)
    inputs, out = subscripts.replace(" ", "").split("->")
    in_a, in_b = inputs.split(",")
    try:
        data = np.einsum(subscripts, a.data, b.data)
    except ValueError:
        raise ShapeError(f"einsum {subscripts}", a.shape, b.shape) from None

    def _backward(g):
        da = np.einsum(f"{out},{in_b}->{in_a}", g, b.data)
        db = np.einsum(f"{out},{in_a}->{in_b}", g, a.data)
        return da, db

    return record_op("einsum", (a, b), data, _backward)


def softmax_lastdim(x: Tensor) -> Tensor:
    if x.ndim < 1 or x.shape[-1] < 1:
        raise ShapeError("softmax", x.shape)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def _backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return record_op("softmax", (x,), y, _backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last dimension with biased variance, then ``* gain + bias``."""
    c = x.shape[-1] if x.ndim else 0
    if c < 1 or gain.shape != (c,) or bias.shape != (c,):
        raise ShapeError("layer_norm", x.shape, gain.shape, bias.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data

    def _backward(g):
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        dgain = (g * xhat).reshape(-1, c).sum(axis=0)
        dbias = g.reshape(-1, c).sum(axis=0)
        return dx, dgain, dbias

    return record_op("layer_norm", (x, gain, bias), out, _backward)


def reshape(x: Tensor, shape: t.Sequence[int]) -> Tensor:
    try:
        data = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError("reshape", x.shape, tuple(shape)) from None
    return record_op("reshape", (x,), data, lambda g: (g.reshape(x.shape),))


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Rows of the 2-d ``x`` at ``index``; output shape is ``index.shape + (C,)``."""
    index = np.asarray(index, dtype=np.int64)
    if x.ndim != 2:
        raise ShapeError("gather_rows", x.shape, index.shape)

    def _backward(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, index.reshape(-1), g.reshape(-1, x.shape[1]))
        return (dx,)

    return record_op("gather_rows", (x,), x.data[index], _backward)


def concat_rows(parts: t.Sequence[Tensor]) -> Tensor:
    """Stack 2-d tensors of equal width along the first axis."""
    parts = tuple(parts)
    widths = {p.shape[1:] for p in parts}
    if not parts or len(widths) != 1 or any(p.ndim != 2 for p in parts):
        raise ShapeError("concat_rows", *(p.shape for p in parts))
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def _backward(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return record_op("concat_rows", parts, np.concatenate([p.data for p in parts], axis=0), _backward)


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    """``x[..., start:stop]``."""
    if not 0 <= start <= stop <= x.shape[-1]:
        raise ShapeError(f"slice_last[{start}:{stop}]", x.shape)

    def _backward(g):
        dx = np.zeros_like(x.data)
        dx[..., start:stop] = g
        return (dx,)

    return record_op("slice_last", (x,), x.data[..., start:stop], _backward)


def sum_all(x: Tensor) -> Tensor:
    return record_op(
        "sum", (x,), np.asarray(x.data.sum(), dtype=x.dtype), lambda g: (np.broadcast_to(g, x.shape).copy(),)
    )


def mean_all(x: Tensor) -> Tensor:
    n = max(x.size, 1)
    return record_op(
        "mean",
        (x,),
        np.asarray(x.data.sum() / n, dtype=x.dtype),
        lambda g: (np.broadcast_to(g / n, x.shape).copy(),),
    )


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight (+ bias)`` with ``weight`` stored as ``(in, out)``."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)
