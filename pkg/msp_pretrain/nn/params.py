"""Named parameter stores."""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import hashlib
import math
import typing as t
from collections.abc import Mapping

import numpy as np

from msp_pretrain.autodiff import DEFAULT_DTYPE, Tensor
from msp_pretrain.exceptions import ContractError


class ParamStore(Mapping):
    """Parameters by name, iterated in lexicographic name order."""

    def __init__(self, params: t.Mapping[str, Tensor] | None = None) -> None:
        self._params: dict[str, Tensor] = {}
        for name, tensor in (params or {}).items():
            self._insert(name, tensor)

    def _insert(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            msg = f"parameter {name!r} already exists"
            raise ContractError(msg)
        tensor.name = name
        self._params[name] = tensor
        return tensor

    def add(self, name: str, data: np.ndarray, requires_grad: bool = True) -> Tensor:
        return self._insert(name, Tensor(np.array(data, copy=True), requires_grad=requires_grad, name=name))

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            msg = f"no parameter named {name!r}"
            raise KeyError(msg) from None

    def __iter__(self) -> t.Iterator[str]:
        return iter(sorted(self._params))

    def __len__(self) -> int:
        return len(self._params)

    def __repr__(self) -> str:
        return f"<ParamStore {len(self)} tensors, {self.n_values} values>"

    @property
    def n_values(self) -> int:
        return sum(p.size for p in self._params.values())

    @property
    def dtype(self) -> np.dtype:
        dtypes = {p.dtype for p in self._params.values()}
        return dtypes.pop() if len(dtypes) == 1 else np.dtype(DEFAULT_DTYPE)

    def subset(self, prefix: str) -> ParamStore:
        """The tensors whose names start with ``prefix``, shared, not copied."""
        return ParamStore({n: p for n, p in self._params.items() if n.startswith(prefix)})

    def copy(self, requires_grad: bool | None = None, dtype=None) -> ParamStore:
        """Deep copy; gradients are not carried over."""
        out = ParamStore()
        for name in self:
            p = self._params[name]
            flag = p.requires_grad if requires_grad is None else requires_grad
            out.add(name, p.data.astype(dtype or p.dtype, copy=True), requires_grad=flag)
        return out

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {name: self._params[name].shape for name in self}

    def checksum(self) -> str:
        """sha256 over names, shapes, dtypes and raw little-endian buffers."""
        digest = hashlib.sha256()
        for name in self:
            p = self._params[name]
            digest.update(f"{name}:{p.dtype.str}:{p.shape};".encode())
            digest.update(np.ascontiguousarray(p.data, dtype=p.dtype.newbyteorder("<")).tobytes())
        return digest.hexdigest()


class ParamInit:
    """Seeded initializers writing into a store."""

    def __init__(self, store: ParamStore, rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> None:
        self.store = store
        self.rng = rng
        self.dtype = dtype

    def normal(self, name: str, shape: tuple[int, ...], std: float) -> Tensor:
        data = self.rng.normal(0.0, std, size=shape).astype(self.dtype)
        return self.store.add(name, data)

    def constant(self, name: str, shape: tuple[int, ...], value: float) -> Tensor:
        return self.store.add(name, np.full(shape, value, dtype=self.dtype))

    def linear(self, prefix: str, n_in: int, n_out: int, bias: bool = True) -> None:
        """``{prefix}.weight`` of shape (in, out) from N(0, 1/in), zero ``{prefix}.bias``."""
        self.normal(f"{prefix}.weight", (n_in, n_out), 1.0 / math.sqrt(n_in))
        if bias:
            self.constant(f"{prefix}.bias", (n_out,), 0.0)

    def layer_norm(self, prefix: str, width: int) -> None:
        self.constant(f"{prefix}.gain", (width,), 1.0)
        self.constant(f"{prefix}.bias", (width,), 0.0)
