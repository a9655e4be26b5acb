"""Exact k-nearest-neighbor search."""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import numpy as np

from msp_pretrain.exceptions import EmptyInputError

# Distances held per chunk of queries.
_CHUNK_ELEMENTS = 1 << 22


def knn_search(queries: np.ndarray, keys: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``min(k, len(keys))`` nearest keys of every query.

    Rows are ordered by ascending squared distance; equal distances keep
    ascending key order.
    """
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    keys = np.asarray(keys, dtype=np.float64).reshape(-1, 3)
    if keys.shape[0] == 0:
        msg = "k-NN search needs at least one key"
        raise EmptyInputError(msg)
    if k < 1:
        msg = f"k must be >= 1, got {k}"
        raise ValueError(msg)
    k_eff = min(int(k), keys.shape[0])
    out = np.empty((queries.shape[0], k_eff), dtype=np.int64)
    step = max(1, _CHUNK_ELEMENTS // keys.shape[0])
    for start in range(0, queries.shape[0], step):
        chunk = queries[start : start + step]
        diff = chunk[:, None, :] - keys[None, :, :]
        d2 = np.sum(diff * diff, axis=2)
        out[start : start + chunk.shape[0]] = np.argsort(d2, axis=1, kind="stable")[:, :k_eff]
    return out
