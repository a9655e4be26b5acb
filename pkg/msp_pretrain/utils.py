"""Small helpers shared by the msp_pretrain sub-packages"""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import math
import typing as t

import numpy as np


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return a random generator for the stream ``(seed, *keys)``.

    Streams with different keys are statistically independent, and the
    same key tuple always reproduces the same stream, on any platform.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) & 0xFFFFFFFFFFFFFFFF for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *keys: int) -> int:
    """Like :func:`derive_rng`, but return a plain 63-bit integer seed."""
    return int(derive_rng(seed, *keys).integers(0, 2**63 - 1))


def round_half_up(value: float) -> int:
    """Round to the nearest integer, halves away from zero for positives."""
    return int(math.floor(value + 0.5))


def frozen_array(values: t.Any, dtype: t.Any = None) -> np.ndarray:
    """Copy ``values`` into a new read-only array."""
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr
