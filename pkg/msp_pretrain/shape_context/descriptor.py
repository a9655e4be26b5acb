"""Multi-scale binary 3D shape-context descriptors.

Every neighbor inside the open ball of radius ``R`` around a center falls
into one (polar, azimuth, radial) bin; a bin is set when at least one
neighbor lands in it. The polar angle is measured from +z, the azimuth
from +x in [0, 2π), and radial bins are log-warped by ``xi``.
"""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import math
import os
import typing as t
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from msp_pretrain.exceptions import InvalidSpecError
from msp_pretrain.fileio import atomic_writing

DEFAULT_RADIUS = 0.15
DEFAULT_XI = 0.3

# Widen kd-tree ball queries so the tree never drops a point the exact
# distance filter would keep.
_CANDIDATE_SLACK = 1e-9

# Offsets binned per vectorized chunk in exhaustive search.
_CHUNK_ELEMENTS = 1 << 22

NEIGHBOR_SEARCH = ("kdtree", "exhaustive")


@dataclass(frozen=True)
class ScPartition:
    """Sector counts of one scale, plus its ball radius and radial warp."""

    n_theta: int
    n_phi: int
    n_rad: int
    radius: float = DEFAULT_RADIUS
    xi: float = DEFAULT_XI

    def __post_init__(self) -> None:
        if min(self.n_theta, self.n_phi, self.n_rad) < 1:
            msg = f"sector counts must be >= 1, got {self.counts}"
            raise InvalidSpecError(msg)
        if not self.radius > 0 or not self.xi > 0:
            msg = f"R and xi must be > 0, got R={self.radius}, xi={self.xi}"
            raise InvalidSpecError(msg)

    @property
    def counts(self) -> tuple[int, int, int]:
        return (self.n_theta, self.n_phi, self.n_rad)

    @property
    def size(self) -> int:
        return self.n_theta * self.n_phi * self.n_rad

    def flat_index(self, b_theta: int, b_phi: int, b_rad: int) -> int:
        return (b_theta * self.n_phi + b_phi) * self.n_rad + b_rad

    def __str__(self) -> str:
        return f"{self.n_theta},{self.n_phi},{self.n_rad},{self.radius:g},{self.xi:g}"


DEFAULT_PARTITIONS = (ScPartition(2, 4, 3), ScPartition(4, 8, 5))


def descriptor_length(parts: t.Sequence[ScPartition]) -> int:
    return sum(p.size for p in parts)


def parse_partitions(
    text: str, radius: float = DEFAULT_RADIUS, xi: float = DEFAULT_XI
) -> tuple[ScPartition, ...]:
    """Parse ``"2,4,3; 4,8,5"``; an entry may carry its own ``R,xi`` as 4th and 5th value."""
    parts = []
    for entry in text.split(";"):
        if not entry.strip():
            continue
        tokens = [tok.strip() for tok in entry.split(",")]
        if len(tokens) not in (3, 5):
            msg = f"partition {entry.strip()!r} must be 'ntheta,nphi,nrad' or 'ntheta,nphi,nrad,R,xi'"
            raise InvalidSpecError(msg)
        try:
            counts = [int(tok) for tok in tokens[:3]]
            r, x = (float(tokens[3]), float(tokens[4])) if len(tokens) == 5 else (radius, xi)
        except ValueError:
            msg = f"partition {entry.strip()!r} is not numeric"
            raise InvalidSpecError(msg) from None
        parts.append(ScPartition(*counts, radius=r, xi=x))
    if not parts:
        msg = "at least one shape-context partition is required"
        raise InvalidSpecError(msg)
    return tuple(parts)


def format_partitions(parts: t.Sequence[ScPartition]) -> str:
    return "; ".join(str(p) for p in parts)


def bin_indices(offsets: np.ndarray, part: ScPartition) -> np.ndarray:
    """Flat bin of each offset row, or -1 for the center itself and for d >= R."""
    offsets = np.asarray(offsets, dtype=np.float64).reshape(-1, 3)
    x, y, z = offsets[:, 0], offsets[:, 1], offsets[:, 2]
    d = np.sqrt(x * x + y * y + z * z)
    inside = (d > 0.0) & (d < part.radius)

    safe_d = np.where(inside, d, 1.0)
    theta = np.arccos(np.clip(z / safe_d, -1.0, 1.0))
    on_axis = (x == 0.0) & (y == 0.0)
    phi = np.where(on_axis, 0.0, np.mod(np.arctan2(y, x), 2.0 * math.pi))
    rad = (np.log(safe_d + part.xi) - math.log(part.xi)) / (
        math.log(part.radius + part.xi) - math.log(part.xi)
    )

    b_theta = np.minimum(np.floor(theta / math.pi * part.n_theta), part.n_theta - 1)
    b_phi = np.minimum(np.floor(phi / (2.0 * math.pi) * part.n_phi), part.n_phi - 1)
    b_rad = np.minimum(np.floor(rad * part.n_rad), part.n_rad - 1)
    flat = (b_theta.astype(np.int64) * part.n_phi + b_phi.astype(np.int64)) * part.n_rad
    flat += b_rad.astype(np.int64)
    return np.where(inside, flat, -1)


def bin_index(offset: t.Sequence[float], part: ScPartition) -> tuple[int, int, int] | None:
    """The (b_theta, b_phi, b_rad) bin of a single offset, or None when excluded."""
    flat = int(bin_indices(np.asarray(offset, dtype=np.float64)[None, :], part)[0])
    if flat < 0:
        return None
    b_rad = flat % part.n_rad
    b_phi = (flat // part.n_rad) % part.n_phi
    b_theta = flat // (part.n_rad * part.n_phi)
    return (b_theta, b_phi, b_rad)


@dataclass(frozen=True, eq=False)
class ScDescriptor:
    """Occupancy bits of one center, concatenated over ``partitions``."""

    bits: np.ndarray
    partitions: tuple[ScPartition, ...]

    def __len__(self) -> int:
        return int(self.bits.size)

    @property
    def n_occupied(self) -> int:
        return int(self.bits.sum())


def _pairs_kdtree(tree: cKDTree, centers: np.ndarray, radius: float):
    candidates = tree.query_ball_point(centers, r=radius * (1.0 + _CANDIDATE_SLACK))
    lengths = np.fromiter((len(c) for c in candidates), dtype=np.int64, count=len(candidates))
    if lengths.sum() == 0:
        yield np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        return
    rows = np.repeat(np.arange(len(centers)), lengths)
    cols = np.concatenate([np.asarray(c, dtype=np.int64) for c in candidates if len(c)])
    yield rows, cols


def _pairs_exhaustive(positions: np.ndarray, n_centers: int):
    n = positions.shape[0]
    step = max(1, _CHUNK_ELEMENTS // max(n, 1))
    for start in range(0, n_centers, step):
        stop = min(start + step, n_centers)
        rows = np.repeat(np.arange(start, stop), n)
        cols = np.tile(np.arange(n), stop - start)
        yield rows, cols


def compute_multiscale_sc(
    centers: np.ndarray,
    positions: np.ndarray,
    parts: t.Sequence[ScPartition] = DEFAULT_PARTITIONS,
    neighbor_search: str = "kdtree",
    tree: cKDTree | None = None,
) -> np.ndarray:
    """Descriptor rows, one per center, as a ``uint8`` matrix of 0/1.

    ``neighbor_search="kdtree"`` gathers candidates through a spatial index
    (``tree`` may be passed in to share it across calls) and bins them with
    the same arithmetic as ``"exhaustive"``, so both give identical bits.
    """
    parts = tuple(parts)
    if not parts:
        msg = "at least one shape-context partition is required"
        raise InvalidSpecError(msg)
    if neighbor_search not in NEIGHBOR_SEARCH:
        msg = f"unknown neighbor search {neighbor_search!r}; expected one of {NEIGHBOR_SEARCH}"
        raise ValueError(msg)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    bits = np.zeros((centers.shape[0], descriptor_length(parts)), dtype=np.uint8)
    if centers.shape[0] == 0 or positions.shape[0] == 0:
        return bits
    if neighbor_search == "kdtree" and tree is None:
        tree = cKDTree(positions)

    offset = 0
    for part in parts:
        if neighbor_search == "kdtree":
            pairs = _pairs_kdtree(tree, centers, part.radius)
        else:
            pairs = _pairs_exhaustive(positions, centers.shape[0])
        for rows, cols in pairs:
            flat = bin_indices(positions[cols] - centers[rows], part)
            keep = flat >= 0
            bits[rows[keep], offset + flat[keep]] = 1
        offset += part.size
    return bits


def compute_shape_context(
    center: t.Sequence[float], positions: np.ndarray, part: ScPartition
) -> ScDescriptor:
    """Single-scale descriptor of one center."""
    bits = compute_multiscale_sc(
        np.asarray(center, dtype=np.float64)[None, :], positions, (part,), neighbor_search="exhaustive"
    )[0]
    return ScDescriptor(bits=bits, partitions=(part,))


def write_descriptor_dump(
    path: str | os.PathLike[str], centers: np.ndarray, bits: np.ndarray, log=None
) -> None:
    """One line per center: its coordinates, then every bit as ``0``/``1``."""
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    if bits.shape[0] != centers.shape[0]:
        msg = f"{bits.shape[0]} descriptor rows for {centers.shape[0]} centers"
        raise ValueError(msg)
    with atomic_writing(os.fspath(path), log=log) as f:
        for center, row in zip(centers, bits):
            coords = " ".join(f"{c:.9f}" for c in center)
            f.write(coords + " " + " ".join("1" if b else "0" for b in row) + "\n")
