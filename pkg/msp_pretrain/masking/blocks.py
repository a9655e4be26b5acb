"""Block-grid masking: drop every point inside a random subset of non-empty cubes."""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import os
import typing as t
from dataclasses import dataclass

import numpy as np

from msp_pretrain.exceptions import DegenerateMaskError, InvalidSpecError
from msp_pretrain.fileio import atomic_writing
from msp_pretrain.scene import PointCloud
from msp_pretrain.utils import derive_rng, frozen_array, round_half_up

BlockIndex = t.Tuple[int, int, int]


@dataclass(frozen=True)
class MaskSpec:
    """Masking ratio ``r``, block side ``w`` (meters) and seed."""

    ratio: float = 0.6
    block_size: float = 0.3
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.ratio <= 1.0:
            msg = f"mask ratio must lie in [0, 1], got {self.ratio}"
            raise InvalidSpecError(msg)
        if not self.block_size > 0.0:
            msg = f"block size must be > 0, got {self.block_size}"
            raise InvalidSpecError(msg)


@dataclass(frozen=True, eq=False)
class BlockGrid:
    """Non-empty blocks of side ``block_size`` anchored at ``origin``.

    ``occupancy`` maps a block index triple to the sorted point indices inside
    it; keys iterate in lexicographic order.
    """

    origin: np.ndarray
    block_size: float
    occupancy: dict[BlockIndex, np.ndarray]
    point_blocks: np.ndarray

    @property
    def blocks(self) -> list[BlockIndex]:
        return list(self.occupancy)

    def __len__(self) -> int:
        return len(self.occupancy)


def block_indices(positions: np.ndarray, origin: np.ndarray, upper: np.ndarray, w: float) -> np.ndarray:
    """Integer block triple of every position.

    Points on the upper face of the last block along an axis clamp down into
    that block, so the aabb max corner never opens a new block.
    """
    n_per_axis = np.maximum(np.ceil((upper - origin) / w), 1).astype(np.int64)
    raw = np.floor((positions - origin) / w).astype(np.int64)
    return np.clip(raw, 0, n_per_axis - 1)


def build_block_grid(cloud: PointCloud, w: float) -> BlockGrid:
    """Group the points of ``cloud`` into cubes of side ``w`` anchored at aabb.min."""
    if not w > 0:
        msg = f"block size must be > 0, got {w}"
        raise InvalidSpecError(msg)
    origin = cloud.aabb.min
    point_blocks = block_indices(cloud.positions, origin, cloud.aabb.max, w)
    keys, inverse = np.unique(point_blocks, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(len(keys) + 1))
    occupancy = {
        (int(k[0]), int(k[1]), int(k[2])): frozen_array(order[bounds[i] : bounds[i + 1]])
        for i, k in enumerate(keys)
    }
    return BlockGrid(
        origin=frozen_array(origin),
        block_size=float(w),
        occupancy=occupancy,
        point_blocks=frozen_array(point_blocks),
    )


def select_masked_blocks(grid: BlockGrid, r: float, seed: int) -> frozenset[BlockIndex]:
    """Pick ``round(r * B)`` of the ``B`` non-empty blocks uniformly without replacement.

    A seeded Fisher-Yates prefix over the sorted block list.
    """
    blocks = sorted(grid.occupancy)
    n_blocks = len(blocks)
    count = min(round_half_up(r * n_blocks), n_blocks)
    rng = derive_rng(seed)
    for i in range(count):
        j = int(rng.integers(i, n_blocks))
        blocks[i], blocks[j] = blocks[j], blocks[i]
    return frozenset(blocks[:count])


@dataclass(frozen=True, eq=False)
class MaskResult:
    """Disjoint partition of point indices into masked and remaining sets."""

    masked_idx: np.ndarray
    remaining_idx: np.ndarray
    masked_blocks: frozenset[BlockIndex]
    grid: BlockGrid

    @property
    def n_points(self) -> int:
        return int(self.masked_idx.size + self.remaining_idx.size)

    @property
    def is_degenerate(self) -> bool:
        return self.remaining_idx.size == 0 or self.masked_idx.size == 0

    def masked_flags(self) -> np.ndarray:
        flags = np.zeros(self.n_points, dtype=bool)
        flags[self.masked_idx] = True
        return flags

    def write_csv(self, path: str | os.PathLike[str], log=None) -> None:
        """Dump the partition as ``index,masked`` rows."""
        flags = self.masked_flags()
        with atomic_writing(os.fspath(path), log=log) as f:
            f.write("index,masked\n")
            for i, masked in enumerate(flags):
                f.write(f"{i},{int(masked)}\n")


def mask_from_blocks(grid: BlockGrid, masked_blocks: frozenset[BlockIndex]) -> MaskResult:
    """Partition the grid's points by block membership."""
    n_points = grid.point_blocks.shape[0]
    flags = np.zeros(n_points, dtype=bool)
    for block in masked_blocks:
        flags[grid.occupancy[block]] = True
    return MaskResult(
        masked_idx=frozen_array(np.flatnonzero(flags)),
        remaining_idx=frozen_array(np.flatnonzero(~flags)),
        masked_blocks=frozenset(masked_blocks),
        grid=grid,
    )


def apply_mask(cloud: PointCloud, spec: MaskSpec, allow_degenerate: bool = False) -> MaskResult:
    """Mask ``cloud`` by dropping every point in ``round(r * B)`` random blocks.

    Raises :class:`DegenerateMaskError` when no point remains, unless
    ``allow_degenerate`` is set.
    """
    grid = build_block_grid(cloud, spec.block_size)
    result = mask_from_blocks(grid, select_masked_blocks(grid, spec.ratio, spec.seed))
    if result.remaining_idx.size == 0 and not allow_degenerate:
        msg = (
            f"mask removed all {len(cloud)} points "
            f"(r={spec.ratio}, w={spec.block_size}, {len(grid)} blocks)"
        )
        raise DegenerateMaskError(msg)
    return result
