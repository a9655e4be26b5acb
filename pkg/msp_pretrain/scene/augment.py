"""Rigid augmentations and jitter for point clouds."""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from msp_pretrain.exceptions import InvalidSpecError
from msp_pretrain.utils import derive_rng

from .cloud import PointCloud

_AXES = {"x": 0, "y": 1}


@dataclass(frozen=True)
class AugmentSpec:
    """One concrete augmentation.

    ``rotation_z`` is an angle in radians, or ``None`` to draw it uniformly
    from [0, 2π) using ``seed``. Listed ``flip_axes`` are always applied.
    """

    jitter_sigma: float = 0.0
    flip_axes: frozenset[str] = frozenset()
    rotation_z: float | None = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.jitter_sigma < 0:
            msg = f"jitter_sigma must be >= 0, got {self.jitter_sigma}"
            raise InvalidSpecError(msg)
        axes = frozenset(self.flip_axes)
        if not axes <= set(_AXES):
            msg = f"flip axes must be a subset of {{x, y}}, got {sorted(axes)}"
            raise InvalidSpecError(msg)
        object.__setattr__(self, "flip_axes", axes)


def rotation_matrix_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def augment(cloud: PointCloud, spec: AugmentSpec) -> PointCloud:
    """Rotate about +z through the world origin, flip, then jitter.

    Colors and labels are carried through untouched.
    """
    rng = derive_rng(spec.seed)
    angle = spec.rotation_z
    if angle is None:
        angle = float(rng.uniform(0.0, 2.0 * math.pi))

    positions = cloud.positions
    if angle != 0.0:
        positions = positions @ rotation_matrix_z(angle).T
    if spec.flip_axes:
        positions = positions.copy()
        for axis in sorted(spec.flip_axes):
            positions[:, _AXES[axis]] = -positions[:, _AXES[axis]]
    if spec.jitter_sigma > 0:
        positions = positions + rng.normal(0.0, spec.jitter_sigma, size=positions.shape)
    if positions is cloud.positions:
        return cloud
    return cloud.with_positions(positions)
