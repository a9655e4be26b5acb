"""Deterministic synthetic scenes built from labeled geometric primitives."""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from traitlets import Bool, Float, Integer, TraitError, validate
from traitlets.config import LoggingConfigurable

from msp_pretrain import PRIMITIVE_CLASSES
from msp_pretrain.exceptions import InvalidSpecError
from msp_pretrain.utils import derive_rng, derive_seed

from .cloud import PointCloud

PLANE, BOX, SPHERE, CYLINDER = range(len(PRIMITIVE_CLASSES))


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """What to generate. Counts are primitives per class."""

    planes: int = 1
    boxes: int = 1
    spheres: int = 1
    cylinders: int = 1
    points_per_primitive: int = 256
    extent: float = 2.0
    noise_sigma: float = 0.002
    with_colors: bool = True
    seed: int = 0

    @property
    def counts(self) -> tuple[int, int, int, int]:
        return (self.planes, self.boxes, self.spheres, self.cylinders)

    @property
    def n_primitives(self) -> int:
        return sum(self.counts)


@dataclass(frozen=True)
class Primitive:
    """An ideal primitive surface; ``params`` depend on ``label``.

    - plane: center (3), half sizes (2); horizontal patch at ``center[2]``
    - box: center (3), half sizes (3)
    - sphere: center (3), radius
    - cylinder: center of base (3), radius, height; vertical axis, lateral surface
    """

    label: int
    center: tuple[float, float, float]
    size: tuple[float, ...]

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Euclidean distance from each point to this ideal surface."""
        p = np.asarray(points, dtype=np.float64) - np.asarray(self.center)
        if self.label == PLANE:
            hx, hy = self.size
            outside = np.stack(
                [np.maximum(np.abs(p[:, 0]) - hx, 0.0), np.maximum(np.abs(p[:, 1]) - hy, 0.0)],
                axis=1,
            )
            return np.sqrt(p[:, 2] ** 2 + np.sum(outside**2, axis=1))
        if self.label == BOX:
            q = np.abs(p) - np.asarray(self.size)
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
            inside = np.minimum(q.max(axis=1), 0.0)
            return np.abs(outside + inside)
        if self.label == SPHERE:
            (radius,) = self.size
            return np.abs(np.linalg.norm(p, axis=1) - radius)
        radius, height = self.size
        radial = np.abs(np.hypot(p[:, 0], p[:, 1]) - radius)
        axial = np.maximum(np.maximum(-p[:, 2], p[:, 2] - height), 0.0)
        return np.hypot(radial, axial)


def _sample_surface(label: int, rng: np.random.Generator, n: int, extent: float):
    """Place one primitive of class ``label`` and draw ``n`` points on it."""
    if label == PLANE:
        half = rng.uniform(0.2, 0.5, size=2)
        center = rng.uniform([half[0], half[1], 0.0], [extent - half[0], extent - half[1], extent])
        uv = rng.uniform(-1.0, 1.0, size=(n, 2)) * half
        pts = np.column_stack([uv, np.zeros(n)]) + center
        return Primitive(label, tuple(center), tuple(half)), pts

    if label == BOX:
        half = rng.uniform(0.1, 0.3, size=3)
        center = rng.uniform(half, extent - half)
        # pick faces proportionally to their area
        areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]])
        axis = rng.choice(3, size=n, p=areas / areas.sum())
        sign = rng.choice([-1.0, 1.0], size=n)
        pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
        pts[np.arange(n), axis] = sign * half[axis]
        return Primitive(label, tuple(center), tuple(half)), pts + center

    if label == SPHERE:
        radius = float(rng.uniform(0.1, 0.3))
        center = rng.uniform(radius, extent - radius, size=3)
        direction = rng.normal(size=(n, 3))
        norms = np.linalg.norm(direction, axis=1, keepdims=True)
        direction = direction / np.where(norms == 0.0, 1.0, norms)
        direction[norms[:, 0] == 0.0] = (0.0, 0.0, 1.0)
        return Primitive(label, tuple(center), (radius,)), center + radius * direction

    radius = float(rng.uniform(0.08, 0.25))
    height = float(rng.uniform(0.2, min(0.8, extent)))
    base = rng.uniform([radius, radius, 0.0], [extent - radius, extent - radius, extent - height])
    angle = rng.uniform(0.0, 2.0 * math.pi, size=n)
    z = rng.uniform(0.0, height, size=n)
    pts = np.column_stack([radius * np.cos(angle), radius * np.sin(angle), z]) + base
    return Primitive(label, tuple(base), (radius, height)), pts


def generate_scene_with_primitives(spec: SyntheticSceneSpec) -> tuple[PointCloud, list[Primitive]]:
    """Generate a labeled scene and return the ideal primitives it was drawn from.

    Primitives are generated class by class (plane, box, sphere, cylinder), each
    with its own random stream derived from the spec seed, so changing one
    class count does not reshuffle the others.
    """
    if spec.n_primitives < 1:
        msg = "a synthetic scene needs at least one primitive"
        raise InvalidSpecError(msg)
    if min(spec.counts) < 0:
        msg = f"primitive counts must be non-negative, got {spec.counts}"
        raise InvalidSpecError(msg)
    if spec.points_per_primitive < 1:
        msg = "points_per_primitive must be at least 1"
        raise InvalidSpecError(msg)
    if spec.noise_sigma < 0 or spec.extent <= 0:
        msg = "noise_sigma must be >= 0 and extent > 0"
        raise InvalidSpecError(msg)

    n = spec.points_per_primitive
    positions, colors, labels, primitives = [], [], [], []
    for label, count in enumerate(spec.counts):
        for j in range(count):
            rng = derive_rng(spec.seed, label, j)
            primitive, pts = _sample_surface(label, rng, n, spec.extent)
            if spec.noise_sigma > 0:
                # clipped per axis so every point stays within 4 sigma of the surface
                bound = 2.0 * spec.noise_sigma
                pts = pts + np.clip(rng.normal(0.0, spec.noise_sigma, size=pts.shape), -bound, bound)
            base = rng.uniform(0.1, 0.9, size=3)
            positions.append(pts)
            colors.append(np.tile(base, (n, 1)))
            labels.append(np.full(n, label, dtype=np.int64))
            primitives.append(primitive)

    cloud = PointCloud(
        np.concatenate(positions),
        colors=np.concatenate(colors) if spec.with_colors else None,
        labels=np.concatenate(labels),
    )
    return cloud, primitives


def generate_scene(spec: SyntheticSceneSpec) -> PointCloud:
    """Generate a labeled synthetic scene; deterministic per ``spec.seed``."""
    return generate_scene_with_primitives(spec)[0]


class SceneConfig(LoggingConfigurable):
    """Configuration of the synthetic scene source."""

    n_scenes = Integer(8, config=True, help="Number of synthetic scenes to generate.")
    planes = Integer(1, config=True, help="Planes per scene.")
    boxes = Integer(1, config=True, help="Boxes per scene.")
    spheres = Integer(1, config=True, help="Spheres per scene.")
    cylinders = Integer(1, config=True, help="Cylinders per scene.")
    points_per_primitive = Integer(256, config=True, help="Points sampled on each primitive.")
    extent = Float(2.0, config=True, help="Side of the cube (meters) primitives are placed in.")
    noise_sigma = Float(0.002, config=True, help="Surface noise sigma (meters).")
    with_colors = Bool(True, config=True, help="Give each primitive a random RGB color.")

    @validate("n_scenes", "points_per_primitive")
    def _validate_positive(self, proposal):
        if proposal["value"] < 1:
            msg = f"{proposal['trait'].name} must be at least 1, got {proposal['value']}"
            raise TraitError(msg)
        return proposal["value"]

    @validate("planes", "boxes", "spheres", "cylinders")
    def _validate_count(self, proposal):
        if proposal["value"] < 0:
            msg = f"{proposal['trait'].name} must be non-negative"
            raise TraitError(msg)
        return proposal["value"]

    def scene_spec(self, seed: int, index: int) -> SyntheticSceneSpec:
        """Spec of scene ``index`` in the dataset drawn with ``seed``."""
        return SyntheticSceneSpec(
            planes=self.planes,
            boxes=self.boxes,
            spheres=self.spheres,
            cylinders=self.cylinders,
            points_per_primitive=self.points_per_primitive,
            extent=self.extent,
            noise_sigma=self.noise_sigma,
            with_colors=self.with_colors,
            seed=derive_seed(seed, index),
        )

    def generate(self, seed: int) -> list[PointCloud]:
        """All ``n_scenes`` scenes of the dataset drawn with ``seed``."""
        scenes = [generate_scene(self.scene_spec(seed, i)) for i in range(self.n_scenes)]
        self.log.debug("generated %d synthetic scenes (seed %d)", len(scenes), seed)
        return scenes
