"""How much of a masked point's shape the other masked points give away.

An adversary that sees only the coordinates of masked points (thinned by
uniform subsampling at a keep fraction) rebuilds each masked center's shape
context. The recall of the true occupied bins measures the leak.
"""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import os
import typing as t
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from traitlets.log import get_logger

from msp_pretrain.exceptions import DegenerateProbeError, EmptyInputError, InvalidSpecError
from msp_pretrain.fileio import atomic_writing
from msp_pretrain.masking import MaskResult, MaskSpec, apply_mask
from msp_pretrain.scene import PointCloud
from msp_pretrain.shape_context import DEFAULT_PARTITIONS, ScPartition, compute_multiscale_sc
from msp_pretrain.utils import derive_rng, derive_seed

LEAKAGE_HEADER = "keep_fraction,mean_recall,n_centers,n_seeds"

# random stream keys
CENTER_STREAM = 3
SURVIVOR_STREAM = 4


@dataclass(frozen=True)
class LeakageRow:
    keep_fraction: float
    mean_recall: float
    n_centers: int
    seeds: tuple[int, ...]

    @property
    def n_seeds(self) -> int:
        return len(self.seeds)

    def csv_row(self) -> str:
        return f"{self.keep_fraction!r},{self.mean_recall!r},{self.n_centers},{self.n_seeds}"


@dataclass
class LeakageReport:
    """One row per keep fraction, in the order they were requested."""

    rows: list[LeakageRow] = field(default_factory=list)

    def recall_at(self, keep_fraction: float) -> float:
        for row in self.rows:
            if row.keep_fraction == keep_fraction:
                return row.mean_recall
        msg = f"no row for keep fraction {keep_fraction}"
        raise KeyError(msg)

    def drops(self) -> list[tuple[float, float, float]]:
        """``(f_hi, f_lo, recall(f_hi) - recall(f_lo))`` for consecutive fractions, densest first."""
        ordered = sorted(self.rows, key=lambda r: -r.keep_fraction)
        return [
            (a.keep_fraction, b.keep_fraction, a.mean_recall - b.mean_recall)
            for a, b in zip(ordered, ordered[1:])
        ]

    def is_monotone(self, margin: float = 0.0) -> bool:
        """Recall falls by at least ``margin`` at every step to a sparser fraction."""
        return all(drop >= margin for _, _, drop in self.drops())

    def to_csv(self) -> str:
        return "\n".join([LEAKAGE_HEADER] + [row.csv_row() for row in self.rows]) + "\n"

    def write_csv(self, path: str | os.PathLike[str], log=None) -> None:
        with atomic_writing(os.fspath(path), log=log) as f:
            f.write(self.to_csv())

    @classmethod
    def merge(cls, reports: t.Sequence[LeakageReport]) -> LeakageReport:
        """Pool reports over scenes; recalls are weighted by their center counts."""
        if not reports:
            msg = "nothing to merge"
            raise EmptyInputError(msg)
        rows = []
        for i, first in enumerate(reports[0].rows):
            group = [r.rows[i] for r in reports]
            if any(row.keep_fraction != first.keep_fraction for row in group):
                msg = "leakage reports disagree on keep fractions"
                raise InvalidSpecError(msg)
            n = sum(row.n_centers for row in group)
            recall = sum(row.mean_recall * row.n_centers for row in group) / n
            rows.append(LeakageRow(first.keep_fraction, recall, n, first.seeds))
        return cls(rows)


def read_leakage_csv(path: str | os.PathLike[str]) -> LeakageReport:
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != LEAKAGE_HEADER:
        msg = f"{path} is not a leakage report"
        raise ValueError(msg)
    rows = []
    for line in lines[1:]:
        if line:
            f_str, recall, n_centers, n_seeds = line.split(",")
            rows.append(LeakageRow(float(f_str), float(recall), int(n_centers), tuple(range(int(n_seeds)))))
    return LeakageReport(rows)


def occupancy_recall(truth: np.ndarray, recovered: np.ndarray) -> np.ndarray:
    """Per-row share of the occupied ``truth`` bins that ``recovered`` also occupies.

    Rows without an occupied bin come out as NaN.
    """
    truth = np.asarray(truth, dtype=bool)
    recovered = np.asarray(recovered, dtype=bool)
    occupied = truth.sum(axis=1)
    hits = (truth & recovered).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(occupied > 0, hits / np.maximum(occupied, 1), np.nan)


def leakage_probe(
    cloud: PointCloud,
    mask: MaskResult,
    partitions: t.Sequence[ScPartition] = DEFAULT_PARTITIONS,
    keep_fractions: t.Sequence[float] = (1.0, 0.25, 0.05),
    seeds: t.Sequence[int] = (0, 1, 2, 3, 4),
    max_centers: int = 0,
    center_seed: int = 0,
) -> LeakageReport:
    """Mean occupancy recall of the masked-only adversary per keep fraction.

    Survivors at every fraction come from one uniform draw per seed, so the
    survivor set at a sparser fraction is a subset of a denser one.
    """
    keep_fractions = [float(f) for f in keep_fractions]
    if not keep_fractions or any(not 0.0 < f <= 1.0 for f in keep_fractions):
        msg = f"keep fractions must lie in (0, 1], got {keep_fractions}"
        raise InvalidSpecError(msg)
    if not seeds:
        msg = "at least one seed is required"
        raise InvalidSpecError(msg)
    masked_idx = np.asarray(mask.masked_idx, dtype=np.int64)
    if masked_idx.size == 0:
        msg = "the mask holds no point"
        raise EmptyInputError(msg)

    centers = masked_idx
    if max_centers and centers.size > max_centers:
        pick = derive_rng(center_seed, CENTER_STREAM).choice(centers.size, size=max_centers, replace=False)
        centers = centers[np.sort(pick)]
    positions = cloud.positions
    truth = compute_multiscale_sc(positions[centers], positions, partitions)
    valid = truth.any(axis=1)
    if not valid.any():
        msg = f"none of the {centers.size} masked centers has an occupied bin"
        raise DegenerateProbeError(msg)
    if not valid.all():
        get_logger().warning("skipped %d masked centers with empty descriptors", int((~valid).sum()))
    truth = truth[valid]
    center_pos = positions[centers[valid]]
    masked_pos = positions[masked_idx]

    sums = np.zeros(len(keep_fractions))
    for seed in seeds:
        draw = derive_rng(seed, SURVIVOR_STREAM).random(masked_idx.size)
        for i, f in enumerate(keep_fractions):
            survivors = masked_pos[draw < f]
            if survivors.shape[0] == 0:
                continue
            recovered = compute_multiscale_sc(center_pos, survivors, partitions, tree=cKDTree(survivors))
            sums[i] += occupancy_recall(truth, recovered).sum()

    n_centers = int(truth.shape[0])
    n = n_centers * len(seeds)
    rows = [
        LeakageRow(f, float(sums[i] / n), n_centers, tuple(int(s) for s in seeds))
        for i, f in enumerate(keep_fractions)
    ]
    return LeakageReport(rows)


def leakage_probe_scenes(
    scenes: t.Sequence[PointCloud],
    mask_spec: MaskSpec,
    partitions: t.Sequence[ScPartition] = DEFAULT_PARTITIONS,
    keep_fractions: t.Sequence[float] = (1.0, 0.25, 0.05),
    seeds: t.Sequence[int] = (0, 1, 2, 3, 4),
    max_centers: int = 0,
) -> LeakageReport:
    """Run :func:`leakage_probe` on every scene and pool the rows.

    Scene ``i`` is masked with seed ``derive_seed(mask_spec.seed, i)``.
    Scenes whose mask or descriptors are degenerate are skipped.
    """
    log = get_logger()
    reports = []
    for i, cloud in enumerate(scenes):
        spec = MaskSpec(ratio=mask_spec.ratio, block_size=mask_spec.block_size, seed=derive_seed(mask_spec.seed, i))
        mask = apply_mask(cloud, spec, allow_degenerate=True)
        if mask.masked_idx.size == 0:
            log.warning("scene %d: mask selected no point, skipped", i)
            continue
        try:
            reports.append(
                leakage_probe(cloud, mask, partitions, keep_fractions, seeds, max_centers, center_seed=spec.seed)
            )
        except DegenerateProbeError as e:
            log.warning("scene %d: %s, skipped", i, e)
    if not reports:
        msg = f"all {len(scenes)} scenes were degenerate"
        raise DegenerateProbeError(msg)
    return LeakageReport.merge(reports)
