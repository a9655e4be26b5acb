"""Reconstruction targets for the supervised (masked) points."""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import typing as t
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from msp_pretrain.autodiff import no_grad
from msp_pretrain.exceptions import ConfigError, ContractError
from msp_pretrain.scene import PointCloud
from msp_pretrain.shape_context import ScPartition, compute_multiscale_sc

from .model import MspModel, encode_full

_CANDIDATE_SLACK = 1e-9


@dataclass
class TargetBundle:
    """Targets for the points at ``target_idx``; disabled targets stay None."""

    target_idx: np.ndarray
    sc: np.ndarray | None = None
    dsf: np.ndarray | None = None
    color: np.ndarray | None = None
    pointset: list[np.ndarray] | None = None


def pointset_targets(
    positions: np.ndarray, centers_idx: np.ndarray, k: int, radius: float, tree: cKDTree | None = None
) -> list[np.ndarray]:
    """Offsets of up to ``k`` neighbors strictly within ``radius`` of each center.

    The center itself is excluded. Neighbors are ordered nearest first,
    equal distances by ascending index.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if tree is None:
        tree = cKDTree(positions)
    out = []
    candidates = tree.query_ball_point(positions[centers_idx], r=radius * (1.0 + _CANDIDATE_SLACK))
    for center, cand in zip(centers_idx, candidates):
        cand = np.asarray(cand, dtype=np.int64)
        cand = cand[cand != center]
        offsets = positions[cand] - positions[center]
        d2 = np.sum(offsets * offsets, axis=1)
        keep = d2 < radius * radius
        cand, offsets, d2 = cand[keep], offsets[keep], d2[keep]
        order = np.lexsort((cand, d2))[:k]
        out.append(offsets[order])
    return out


def dsf_targets(model: MspModel, cloud: PointCloud, target_idx: np.ndarray) -> np.ndarray:
    """EMA-branch encoder features of the full cloud, at ``target_idx``; never recorded."""
    with no_grad():
        feats = encode_full(model, cloud, store=model.ema.shadow)
    return np.array(feats.data[target_idx], copy=True)


def compute_targets(
    cloud: PointCloud,
    target_idx: np.ndarray,
    targets: t.Sequence[str],
    model: MspModel | None = None,
    partitions: t.Sequence[ScPartition] = (),
    pointset_k: int = 200,
    pointset_radius: float = 0.15,
) -> TargetBundle:
    """Build every enabled target from the full, unmasked (augmented) cloud."""
    if not targets:
        msg = "at least one target must be enabled"
        raise ContractError(msg)
    target_idx = np.asarray(target_idx, dtype=np.int64)
    bundle = TargetBundle(target_idx=target_idx)
    tree = cKDTree(cloud.positions) if {"sc", "pointset"} & set(targets) else None
    if "sc" in targets:
        if not partitions:
            msg = "shape-context targets need at least one partition"
            raise ContractError(msg)
        bundle.sc = compute_multiscale_sc(cloud.positions[target_idx], cloud.positions, partitions, tree=tree)
    if "dsf" in targets:
        if model is None:
            msg = "deep shape feature targets need the model's EMA branch"
            raise ContractError(msg)
        bundle.dsf = dsf_targets(model, cloud, target_idx)
    if "color" in targets:
        if cloud.colors is None:
            msg = "the color target is enabled but the cloud has no colors"
            raise ConfigError(msg)
        bundle.color = np.array(cloud.colors[target_idx], copy=True)
    if "pointset" in targets:
        bundle.pointset = pointset_targets(cloud.positions, target_idx, pointset_k, pointset_radius, tree)
    return bundle
