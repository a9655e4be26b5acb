"""Encoder, mask queries, decoders and prediction heads of the pretext network.

Parameter names are grouped by prefix: ``encoder.`` (tracked by the EMA
branch and kept for downstream use), ``decoder.`` and ``head.`` (dropped
after pre-training).
"""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import typing as t
from dataclasses import dataclass, field

import numpy as np

from msp_pretrain.autodiff import (
    DTYPES,
    Tensor,
    add,
    as_tensor,
    concat_rows,
    gather_rows,
    linear,
    matmul,
    reshape,
    scale,
    slice_last,
    tanh,
)
from msp_pretrain.exceptions import ContractError, DegenerateMaskError
from msp_pretrain.masking import MaskResult
from msp_pretrain.nn import EmaTracker, LocalAttentionBlock, ParamInit, ParamStore, knn_search
from msp_pretrain.scene import PointCloud
from msp_pretrain.utils import derive_rng

if t.TYPE_CHECKING:
    from .config import MspConfig

ENCODER_PREFIX = "encoder."
INPUT_WIDTH = 6
ABSENT_COLOR = 0.5
MASK_TOKEN_STD = 0.02

# random stream keys under the run seed
INIT_STREAM = 1


@dataclass(frozen=True)
class ModelSpec:
    """Sizes and switches the network is built from."""

    width: int = 64
    heads: int = 4
    depth: int = 2
    encoder_depth: int = 2
    k: int = 32
    arch: str = "SA"
    keypoints: int = 512
    ln_eps: float = 1e-5
    sc_bits: int = 184
    targets: tuple[str, ...] = ("sc", "dsf", "color")
    pointset_k: int = 200
    pointset_radius: float = 0.15
    ema_decay: float = 0.999
    precision: str = "float64"

    @classmethod
    def from_config(cls, config: MspConfig) -> ModelSpec:
        config.check()
        return cls(
            width=config.width,
            heads=config.heads,
            depth=config.depth,
            encoder_depth=config.encoder_depth,
            k=config.k,
            arch=config.arch,
            keypoints=config.keypoints,
            ln_eps=config.ln_eps,
            sc_bits=config.sc_bits,
            targets=tuple(config.targets),
            pointset_k=config.pointset_k,
            pointset_radius=config.pointset_radius,
            ema_decay=config.ema_decay,
            precision=config.precision,
        )

    @property
    def shape_head_width(self) -> int:
        """Width of the [SC logits | DSF vector] head."""
        return self.sc_bits * ("sc" in self.targets) + self.width * ("dsf" in self.targets)


@dataclass
class DecodeResult:
    """Decoded features of the supervised points.

    ``target_idx`` are the cloud indices the rows of ``features`` belong to.
    ``knn_index`` is the last attention graph, in the decoder's key indexing.
    """

    features: Tensor
    target_idx: np.ndarray
    knn_index: np.ndarray
    key_idx: np.ndarray
    keypoint_idx: np.ndarray | None = None


@dataclass
class Predictions:
    sc_logits: Tensor | None = None
    dsf: Tensor | None = None
    color: Tensor | None = None
    pointset: Tensor | None = None


@dataclass
class MspModel:
    spec: ModelSpec
    params: ParamStore
    ema: EmaTracker
    encoder_blocks: tuple[LocalAttentionBlock, ...] = field(init=False)
    cross_blocks: tuple[LocalAttentionBlock, ...] = field(init=False)
    refine_blocks: tuple[LocalAttentionBlock, ...] = field(init=False)
    sa_blocks: tuple[LocalAttentionBlock, ...] = field(init=False)

    def __post_init__(self) -> None:
        s = self.spec

        def _blocks(prefix, n):
            return tuple(
                LocalAttentionBlock(f"{prefix}.{i}", s.width, s.heads, s.ln_eps) for i in range(n)
            )

        self.encoder_blocks = _blocks("encoder.blocks", s.encoder_depth)
        self.cross_blocks = _blocks("decoder.cross", s.depth if s.arch in ("CA", "CA++") else 0)
        self.refine_blocks = _blocks("decoder.self", s.depth if s.arch == "CA++" else 0)
        self.sa_blocks = _blocks("decoder.sa", s.depth if s.arch == "SA" else 0)

    @classmethod
    def build(cls, spec: ModelSpec, seed: int) -> MspModel:
        """A freshly initialized model; deterministic per ``seed``."""
        if spec.width % spec.heads:
            msg = f"width {spec.width} is not divisible by heads {spec.heads}"
            raise ContractError(msg)
        params = ParamStore()
        init = ParamInit(params, derive_rng(seed, INIT_STREAM), dtype=DTYPES[spec.precision])
        model = cls(spec, params, EmaTracker(ParamStore(), spec.ema_decay, ENCODER_PREFIX))

        init.linear("encoder.embed", INPUT_WIDTH, spec.width)
        for block in model.all_blocks():
            block.init_params(init)
        init.normal("decoder.mask_token", (spec.width,), MASK_TOKEN_STD)
        init.linear("decoder.coord_embed", 3, spec.width, bias=False)
        if spec.shape_head_width:
            init.linear("head.shape", spec.width, spec.shape_head_width)
        if "color" in spec.targets:
            init.linear("head.color", spec.width, 3)
        if "pointset" in spec.targets:
            init.linear("head.pointset", spec.width, 3 * spec.pointset_k)

        model.ema = EmaTracker.track(params, spec.ema_decay, ENCODER_PREFIX)
        return model

    def all_blocks(self) -> tuple[LocalAttentionBlock, ...]:
        return self.encoder_blocks + self.cross_blocks + self.refine_blocks + self.sa_blocks

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(DTYPES[self.spec.precision])

    def encoder_params(self) -> ParamStore:
        return self.params.subset(ENCODER_PREFIX)


def encoder_inputs(cloud: PointCloud, dtype=np.float64) -> np.ndarray:
    """Per-point ``[x, y, z] - aabb center`` followed by RGB (0.5 gray when absent)."""
    centered = cloud.positions - cloud.aabb.center
    if cloud.colors is None:
        colors = np.full((len(cloud), 3), ABSENT_COLOR)
    else:
        colors = cloud.colors
    return np.concatenate([centered, colors], axis=1).astype(dtype)


def run_encoder(
    model: MspModel, store: ParamStore, cloud: PointCloud, indices: np.ndarray
) -> Tensor:
    """Encode the points at ``indices``, attending only among themselves."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        msg = "cannot encode an empty point set"
        raise DegenerateMaskError(msg)
    inputs = encoder_inputs(cloud, model.dtype)[indices]
    pos = cloud.positions[indices]
    x = linear(as_tensor(inputs), store["encoder.embed.weight"], store["encoder.embed.bias"])
    if model.encoder_blocks:
        graph = knn_search(pos, pos, model.spec.k)
        for block in model.encoder_blocks:
            x = block(store, x, pos, x, pos, graph)
    return x


def encode_remaining(model: MspModel, cloud: PointCloud, mask: MaskResult, store: ParamStore | None = None) -> Tensor:
    """One width-C feature per remaining point, in ``mask.remaining_idx`` order."""
    if mask.remaining_idx.size == 0:
        msg = "mask leaves no remaining point to encode"
        raise DegenerateMaskError(msg)
    return run_encoder(model, model.params if store is None else store, cloud, mask.remaining_idx)


def encode_full(model: MspModel, cloud: PointCloud, store: ParamStore | None = None) -> Tensor:
    """Features of every point of the unmasked cloud."""
    return run_encoder(model, model.params if store is None else store, cloud, np.arange(len(cloud)))


def build_mask_queries(
    model: MspModel, masked_positions: np.ndarray, center: np.ndarray | None = None
) -> Tensor:
    """``mask_token + coord_embed(position - center)`` per masked point."""
    pos = np.asarray(masked_positions, dtype=np.float64).reshape(-1, 3)
    if center is not None:
        pos = pos - center
    coords = matmul(as_tensor(pos.astype(model.dtype)), model.params["decoder.coord_embed.weight"])
    return add(coords, model.params["decoder.mask_token"])


def _decode_cross(
    model: MspModel,
    queries: Tensor,
    query_pos: np.ndarray,
    remaining_feats: Tensor,
    remaining_pos: np.ndarray,
    refine_blocks: t.Sequence[LocalAttentionBlock],
) -> tuple[Tensor, np.ndarray]:
    if remaining_pos.shape[0] == 0:
        msg = "cross-attention needs at least one remaining point"
        raise DegenerateMaskError(msg)
    k = model.spec.k
    cross_graph = knn_search(query_pos, remaining_pos, k)
    if refine_blocks:
        self_graph = knn_search(remaining_pos, remaining_pos, k)
    if query_pos.shape[0] == 0:
        return queries, cross_graph
    q, feats = queries, remaining_feats
    for i, cross in enumerate(model.cross_blocks):
        if i < len(refine_blocks):
            feats = refine_blocks[i](model.params, feats, remaining_pos, feats, remaining_pos, self_graph)
        q = cross(model.params, q, query_pos, feats, remaining_pos, cross_graph)
    return q, cross_graph


def decode_ca_pp(
    model: MspModel,
    queries: Tensor,
    query_pos: np.ndarray,
    remaining_feats: Tensor,
    remaining_pos: np.ndarray,
    refine_depth: int | None = None,
) -> Tensor:
    """Cross-attention from masked queries to remaining features, refining the
    remaining features with self-attention before each cross block.

    Masked queries never attend to each other. ``refine_depth`` limits how many
    refinement blocks run (all by default).
    """
    refine = model.refine_blocks if refine_depth is None else model.refine_blocks[:refine_depth]
    return _decode_cross(model, queries, query_pos, remaining_feats, remaining_pos, refine)[0]


def decode_ca(
    model: MspModel,
    queries: Tensor,
    query_pos: np.ndarray,
    remaining_feats: Tensor,
    remaining_pos: np.ndarray,
) -> Tensor:
    """Cross-attention only: masked queries attend to remaining features."""
    return _decode_cross(model, queries, query_pos, remaining_feats, remaining_pos, ())[0]


def sample_keypoints(n_points: int, count: int, seed: int) -> np.ndarray:
    """Sorted indices of ``min(count, n_points)`` points drawn without replacement."""
    if count >= n_points:
        return np.arange(n_points)
    return np.sort(derive_rng(seed).choice(n_points, size=count, replace=False))


def decode_sa(
    model: MspModel,
    cloud: PointCloud,
    mask: MaskResult,
    remaining_feats: Tensor,
    keypoints: int,
    seed: int,
) -> DecodeResult:
    """Self-attention over keypoints sampled from the whole cloud.

    Remaining keypoints carry their encoder features, masked keypoints their
    mask queries. Only masked keypoints are returned for supervision. When the
    first draw holds no masked keypoint, one redraw with ``seed + 1`` is made.
    """
    if keypoints < 2:
        msg = f"the SA decoder needs at least 2 keypoints, got {keypoints}"
        raise ContractError(msg)
    masked = mask.masked_flags()
    for attempt in range(2):
        keypoint_idx = sample_keypoints(len(cloud), keypoints, seed + attempt)
        masked_kp = keypoint_idx[masked[keypoint_idx]]
        if masked_kp.size:
            break
    else:
        msg = f"no masked point among {keypoint_idx.size} sampled keypoints"
        raise DegenerateMaskError(msg)
    remaining_kp = keypoint_idx[~masked[keypoint_idx]]

    rows = np.searchsorted(mask.remaining_idx, remaining_kp)
    center = cloud.aabb.center
    queries = build_mask_queries(model, cloud.positions[masked_kp], center)
    feats = concat_rows([gather_rows(remaining_feats, rows), queries])
    order = np.concatenate([remaining_kp, masked_kp])
    pos = cloud.positions[order]

    graph = knn_search(pos, pos, model.spec.k)
    for block in model.sa_blocks:
        feats = block(model.params, feats, pos, feats, pos, graph)
    out = gather_rows(feats, np.arange(remaining_kp.size, order.size))
    return DecodeResult(
        features=out, target_idx=masked_kp, knn_index=graph, key_idx=order, keypoint_idx=keypoint_idx
    )


def decode(
    model: MspModel,
    cloud: PointCloud,
    mask: MaskResult,
    remaining_feats: Tensor,
    seed: int = 0,
) -> DecodeResult:
    """Run the configured decoder architecture."""
    if model.spec.arch == "SA":
        return decode_sa(model, cloud, mask, remaining_feats, model.spec.keypoints, seed)
    center = cloud.aabb.center
    query_pos = cloud.positions[mask.masked_idx]
    remaining_pos = cloud.positions[mask.remaining_idx]
    queries = build_mask_queries(model, query_pos, center)
    refine = model.refine_blocks if model.spec.arch == "CA++" else ()
    feats, graph = _decode_cross(model, queries, query_pos, remaining_feats, remaining_pos, refine)
    return DecodeResult(
        features=feats, target_idx=mask.masked_idx, knn_index=graph, key_idx=mask.remaining_idx
    )


def predict(model: MspModel, features: Tensor) -> Predictions:
    """Apply the enabled prediction heads to decoded features."""
    spec = model.spec
    p = model.params
    out = Predictions()
    if spec.shape_head_width:
        shape = linear(features, p["head.shape.weight"], p["head.shape.bias"])
        offset = 0
        if "sc" in spec.targets:
            out.sc_logits = slice_last(shape, 0, spec.sc_bits)
            offset = spec.sc_bits
        if "dsf" in spec.targets:
            out.dsf = slice_last(shape, offset, offset + spec.width)
    if "color" in spec.targets:
        out.color = linear(features, p["head.color.weight"], p["head.color.bias"])
    if "pointset" in spec.targets:
        raw = tanh(linear(features, p["head.pointset.weight"], p["head.pointset.bias"]))
        out.pointset = reshape(scale(raw, spec.pointset_radius), (features.shape[0], spec.pointset_k, 3))
    return out
