"""k-NN local multi-head attention blocks."""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from msp_pretrain.autodiff import (
    Tensor,
    add,
    as_tensor,
    einsum,
    gather_rows,
    layer_norm,
    linear,
    matmul,
    relu,
    reshape,
    scale,
    softmax_lastdim,
)
from msp_pretrain.exceptions import ShapeError

from .params import ParamInit, ParamStore

FFN_EXPANSION = 4
DEFAULT_LN_EPS = 1e-5


@dataclass(frozen=True)
class LocalAttentionBlock:
    """One attention + feed-forward block whose parameters live under ``prefix``.

    Each query attends only to the keys listed in its row of the k-NN index.
    Relative key offsets (key position minus query position) go through a
    learned linear map and are added to the keys before scoring. The block
    holds no tensors itself, so the same block runs against online and EMA
    parameter stores alike.
    """

    prefix: str
    width: int
    heads: int
    ln_eps: float = DEFAULT_LN_EPS

    def __post_init__(self) -> None:
        if self.width < 1 or self.heads < 1 or self.width % self.heads:
            msg = f"width {self.width} must be a positive multiple of heads {self.heads}"
            raise ValueError(msg)

    @property
    def head_width(self) -> int:
        return self.width // self.heads

    def p(self, store: ParamStore, name: str) -> Tensor:
        return store[f"{self.prefix}.{name}"]

    def init_params(self, init: ParamInit) -> None:
        c = self.width
        for proj in ("q", "k", "v", "o"):
            init.linear(f"{self.prefix}.{proj}", c, c)
        init.linear(f"{self.prefix}.pos", 3, c, bias=False)
        init.linear(f"{self.prefix}.ffn1", c, FFN_EXPANSION * c)
        init.linear(f"{self.prefix}.ffn2", FFN_EXPANSION * c, c)
        init.layer_norm(f"{self.prefix}.ln1", c)
        init.layer_norm(f"{self.prefix}.ln2", c)

    def attend(
        self,
        store: ParamStore,
        query_feats: Tensor,
        query_pos: np.ndarray,
        key_feats: Tensor,
        key_pos: np.ndarray,
        knn_index: np.ndarray,
    ) -> tuple[Tensor, np.ndarray]:
        """Output-projected attention mix before the residual, and the attention weights."""
        c, h, d = self.width, self.heads, self.head_width
        knn_index = np.asarray(knn_index, dtype=np.int64)
        n_q = query_feats.shape[0]
        if query_feats.ndim != 2 or query_feats.shape[1] != c:
            raise ShapeError(f"{self.prefix} queries", query_feats.shape, (n_q, c))
        if key_feats.ndim != 2 or key_feats.shape[1] != c:
            raise ShapeError(f"{self.prefix} keys", key_feats.shape, (key_feats.shape[0], c))
        if knn_index.ndim != 2 or knn_index.shape[0] != n_q or knn_index.shape[1] < 1:
            raise ShapeError(f"{self.prefix} knn index", knn_index.shape, (n_q, "k"))
        k = knn_index.shape[1]

        q = linear(query_feats, self.p(store, "q.weight"), self.p(store, "q.bias"))
        keys = linear(key_feats, self.p(store, "k.weight"), self.p(store, "k.bias"))
        values = linear(key_feats, self.p(store, "v.weight"), self.p(store, "v.bias"))

        rel = np.asarray(key_pos)[knn_index] - np.asarray(query_pos)[:, None, :]
        pos = matmul(as_tensor(rel, like=query_feats), self.p(store, "pos.weight"))
        kn = add(gather_rows(keys, knn_index), pos)
        vn = gather_rows(values, knn_index)

        scores = einsum("qhd,qjhd->qhj", reshape(q, (n_q, h, d)), reshape(kn, (n_q, k, h, d)))
        weights = softmax_lastdim(scale(scores, 1.0 / math.sqrt(d)))
        mix = einsum("qhj,qjhd->qhd", weights, reshape(vn, (n_q, k, h, d)))
        out = linear(reshape(mix, (n_q, c)), self.p(store, "o.weight"), self.p(store, "o.bias"))
        return out, weights.data

    def __call__(
        self,
        store: ParamStore,
        query_feats: Tensor,
        query_pos: np.ndarray,
        key_feats: Tensor,
        key_pos: np.ndarray,
        knn_index: np.ndarray,
        return_weights: bool = False,
    ):
        attn, weights = self.attend(store, query_feats, query_pos, key_feats, key_pos, knn_index)
        x = layer_norm(
            add(query_feats, attn), self.p(store, "ln1.gain"), self.p(store, "ln1.bias"), self.ln_eps
        )
        hidden = relu(linear(x, self.p(store, "ffn1.weight"), self.p(store, "ffn1.bias")))
        ffn = linear(hidden, self.p(store, "ffn2.weight"), self.p(store, "ffn2.bias"))
        out = layer_norm(add(x, ffn), self.p(store, "ln2.gain"), self.p(store, "ln2.bias"), self.ln_eps)
        if return_weights:
            return out, weights
        return out


def local_attention(
    block: LocalAttentionBlock,
    store: ParamStore,
    query_feats: Tensor,
    query_pos: np.ndarray,
    key_feats: Tensor,
    key_pos: np.ndarray,
    knn_index: np.ndarray,
) -> Tensor:
    return block(store, query_feats, query_pos, key_feats, key_pos, knn_index)
