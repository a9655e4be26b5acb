"""Losses of the pretext targets and of the linear probe."""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import typing as t

import numpy as np
from traitlets.log import get_logger

from msp_pretrain.autodiff import Tensor, mean_all, mul, record_op, sub
from msp_pretrain.exceptions import DegenerateTargetError, ShapeError


def _check_shape(op: str, pred: Tensor, target: np.ndarray) -> None:
    if pred.shape != target.shape:
        raise ShapeError(op, pred.shape, target.shape)


def loss_sc(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of sigmoid(logits) against 0/1 targets."""
    y = np.asarray(targets, dtype=logits.dtype)
    _check_shape("loss_sc", logits, y)
    z = logits.data
    n = max(z.size, 1)
    value = (np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))).sum() / n

    def _backward(g):
        e = np.exp(-np.abs(z))
        sig = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return ((sig - y) * (g / n),)

    return record_op("loss_sc", (logits,), np.asarray(value, dtype=logits.dtype), _backward)


def loss_dsf(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean of ``1 - cos(pred_i, target_i)``; target rows carry no gradient.

    Rows where either side is all-zero are left out.
    """
    target = np.asarray(target, dtype=pred.dtype)
    _check_shape("loss_dsf", pred, target)
    p = pred.data
    p_norm = np.linalg.norm(p, axis=1)
    t_norm = np.linalg.norm(target, axis=1)
    valid = (p_norm > 0) & (t_norm > 0)
    n_valid = int(valid.sum())
    if n_valid == 0:
        msg = f"all {p.shape[0]} deep-feature rows are zero"
        raise DegenerateTargetError(msg)
    if n_valid < p.shape[0]:
        get_logger().warning("excluded %d zero rows from the cosine loss", p.shape[0] - n_valid)

    pv, tv = p[valid], target[valid]
    pn, tn = p_norm[valid][:, None], t_norm[valid][:, None]
    cos = np.sum(pv * tv, axis=1, keepdims=True) / (pn * tn)
    value = float(np.mean(1.0 - cos))

    def _backward(g):
        dcos = tv / (pn * tn) - cos * pv / (pn * pn)
        dp = np.zeros_like(p)
        dp[valid] = -dcos * (g / n_valid)
        return (dp,)

    return record_op("loss_dsf", (pred,), np.asarray(value, dtype=pred.dtype), _backward)


def loss_color(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error over points and channels."""
    target = np.asarray(target, dtype=pred.dtype)
    _check_shape("loss_color", pred, target)
    diff = sub(pred, target)
    return mean_all(mul(diff, diff))


def loss_chamfer(pred: Tensor, targets: t.Sequence[np.ndarray]) -> Tensor:
    """Symmetric Chamfer distance per point, averaged over points.

    ``pred`` holds ``(M, K, 3)`` offsets; ``targets`` one ``(T_i, 3)`` set per
    point. Points with an empty target set are skipped.
    """
    if pred.ndim != 3 or pred.shape[2] != 3 or pred.shape[0] != len(targets):
        raise ShapeError("loss_chamfer", pred.shape, (len(targets), "K", 3))
    k = pred.shape[1]
    valid = [i for i, tgt in enumerate(targets) if len(tgt)]
    if len(valid) < len(targets):
        get_logger().warning("skipped %d points with empty point-set targets", len(targets) - len(valid))
    if not valid:
        msg = f"all {len(targets)} point-set targets are empty"
        raise DegenerateTargetError(msg)

    total = 0.0
    grads = np.zeros_like(pred.data)
    for i in valid:
        p = pred.data[i]
        tgt = np.asarray(targets[i], dtype=pred.dtype)
        diff = p[:, None, :] - tgt[None, :, :]
        d2 = np.sum(diff * diff, axis=2)
        nearest_t = np.argmin(d2, axis=1)
        nearest_p = np.argmin(d2, axis=0)
        total += d2[np.arange(k), nearest_t].mean() + d2[nearest_p, np.arange(len(tgt))].mean()
        grads[i] += 2.0 * (p - tgt[nearest_t]) / k
        np.add.at(grads[i], nearest_p, 2.0 * (p[nearest_p] - tgt) / len(tgt))
    n = len(valid)

    def _backward(g):
        return (grads * (g / n),)

    return record_op("loss_chamfer", (pred,), np.asarray(total / n, dtype=pred.dtype), _backward)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("softmax_cross_entropy", logits.shape, labels.shape)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(labels.size)
    n = max(labels.size, 1)
    value = -log_probs[rows, labels].sum() / n

    def _backward(g):
        d = np.exp(log_probs)
        d[rows, labels] -= 1.0
        return (d * (g / n),)

    return record_op("softmax_cross_entropy", (logits,), np.asarray(value, dtype=logits.dtype), _backward)
