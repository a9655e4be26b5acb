"""Linear probe: a frozen encoder, one trained linear classifier."""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import os
import typing as t
from dataclasses import dataclass

import numpy as np
from traitlets.log import get_logger

from msp_pretrain import PRIMITIVE_CLASSES
from msp_pretrain.autodiff import Tape, backward, linear, no_grad
from msp_pretrain.exceptions import ContractError, DegenerateProbeError, EmptyInputError, ShapeError
from msp_pretrain.fileio import atomic_writing
from msp_pretrain.nn import AdamWState, ParamInit, ParamStore, adamw_step
from msp_pretrain.pipeline.losses import softmax_cross_entropy
from msp_pretrain.pipeline.model import MspModel, ModelSpec, encode_full
from msp_pretrain.scene import PointCloud
from msp_pretrain.utils import derive_rng, derive_seed, round_half_up

N_CLASSES = len(PRIMITIVE_CLASSES)
PROBE_HEADER = "arm,overall_acc," + ",".join(f"acc_class{c}" for c in range(N_CLASSES))
ARMS = ("pretrained", "scratch")

SPLIT_STREAM = 5


@dataclass
class ProbeResult:
    """Held-out accuracies of one probe run.

    ``class_acc`` is None for classes absent from the held-out points.
    """

    arm: str
    overall_acc: float
    class_acc: tuple[float | None, ...]
    n_train: int = 0
    n_test: int = 0
    degenerate: bool = False

    def csv_row(self) -> str:
        cells = [self.arm, repr(float(self.overall_acc))]
        cells += ["" if a is None else repr(float(a)) for a in self.class_acc]
        return ",".join(cells)


def write_probe_csv(path: str | os.PathLike[str], results: t.Sequence[ProbeResult], log=None) -> None:
    with atomic_writing(os.fspath(path), log=log) as f:
        f.write(PROBE_HEADER + "\n")
        for result in results:
            f.write(result.csv_row() + "\n")


def read_probe_csv(path: str | os.PathLike[str]) -> list[ProbeResult]:
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != PROBE_HEADER:
        msg = f"{path} is not a probe report"
        raise ValueError(msg)
    results = []
    for line in lines[1:]:
        if not line:
            continue
        arm, overall, *classes = line.split(",")
        results.append(
            ProbeResult(arm, float(overall), tuple(float(c) if c else None for c in classes))
        )
    return results


def split_scenes(n_scenes: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Sorted train and held-out scene indices; both sides get at least one scene."""
    if n_scenes < 2:
        msg = f"a train/held-out split needs at least 2 scenes, got {n_scenes}"
        raise EmptyInputError(msg)
    n_train = min(max(round_half_up(n_scenes * train_fraction), 1), n_scenes - 1)
    order = derive_rng(seed, SPLIT_STREAM).permutation(n_scenes)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def scene_features(model: MspModel, encoder: ParamStore, cloud: PointCloud) -> np.ndarray:
    """Frozen per-point features of the whole cloud (nothing masked)."""
    with no_grad():
        return encode_full(model, cloud, store=encoder).data


def _stack(model, encoder, scenes, ids):
    feats, labels = [], []
    for i in ids:
        cloud = scenes[i]
        if cloud.labels is None:
            msg = f"scene {i} carries no labels"
            raise ContractError(msg)
        feats.append(scene_features(model, encoder, cloud))
        labels.append(np.asarray(cloud.labels, dtype=np.int64))
    return np.concatenate(feats), np.concatenate(labels)


def fit_linear_classifier(
    features: np.ndarray,
    labels: np.ndarray,
    steps: int = 200,
    lr: float = 1e-2,
    weight_decay: float = 0.0,
    n_classes: int = N_CLASSES,
) -> ParamStore:
    """Full-batch AdamW on softmax cross-entropy from zero weights."""
    features = np.asarray(features)
    store = ParamStore()
    init = ParamInit(store, derive_rng(0), dtype=features.dtype)
    init.constant("probe.weight", (features.shape[1], n_classes), 0.0)
    init.constant("probe.bias", (n_classes,), 0.0)
    optimizer = AdamWState.for_params(store, lr=lr, weight_decay=weight_decay)
    for _ in range(steps):
        with Tape() as tape:
            logits = linear(features, store["probe.weight"], store["probe.bias"])
            loss = softmax_cross_entropy(logits, labels)
        backward(tape, loss)
        adamw_step(optimizer, store)
        store.zero_grad()
    return store


def classify(classifier: ParamStore, features: np.ndarray) -> np.ndarray:
    logits = features @ classifier["probe.weight"].data + classifier["probe.bias"].data
    return np.argmax(logits, axis=1)


def accuracies(pred: np.ndarray, labels: np.ndarray, n_classes: int = N_CLASSES) -> tuple[float, tuple]:
    overall = float(np.mean(pred == labels)) if labels.size else 0.0
    per_class = tuple(
        float(np.mean(pred[labels == c] == c)) if np.any(labels == c) else None for c in range(n_classes)
    )
    return overall, per_class


def linear_probe(
    encoder: ParamStore,
    spec: ModelSpec,
    scenes: t.Sequence[PointCloud],
    split_seed: int = 0,
    arm: str = "pretrained",
    train_fraction: float = 0.5,
    steps: int = 200,
    lr: float = 1e-2,
    weight_decay: float = 0.0,
    allow_degenerate: bool = False,
) -> ProbeResult:
    """Train a classifier on frozen ``encoder`` features and score held-out scenes.

    ``encoder`` holds the ``encoder.`` parameters for ``spec``. A label set
    with a single class raises :class:`DegenerateProbeError`, unless
    ``allow_degenerate``, in which case the result is perfect and flagged.
    """
    model = MspModel.build(spec, seed=0)
    missing = set(model.encoder_params()) - set(encoder)
    if missing:
        msg = f"encoder lacks {len(missing)} parameters, e.g. {sorted(missing)[0]}"
        raise ContractError(msg)
    for name in model.encoder_params():
        if encoder[name].shape != model.params[name].shape:
            raise ShapeError(name, encoder[name].shape, model.params[name].shape)

    train_ids, test_ids = split_scenes(len(scenes), train_fraction, split_seed)
    x_train, y_train = _stack(model, encoder, scenes, train_ids)
    x_test, y_test = _stack(model, encoder, scenes, test_ids)
    classes = np.unique(np.concatenate([y_train, y_test]))
    if classes.size < 2:
        if not allow_degenerate:
            msg = f"all labels are class {int(classes[0])}; the probe is degenerate"
            raise DegenerateProbeError(msg)
        get_logger().warning("single-class labels; reporting a degenerate probe")
        per_class = tuple(1.0 if c == classes[0] else None for c in range(N_CLASSES))
        return ProbeResult(arm, 1.0, per_class, y_train.size, y_test.size, degenerate=True)

    classifier = fit_linear_classifier(x_train, y_train, steps, lr, weight_decay)
    overall, per_class = accuracies(classify(classifier, x_test), y_test)
    get_logger().info("%s probe: held-out accuracy %.4f on %d points", arm, overall, y_test.size)
    return ProbeResult(arm, overall, per_class, y_train.size, y_test.size)


def probe_arms(
    pretrained: ParamStore | None,
    spec: ModelSpec,
    scenes: t.Sequence[PointCloud],
    seeds: t.Sequence[int],
    split_seed: int = 0,
    **kwargs,
) -> list[ProbeResult]:
    """Probe the pretrained encoder and a fresh random one for every seed.

    Both arms of seed ``s`` share the split ``derive_seed(split_seed, s)``;
    the scratch encoder is ``MspModel.build(spec, s)``.
    """
    results = []
    for seed in seeds:
        split = derive_seed(split_seed, seed)
        if pretrained is not None:
            results.append(linear_probe(pretrained, spec, scenes, split, arm="pretrained", **kwargs))
        scratch = MspModel.build(spec, seed).encoder_params()
        results.append(linear_probe(scratch, spec, scenes, split, arm="scratch", **kwargs))
    return results
