"""Training step and pre-training loop."""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import math
import os
import time
import typing as t
from dataclasses import dataclass, field
from functools import partial

import anyio
import numpy as np
from traitlets.log import get_logger

from msp_pretrain.autodiff import Tape, Tensor, add, backward, scale
from msp_pretrain.exceptions import (
    DegenerateMaskError,
    DegenerateTargetError,
    EmptyInputError,
    TrainingError,
)
from msp_pretrain.fileio import atomic_writing
from msp_pretrain.log import log_train_step
from msp_pretrain.masking import MaskResult, apply_mask
from msp_pretrain.nn import AdamWState, adamw_step, ema_update, scheduled_lr
from msp_pretrain.scene import PointCloud, augment
from msp_pretrain.shape_context import ScPartition
from msp_pretrain.utils import derive_rng

from .checkpoints import Checkpoint, FileCheckpoints
from .losses import loss_chamfer, loss_color, loss_dsf, loss_sc
from .model import MspModel, ModelSpec, Predictions, decode, encode_remaining, predict
from .targets import TargetBundle, compute_targets

if t.TYPE_CHECKING:
    from .config import MspConfig

METRICS_NAME = "metrics.csv"
METRICS_HEADER = "step,loss_total,loss_sc,loss_dsf,loss_color,loss_pointset,lr,seconds"
LOSS_TARGETS = ("sc", "dsf", "color", "pointset")

# random stream key for the per-epoch scene order
EPOCH_STREAM = 2

EmitFn = t.Callable[..., None]


@dataclass
class TrainMetrics:
    step: int
    loss_total: float
    losses: dict[str, float | None]
    lr: float
    seconds: float
    n_scenes: int
    skipped: dict[str, int] = field(default_factory=dict)

    def csv_row(self) -> str:
        def _num(v):
            return "" if v is None else repr(float(v))

        cells = [str(self.step), _num(self.loss_total)]
        cells += [_num(self.losses.get(name)) for name in LOSS_TARGETS]
        cells += [_num(self.lr), f"{self.seconds:.6f}"]
        return ",".join(cells)


@dataclass
class SceneOutcome:
    """Forward result of one scene, or the reason it was skipped."""

    tape: Tape | None = None
    loss: Tensor | None = None
    losses: dict[str, float] = field(default_factory=dict)
    total: float = 0.0
    skipped: str | None = None


def target_losses(preds: Predictions, bundle: TargetBundle) -> dict[str, Tensor]:
    """Per-target losses of every enabled head."""
    terms = {}
    if preds.sc_logits is not None:
        terms["sc"] = loss_sc(preds.sc_logits, bundle.sc)
    if preds.dsf is not None:
        terms["dsf"] = loss_dsf(preds.dsf, bundle.dsf)
    if preds.color is not None:
        terms["color"] = loss_color(preds.color, bundle.color)
    if preds.pointset is not None:
        terms["pointset"] = loss_chamfer(preds.pointset, bundle.pointset)
    return terms


def weighted_total(terms: dict[str, Tensor], weights: dict[str, float]) -> Tensor:
    total = None
    for name in LOSS_TARGETS:
        if name in terms:
            term = scale(terms[name], weights[name])
            total = term if total is None else add(total, term)
    return total


def scene_loss(
    model: MspModel,
    cloud: PointCloud,
    mask: MaskResult,
    partitions: t.Sequence[ScPartition],
    weights: dict[str, float],
    keypoint_seed: int = 0,
) -> tuple[Tensor, dict[str, Tensor]]:
    """Weighted total and per-target losses of one masked scene, on the active tape."""
    remaining = encode_remaining(model, cloud, mask)
    decoded = decode(model, cloud, mask, remaining, seed=keypoint_seed)
    bundle = compute_targets(
        cloud,
        decoded.target_idx,
        model.spec.targets,
        model=model,
        partitions=partitions,
        pointset_k=model.spec.pointset_k,
        pointset_radius=model.spec.pointset_radius,
    )
    terms = target_losses(predict(model, decoded.features), bundle)
    return weighted_total(terms, weights), terms


def scene_forward(
    model: MspModel, cloud: PointCloud, config: MspConfig, step: int, scene_id: int
) -> SceneOutcome:
    """Augment, mask, encode, decode and score one scene on a fresh tape.

    Every random draw comes from ``(seed, step, scene_id)``.
    """
    rng = derive_rng(config.seed, step, scene_id)
    aug_seed, mask_seed, keypoint_seed = (int(s) for s in rng.integers(0, 2**62, size=3))
    cloud = augment(cloud, config.augment_spec(aug_seed, rng))
    try:
        mask = apply_mask(cloud, config.mask_spec(mask_seed))
        if mask.masked_idx.size == 0:
            msg = "mask selected no point"
            raise DegenerateMaskError(msg)
        with Tape() as tape:
            loss, terms = scene_loss(
                model, cloud, mask, config.partitions, config.target_weights, keypoint_seed
            )
    except DegenerateMaskError as e:
        get_logger().warning("step %d: skipping scene %d: %s", step + 1, scene_id, e)
        return SceneOutcome(skipped="degenerate_mask")
    except DegenerateTargetError as e:
        get_logger().warning("step %d: skipping scene %d: %s", step + 1, scene_id, e)
        return SceneOutcome(skipped="degenerate_target")
    return SceneOutcome(
        tape=tape,
        loss=loss,
        losses={name: term.item() for name, term in terms.items()},
        total=loss.item(),
    )


def _forward_all(
    model: MspModel,
    scenes: t.Sequence[PointCloud],
    scene_ids: t.Sequence[int],
    config: MspConfig,
    step: int,
    threads: int,
) -> list[SceneOutcome]:
    jobs = [partial(scene_forward, model, cloud, config, step, sid) for cloud, sid in zip(scenes, scene_ids)]
    if threads <= 1 or len(jobs) == 1:
        return [job() for job in jobs]

    results: list[SceneOutcome | None] = [None] * len(jobs)

    async def _run():
        limiter = anyio.CapacityLimiter(threads)

        async def _one(i):
            results[i] = await anyio.to_thread.run_sync(jobs[i], limiter=limiter)

        async with anyio.create_task_group() as tg:
            for i in range(len(jobs)):
                tg.start_soon(_one, i)

    anyio.run(_run)
    return t.cast("list[SceneOutcome]", results)


def train_step(
    model: MspModel,
    scenes: t.Sequence[PointCloud],
    config: MspConfig,
    optimizer: AdamWState,
    step: int,
    lr: float | None = None,
    scene_ids: t.Sequence[int] | None = None,
    threads: int | None = None,
    log=None,
) -> TrainMetrics:
    """One optimizer step over a batch of scenes.

    ``step`` is the 0-based global step; the returned metrics carry the
    1-based count of completed steps. The batch loss is the mean of the
    per-scene weighted totals over scenes that were not skipped.
    """
    if not scenes:
        msg = "a training batch needs at least one scene"
        raise EmptyInputError(msg)
    log = log or get_logger()
    lr = optimizer.lr if lr is None else lr
    scene_ids = list(range(len(scenes))) if scene_ids is None else list(scene_ids)
    threads = config.threads if threads is None else threads
    started = time.perf_counter()

    outcomes = _forward_all(model, scenes, scene_ids, config, step, threads)
    valid = [o for o in outcomes if o.skipped is None]
    skipped: dict[str, int] = {}
    for o in outcomes:
        if o.skipped is not None:
            skipped[o.skipped] = skipped.get(o.skipped, 0) + 1
    if not valid:
        msg = f"all {len(scenes)} scenes of the batch were degenerate"
        raise TrainingError(msg, step=step + 1)

    n = len(valid)
    loss_total = sum(o.total for o in valid) / n
    losses: dict[str, float | None] = {}
    for name in LOSS_TARGETS:
        if name in model.spec.targets:
            losses[name] = sum(o.losses[name] for o in valid) / n
        else:
            losses[name] = None
    if not math.isfinite(loss_total):
        msg = f"loss is not finite ({loss_total})"
        raise TrainingError(msg, step=step + 1)

    for o in valid:
        backward(o.tape, o.loss, grad_scale=1.0 / n)
    for name in model.params:
        p = model.params[name]
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
    adamw_step(optimizer, model.params, lr=lr)
    ema_update(model.ema, model.params)
    model.params.zero_grad()

    metrics = TrainMetrics(
        step=step + 1,
        loss_total=loss_total,
        losses=losses,
        lr=lr,
        seconds=time.perf_counter() - started,
        n_scenes=n,
        skipped=skipped,
    )
    log_train_step(log, metrics)
    return metrics


def write_metrics_csv(path: str, rows: t.Sequence[str], log=None) -> None:
    with atomic_writing(path, log=log) as f:
        f.write(METRICS_HEADER + "\n")
        for row in rows:
            f.write(row + "\n")


def read_metrics_csv(path: str) -> list[dict[str, float | None]]:
    """Rows of a metrics CSV; empty cells become None."""
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != METRICS_HEADER:
        msg = f"{path} is not a metrics CSV"
        raise ValueError(msg)
    columns = METRICS_HEADER.split(",")
    rows = []
    for line in lines[1:]:
        if not line:
            continue
        cells = line.split(",")
        rows.append({c: (float(v) if v else None) for c, v in zip(columns, cells)})
    return rows


def _existing_rows(path: str, upto: int) -> list[str]:
    if not os.path.isfile(path):
        return []
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()[1:]
    return [line for line in lines if line and int(line.split(",", 1)[0]) <= upto]


def steps_per_epoch(n_scenes: int, batch_size: int) -> int:
    return math.ceil(n_scenes / batch_size)


def epoch_batches(n_scenes: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Scene indices of each batch of ``epoch``, from a seeded shuffle."""
    order = derive_rng(seed, EPOCH_STREAM, epoch).permutation(n_scenes)
    return [order[i : i + batch_size] for i in range(0, n_scenes, batch_size)]


def pretrain(
    config: MspConfig,
    scenes: t.Sequence[PointCloud],
    out_dir: str | None = None,
    resume: Checkpoint | None = None,
    config_text: str | None = None,
    emit: EmitFn | None = None,
    log=None,
) -> Checkpoint:
    """Run ``epochs`` passes of :func:`train_step` over ``scenes``.

    With ``out_dir`` a metrics CSV and checkpoints (every
    ``checkpoint_every`` steps and at the end) are written there. A
    ``resume`` checkpoint continues from its step; since all randomness
    derives from ``(seed, step, scene)``, the continuation matches an
    unbroken run.
    """
    if not scenes:
        msg = "pre-training needs at least one scene"
        raise EmptyInputError(msg)
    log = log or get_logger()
    if config_text is None:
        from msp_pretrain.config_manager import render_run_config

        config_text = render_run_config(config)

    def _emit(action, **data):
        if emit is not None:
            emit(action, **data)

    spec = ModelSpec.from_config(config)
    model = MspModel.build(spec, config.seed)
    optimizer = AdamWState.for_params(model.params, lr=config.lr, weight_decay=config.weight_decay)
    start = 0
    if resume is not None:
        resume.restore(model, optimizer)
        start = resume.step
        log.info("Resuming pre-training at step %d", start)

    per_epoch = steps_per_epoch(len(scenes), config.batch_size)
    total = config.epochs * per_epoch
    checkpoints = None
    rows: list[str] = []
    metrics_path = None
    if out_dir is not None:
        checkpoints = FileCheckpoints(root_dir=os.fspath(out_dir))
        metrics_path = os.path.join(out_dir, METRICS_NAME)
        rows = _existing_rows(metrics_path, start) if resume is not None else []
    _emit("start", step=start, total_steps=total, arch=spec.arch)

    def _checkpoint() -> Checkpoint:
        ckpt = Checkpoint.capture(model, optimizer, config_text)
        if checkpoints is not None:
            paths = checkpoints.create_checkpoint(ckpt)
            write_metrics_csv(metrics_path, rows, log=log)
            _emit("checkpoint", step=ckpt.step, path=os.path.relpath(paths[0], out_dir))
        return ckpt

    epoch_losses: list[float] = []
    try:
        for step in range(start, total):
            epoch, index = divmod(step, per_epoch)
            batch = epoch_batches(len(scenes), config.batch_size, config.seed, epoch)[index]
            lr = scheduled_lr(config.lr, step, total, config.schedule)
            metrics = train_step(
                model,
                [scenes[i] for i in batch],
                config,
                optimizer,
                step,
                lr=lr,
                scene_ids=[int(i) for i in batch],
                log=log,
            )
            rows.append(metrics.csv_row())
            epoch_losses.append(metrics.loss_total)
            if index == per_epoch - 1:
                log.info(
                    "epoch %d/%d: mean loss %.6f over %d steps",
                    epoch + 1,
                    config.epochs,
                    sum(epoch_losses) / len(epoch_losses),
                    len(epoch_losses),
                )
                epoch_losses = []
            if config.checkpoint_every and metrics.step % config.checkpoint_every == 0 and metrics.step < total:
                _checkpoint()
    except TrainingError as e:
        _emit("abort", step=e.step if e.step is not None else optimizer.step, reason=str(e))
        if metrics_path is not None:
            write_metrics_csv(metrics_path, rows, log=log)
        raise

    final = _checkpoint()
    _emit("finish", step=final.step, total_steps=total)
    return final
