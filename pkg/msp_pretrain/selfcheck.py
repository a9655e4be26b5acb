"""Fast oracle suites and gradient checks on micro configurations.

Every check builds its own tiny scene and model, so the whole run takes
seconds. :func:`run_selfcheck` never raises for a failing check; it records
the failure and moves on.
"""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import math
import time
import typing as t
from dataclasses import dataclass

import numpy as np
from traitlets.log import get_logger

from msp_pretrain.autodiff import (
    Tensor,
    as_tensor,
    grad_check,
    layer_norm,
    linear,
    log,
    mul,
    relu,
    sigmoid,
    softmax_lastdim,
    sum_all,
    tanh,
)
from msp_pretrain.masking import MaskSpec, apply_mask
from msp_pretrain.nn import (
    AdamWState,
    EmaTracker,
    LocalAttentionBlock,
    ParamInit,
    ParamStore,
    ema_update,
    knn_search,
)
from msp_pretrain.pipeline.checkpoints import Checkpoint, checkpoint_bytes, parse_checkpoint
from msp_pretrain.pipeline.config import ARCHITECTURES, TARGETS, MspConfig
from msp_pretrain.pipeline.losses import (
    loss_chamfer,
    loss_color,
    loss_dsf,
    loss_sc,
    softmax_cross_entropy,
)
from msp_pretrain.pipeline.model import (
    MspModel,
    ModelSpec,
    build_mask_queries,
    decode,
    decode_ca,
    decode_ca_pp,
    encode_remaining,
)
from msp_pretrain.pipeline.trainer import scene_loss
from msp_pretrain.scene import PointCloud, SyntheticSceneSpec, generate_scene
from msp_pretrain.shape_context import (
    DEFAULT_PARTITIONS,
    compute_multiscale_sc,
    compute_shape_context,
    descriptor_length,
)
from msp_pretrain.utils import derive_rng, round_half_up

GRAD_TOL = 1e-5
GRAD_STEP = 1e-6
# coordinates probed per parameter in the end-to-end checks
E2E_COORDS = 2

MICRO_OVERRIDES: dict[str, t.Any] = {
    "width": 8,
    "heads": 2,
    "depth": 1,
    "encoder_depth": 1,
    "k": 4,
    "keypoints": 16,
    "sc_radius": 0.5,
    "sc_partitions": "2,4,3",
    "pointset_k": 4,
    "pointset_radius": 0.5,
    "mask_ratio": 0.5,
    "mask_block_size": 0.5,
    "jitter": 0.0,
    "flip": False,
    "rotation": False,
    "precision": "float64",
}


def micro_config(**overrides) -> MspConfig:
    """A tiny float64 configuration; ``overrides`` replace any trait."""
    return MspConfig(**{**MICRO_OVERRIDES, **overrides})


def micro_scene(seed: int = 0, points_per_primitive: int = 16, with_colors: bool = True) -> PointCloud:
    return generate_scene(
        SyntheticSceneSpec(points_per_primitive=points_per_primitive, with_colors=with_colors, seed=seed)
    )


def micro_model(config: MspConfig | None = None, seed: int = 0) -> MspModel:
    return MspModel.build(ModelSpec.from_config(config or micro_config()), seed)


@dataclass
class SelfCheckResult:
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0


class CheckFailed(AssertionError):
    pass


def _expect(condition: bool, message: str) -> None:
    if not condition:
        raise CheckFailed(message)


def _grad_report(name: str, report) -> str:
    _expect(report.passed, f"{name}: {report}")
    return f"max rel error {report.max_rel_error:.2e} over {report.n_checked} coords"


def check_descriptor_oracle() -> str:
    cloud = micro_scene(seed=1)
    pos = cloud.positions
    centers = pos[:12]
    kd = compute_multiscale_sc(centers, pos, DEFAULT_PARTITIONS, neighbor_search="kdtree")
    ex = compute_multiscale_sc(centers, pos, DEFAULT_PARTITIONS, neighbor_search="exhaustive")
    _expect(kd.shape == (12, 184), f"descriptor shape {kd.shape}, expected (12, 184)")
    _expect(np.array_equal(kd, ex), "kdtree and exhaustive descriptors differ")
    offset = 0
    for part in DEFAULT_PARTITIONS:
        single = compute_shape_context(centers[0], pos, part)
        _expect(
            np.array_equal(single.bits, kd[0, offset : offset + part.size]),
            f"single-scale descriptor of {part} differs from its multiscale slice",
        )
        offset += part.size

    # hand-binned: theta bins 0/1, phi bin 0, radial bins 1/2
    bits = compute_multiscale_sc(np.zeros((1, 3)), np.array([[0.05, 0.02, 0.03]]), DEFAULT_PARTITIONS)[0]
    lit = np.flatnonzero(bits).tolist()
    _expect(lit == [1, 66], f"single-neighbor bits {lit}, expected [1, 66]")
    return f"{kd.shape[0]} centers x {descriptor_length(DEFAULT_PARTITIONS)} bits"


def check_masking() -> str:
    cloud = micro_scene(seed=2)
    spec = MaskSpec(ratio=0.5, block_size=0.5, seed=3)
    mask = apply_mask(cloud, spec)
    masked, remaining = set(mask.masked_idx.tolist()), set(mask.remaining_idx.tolist())
    _expect(not masked & remaining, "masked and remaining sets overlap")
    _expect(masked | remaining == set(range(len(cloud))), "masked and remaining do not cover the cloud")
    n_blocks = len(mask.grid)
    _expect(
        len(mask.masked_blocks) == round_half_up(spec.ratio * n_blocks),
        f"{len(mask.masked_blocks)} masked blocks of {n_blocks}",
    )
    for i, block in enumerate(mask.grid.point_blocks):
        inside = tuple(int(v) for v in block) in mask.masked_blocks
        _expect(inside == (i in masked), f"point {i} disagrees with its block's mask state")
    again = apply_mask(cloud, spec)
    _expect(np.array_equal(again.masked_idx, mask.masked_idx), "masking is not deterministic per seed")
    return f"{len(mask.masked_blocks)}/{n_blocks} blocks, {len(masked)} points masked"


def check_ema() -> str:
    online = ParamStore()
    online.add("encoder.w", np.array([1.0, -2.0, 4.0]))
    online.add("head.b", np.array([7.0]))
    tracker = EmaTracker.track(online, decay=0.9)
    start = tracker.shadow["encoder.w"].data.copy()
    online["encoder.w"].data[...] = [3.0, 0.0, -1.0]
    n = 5
    for _ in range(n):
        ema_update(tracker, online)
    m = 0.9**n
    expected = m * start + (1.0 - m) * online["encoder.w"].data
    shadow = tracker.shadow["encoder.w"].data
    _expect(np.allclose(shadow, expected, rtol=0, atol=1e-12), "EMA differs from closed form")
    _expect("head.b" not in tracker.shadow, "EMA tracks a non-encoder parameter")
    return f"{n} updates at m=0.9"


def check_loss_values() -> str:
    z = Tensor(np.zeros((3, 5)))
    y = np.array([[0, 1, 0, 1, 1], [1, 1, 1, 1, 1], [0, 0, 0, 0, 0]])
    _expect(abs(loss_sc(z, y).item() - math.log(2.0)) < 1e-12, "BCE at zero logits is not log 2")

    v = np.array([[1.0, 2.0, -1.0], [0.5, 0.0, 3.0]])
    _expect(abs(loss_dsf(Tensor(v.copy()), v).item()) < 1e-12, "cosine loss of equal rows is not 0")
    _expect(abs(loss_dsf(Tensor(-v), v).item() - 2.0) < 1e-12, "cosine loss of opposite rows is not 2")

    pred = Tensor(np.array([[0.0, 0.5, 1.0]]))
    mse = loss_color(pred, np.array([[1.0, 0.5, 0.0]])).item()
    _expect(abs(mse - 2.0 / 3.0) < 1e-12, "color MSE is wrong")

    pts = np.array([[0.0, 0.0, 0.1], [0.1, 0.0, 0.0]])
    same = loss_chamfer(Tensor(pts[None].copy()), [pts]).item()
    _expect(abs(same) < 1e-12, "Chamfer of equal sets is not 0")
    shifted = loss_chamfer(Tensor(pts[None] + [0.0, 0.0, 0.1]), [pts]).item()
    _expect(shifted > 0.0, "Chamfer of shifted sets is not positive")

    ce = softmax_cross_entropy(Tensor(np.zeros((2, 4))), np.array([0, 3])).item()
    _expect(abs(ce - math.log(4.0)) < 1e-12, "cross-entropy at zero logits is not log 4")
    return "BCE, cosine, MSE, Chamfer, cross-entropy"


def _weights(rng, *shape) -> np.ndarray:
    return rng.normal(size=shape)


def check_grad_layers() -> str:
    rng = derive_rng(11)
    checked: list[str] = []

    def record(name: str, report) -> None:
        _grad_report(name, report)
        checked.append(name)

    x = Tensor(_weights(rng, 5, 4), requires_grad=True, name="x")
    w = Tensor(_weights(rng, 4, 3), requires_grad=True, name="w")
    b = Tensor(_weights(rng, 3), requires_grad=True, name="b")
    c = _weights(rng, 5, 3)
    report = grad_check(lambda x, w, b: sum_all(mul(linear(x, w, b), c)), [x, w, b])
    record("linear", report)

    x = Tensor(_weights(rng, 4, 6), requires_grad=True, name="x")
    g = Tensor(1.0 + 0.1 * _weights(rng, 6), requires_grad=True, name="gain")
    bias = Tensor(_weights(rng, 6), requires_grad=True, name="bias")
    c = _weights(rng, 4, 6)
    report = grad_check(lambda x, g, b: sum_all(mul(layer_norm(x, g, b), c)), [x, g, bias])
    record("layer_norm", report)

    x = Tensor(_weights(rng, 3, 2, 5), requires_grad=True, name="scores")
    c = _weights(rng, 3, 2, 5)
    report = grad_check(lambda x: sum_all(mul(softmax_lastdim(x), c)), [x])
    record("softmax", report)

    # keep relu inputs away from the kink
    raw = _weights(rng, 4, 3)
    x = Tensor(np.where(np.abs(raw) < 0.1, raw + 0.3, raw), requires_grad=True, name="x")
    c = _weights(rng, 4, 3)
    for op in (relu, tanh, sigmoid):
        report = grad_check(lambda x, op=op: sum_all(mul(op(x), c)), [x])
        record(op.__name__, report)

    x = Tensor(rng.uniform(0.5, 2.0, size=(4, 3)), requires_grad=True, name="x")
    record("log", grad_check(lambda x: sum_all(mul(log(x), c)), [x]))

    store = ParamStore()
    block = LocalAttentionBlock("block", 8, 2)
    block.init_params(ParamInit(store, derive_rng(12)))
    q_pos, k_pos = rng.uniform(size=(3, 3)), rng.uniform(size=(6, 3))
    graph = knn_search(q_pos, k_pos, 4)
    qf = Tensor(_weights(rng, 3, 8), requires_grad=True, name="queries")
    kf = Tensor(_weights(rng, 6, 8), requires_grad=True, name="keys")
    c = _weights(rng, 3, 8)

    def attention(qf, kf, *params):
        return sum_all(mul(block(store, qf, q_pos, kf, k_pos, graph), c))

    params = [store[n] for n in store]
    record("attention", grad_check(attention, [qf, kf] + params, max_coords=6))

    logits = Tensor(_weights(rng, 4, 5), requires_grad=True, name="logits")
    target_bits = (rng.uniform(size=(4, 5)) < 0.5).astype(np.float64)
    record("loss_sc", grad_check(lambda z: loss_sc(z, target_bits), [logits]))
    pred = Tensor(_weights(rng, 4, 5), requires_grad=True, name="pred")
    target = _weights(rng, 4, 5)
    record("loss_dsf", grad_check(lambda p: loss_dsf(p, target), [pred]))
    sets = [rng.uniform(-0.2, 0.2, size=(n, 3)) for n in (3, 5)]
    offsets = Tensor(rng.uniform(-0.2, 0.2, size=(2, 4, 3)), requires_grad=True, name="offsets")
    record("loss_chamfer", grad_check(lambda p: loss_chamfer(p, sets), [offsets]))
    labels = np.array([0, 2, 1, 3])
    logits = Tensor(_weights(rng, 4, 4), requires_grad=True, name="class_logits")
    report = grad_check(lambda z: softmax_cross_entropy(z, labels), [logits])
    record("cross_entropy", report)
    return f"{len(checked)} layer types: {', '.join(checked)}"


def _e2e_report(config: MspConfig, seed: int = 0):
    cloud = micro_scene(seed=seed)
    model = micro_model(config, seed=seed)
    mask = apply_mask(cloud, config.mask_spec(seed + 1))
    partitions, weights = config.partitions, config.target_weights
    params = [model.params[n] for n in model.params]

    def total(*_params):
        return scene_loss(model, cloud, mask, partitions, weights, keypoint_seed=seed)[0]

    return grad_check(total, params, h=GRAD_STEP, tol=GRAD_TOL, max_coords=E2E_COORDS, seed=seed)


def check_grad_architectures() -> str:
    worst = 0.0
    for arch in ARCHITECTURES:
        report = _e2e_report(micro_config(arch=arch, targets=list(TARGETS)))
        _grad_report(f"end-to-end {arch}", report)
        worst = max(worst, report.max_rel_error)
    return f"{', '.join(ARCHITECTURES)} with every target; max rel error {worst:.2e}"


def check_grad_targets() -> str:
    worst = 0.0
    for target in TARGETS:
        report = _e2e_report(micro_config(targets=[target]))
        _grad_report(f"end-to-end {target}", report)
        worst = max(worst, report.max_rel_error)
    return f"{', '.join(TARGETS)} alone; max rel error {worst:.2e}"


def check_structural_leakage() -> str:
    cloud = micro_scene(seed=4)
    mask = apply_mask(cloud, MaskSpec(ratio=0.5, block_size=0.5, seed=5))
    query_pos = cloud.positions[mask.masked_idx]
    remaining_pos = cloud.positions[mask.remaining_idx]
    center = cloud.aabb.center
    for arch, run in (("CA", decode_ca), ("CA++", decode_ca_pp)):
        model = micro_model(micro_config(arch=arch))
        feats = encode_remaining(model, cloud, mask)
        base_q = build_mask_queries(model, query_pos, center)
        base = run(model, base_q, query_pos, feats, remaining_pos).data
        for j in range(query_pos.shape[0]):
            bumped = base_q.data.copy()
            bumped[j] += 1.0
            out = run(model, as_tensor(bumped), query_pos, feats, remaining_pos).data
            others = np.arange(out.shape[0]) != j
            _expect(
                np.array_equal(out[others], base[others]),
                f"{arch}: query {j} changed another masked output",
            )

    model = micro_model(micro_config(arch="SA"))
    feats = encode_remaining(model, cloud, mask)
    result = decode(model, cloud, mask, feats, seed=6)
    keypoints = set(result.keypoint_idx.tolist())
    _expect(set(result.key_idx.tolist()) <= keypoints, "SA graph nodes outside the keypoint set")
    _expect(
        result.knn_index.min() >= 0 and result.knn_index.max() < result.key_idx.size,
        "SA attention index points outside the keypoint nodes",
    )
    return f"{query_pos.shape[0]} masked queries perturbed; SA graph over {len(keypoints)} keypoints"


def check_checkpoint_bytes() -> str:
    model = micro_model()
    optimizer = AdamWState.for_params(model.params, lr=1e-3)
    ckpt = Checkpoint.capture(model, optimizer, config_text="run.seed = 0\n")
    data = checkpoint_bytes(ckpt)
    again = checkpoint_bytes(parse_checkpoint(data))
    _expect(data == again, "checkpoint bytes change after a reload")
    return f"{len(data)} bytes"


CHECKS: dict[str, t.Callable[[], str]] = {
    "descriptor oracle": check_descriptor_oracle,
    "masking exactness": check_masking,
    "EMA closed form": check_ema,
    "loss unit values": check_loss_values,
    "layer gradients": check_grad_layers,
    "architecture gradients": check_grad_architectures,
    "target gradients": check_grad_targets,
    "structural leakage": check_structural_leakage,
    "checkpoint idempotence": check_checkpoint_bytes,
}


def run_selfcheck(log=None, names: t.Iterable[str] | None = None) -> list[SelfCheckResult]:
    """Run the named checks (all by default) and collect their outcomes."""
    log = log or get_logger()
    results = []
    for name in names or CHECKS:
        start = time.perf_counter()
        try:
            detail = CHECKS[name]()
            passed = True
        except Exception as e:
            detail = f"{type(e).__name__}: {e}"
            passed = False
            log.error("selfcheck %s failed: %s", name, detail)
        seconds = time.perf_counter() - start
        log.debug("selfcheck %s: %s (%.2fs)", name, "pass" if passed else "FAIL", seconds)
        results.append(SelfCheckResult(name, passed, detail, seconds))
    return results


def format_results(results: t.Sequence[SelfCheckResult]) -> str:
    width = max((len(r.name) for r in results), default=0)
    lines = [
        f"{'PASS' if r.passed else 'FAIL'}  {r.name.ljust(width)}  {r.seconds:6.2f}s  {r.detail}"
        for r in results
    ]
    failed = sum(not r.passed for r in results)
    lines.append(f"{len(results) - failed} passed, {failed} failed")
    return "\n".join(lines) + "\n"
