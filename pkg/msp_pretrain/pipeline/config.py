"""Configuration of the masked shape prediction pretext task."""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import numpy as np
from traitlets import Bool, Enum, Float, Integer, List, TraitError, Unicode, default, validate
from traitlets.config import LoggingConfigurable

from msp_pretrain.autodiff import DTYPES
from msp_pretrain.exceptions import InvalidSpecError
from msp_pretrain.masking import MaskSpec
from msp_pretrain.nn import SCHEDULES
from msp_pretrain.scene import AugmentSpec
from msp_pretrain.shape_context import ScPartition, parse_partitions

ARCHITECTURES = ("CA", "CA++", "SA")
TARGETS = ("sc", "dsf", "color", "pointset")
PROFILES = ("desk", "paper")

# width, depth, heads, keypoints, epochs, batch size
PROFILE_DEFAULTS = {
    "desk": {"width": 64, "depth": 2, "heads": 4, "keypoints": 512, "epochs": 75, "batch_size": 2},
    "paper": {"width": 576, "depth": 6, "heads": 12, "keypoints": 10000, "epochs": 600, "batch_size": 8},
}


class MspConfig(LoggingConfigurable):
    """Every knob of a pre-training run.

    Model sizes, keypoint budget, epochs and batch size default from
    ``profile``; everything else has a fixed default.
    """

    profile = Enum(
        list(PROFILES),
        default_value="desk",
        config=True,
        help="Size profile: 'desk' for CPU-scale runs, 'paper' for the full-size model.",
    )
    seed = Integer(0, config=True, help="Seed every random stream of the run derives from.")
    threads = Integer(1, config=True, help="Worker threads for per-scene forward passes.")

    mask_ratio = Float(0.6, config=True, help="Fraction r of non-empty blocks to mask.")
    mask_block_size = Float(0.3, config=True, help="Side w (meters) of the masking blocks.")

    sc_radius = Float(0.15, config=True, help="Shape-context ball radius R (meters).")
    sc_xi = Float(0.3, config=True, help="Shape-context radial log-warp xi.")
    sc_partitions = Unicode(
        "2,4,3; 4,8,5",
        config=True,
        help="""Shape-context scales as ';'-separated 'ntheta,nphi,nrad' triples.
        An entry may add its own ',R,xi'.""",
    )

    arch = Enum(list(ARCHITECTURES), default_value="SA", config=True, help="Decoder architecture.")
    width = Integer(config=True, help="Model width C.")
    depth = Integer(config=True, help="Decoder blocks L.")
    encoder_depth = Integer(config=True, help="Encoder blocks (defaults to the decoder depth).")
    heads = Integer(config=True, help="Attention heads H; must divide the width.")
    k = Integer(32, config=True, help="Neighbors per query in local attention.")
    keypoints = Integer(config=True, help="Keypoints sampled by the SA decoder.")
    ln_eps = Float(1e-5, config=True, help="Layer-norm epsilon.")

    targets = List(
        Unicode(),
        default_value=["sc", "dsf", "color"],
        config=True,
        help="Enabled reconstruction targets, a subset of sc, dsf, color, pointset.",
    )
    weight_sc = Float(1.0, config=True, help="Loss weight of the shape-context target.")
    weight_dsf = Float(1.0, config=True, help="Loss weight of the deep shape feature target.")
    weight_color = Float(1.0, config=True, help="Loss weight of the color target.")
    weight_pointset = Float(1.0, config=True, help="Loss weight of the point-set target.")
    pointset_k = Integer(200, config=True, help="Point-set size K.")
    pointset_radius = Float(0.15, config=True, help="Point-set neighborhood radius (meters).")

    ema_decay = Float(0.999, config=True, help="EMA decay m of the target encoder.")

    lr = Float(1e-3, config=True, help="Peak learning rate.")
    weight_decay = Float(0.1, config=True, help="Decoupled AdamW weight decay.")
    schedule = Enum(list(SCHEDULES), default_value="cosine", config=True, help="Learning-rate schedule.")
    epochs = Integer(config=True, help="Passes over the scene set.")
    batch_size = Integer(config=True, help="Scenes per step.")
    checkpoint_every = Integer(100, config=True, help="Steps between periodic checkpoints (0 disables).")
    precision = Enum(list(DTYPES), default_value="float64", config=True, help="Parameter dtype.")

    jitter = Float(0.002, config=True, help="Gaussian jitter sigma (meters).")
    flip = Bool(True, config=True, help="Randomly mirror x and y.")
    rotation = Bool(True, config=True, help="Randomly rotate about +z.")

    def _profile_value(self, key):
        return PROFILE_DEFAULTS[self.profile][key]

    @default("width")
    def _width_default(self):
        return self._profile_value("width")

    @default("depth")
    def _depth_default(self):
        return self._profile_value("depth")

    @default("encoder_depth")
    def _encoder_depth_default(self):
        return self.depth

    @default("heads")
    def _heads_default(self):
        return self._profile_value("heads")

    @default("keypoints")
    def _keypoints_default(self):
        return self._profile_value("keypoints")

    @default("epochs")
    def _epochs_default(self):
        return self._profile_value("epochs")

    @default("batch_size")
    def _batch_size_default(self):
        return self._profile_value("batch_size")

    @validate("mask_ratio")
    def _validate_ratio(self, proposal):
        if not 0.0 <= proposal["value"] <= 1.0:
            msg = f"mask_ratio must lie in [0, 1], got {proposal['value']}"
            raise TraitError(msg)
        return proposal["value"]

    @validate("mask_block_size", "sc_radius", "sc_xi", "pointset_radius", "lr")
    def _validate_positive_float(self, proposal):
        if not proposal["value"] > 0:
            msg = f"{proposal['trait'].name} must be > 0, got {proposal['value']}"
            raise TraitError(msg)
        return proposal["value"]

    @validate("width", "depth", "heads", "k", "keypoints", "pointset_k", "batch_size", "threads")
    def _validate_positive_int(self, proposal):
        if proposal["value"] < 1:
            msg = f"{proposal['trait'].name} must be at least 1, got {proposal['value']}"
            raise TraitError(msg)
        return proposal["value"]

    @validate("encoder_depth", "epochs", "checkpoint_every")
    def _validate_non_negative(self, proposal):
        if proposal["value"] < 0:
            msg = f"{proposal['trait'].name} must be non-negative, got {proposal['value']}"
            raise TraitError(msg)
        return proposal["value"]

    @validate("ema_decay")
    def _validate_decay(self, proposal):
        if not 0.0 <= proposal["value"] <= 1.0:
            msg = f"ema_decay must lie in [0, 1], got {proposal['value']}"
            raise TraitError(msg)
        return proposal["value"]

    @validate("targets")
    def _validate_targets(self, proposal):
        value = [t.strip().lower() for t in proposal["value"] if t.strip()]
        unknown = sorted(set(value) - set(TARGETS))
        if unknown:
            msg = f"unknown targets {unknown}; expected a subset of {list(TARGETS)}"
            raise TraitError(msg)
        if not value:
            msg = "at least one target must be enabled"
            raise TraitError(msg)
        return [t for t in TARGETS if t in value]

    @validate("sc_partitions")
    def _validate_partitions(self, proposal):
        try:
            parse_partitions(proposal["value"])
        except InvalidSpecError as e:
            raise TraitError(str(e)) from None
        return proposal["value"]

    def check(self) -> None:
        """Checks that span several traits."""
        if self.width % self.heads:
            msg = f"width {self.width} is not divisible by heads {self.heads}"
            raise TraitError(msg)
        if self.arch == "SA" and self.keypoints < 2:
            msg = f"the SA decoder needs at least 2 keypoints, got {self.keypoints}"
            raise TraitError(msg)

    @property
    def partitions(self) -> tuple[ScPartition, ...]:
        return parse_partitions(self.sc_partitions, self.sc_radius, self.sc_xi)

    @property
    def sc_bits(self) -> int:
        return sum(p.size for p in self.partitions)

    @property
    def dtype(self) -> type[np.floating]:
        return DTYPES[self.precision]

    @property
    def target_weights(self) -> dict[str, float]:
        return {t: float(getattr(self, f"weight_{t}")) for t in self.targets}

    def mask_spec(self, seed: int) -> MaskSpec:
        return MaskSpec(ratio=self.mask_ratio, block_size=self.mask_block_size, seed=seed)

    def augment_spec(self, seed: int, rng: np.random.Generator) -> AugmentSpec:
        """A concrete augmentation drawn from ``rng``; ``seed`` drives jitter and rotation."""
        flips = frozenset(a for a in ("x", "y") if self.flip and rng.random() < 0.5)
        return AugmentSpec(
            jitter_sigma=self.jitter,
            flip_axes=flips,
            rotation_z=None if self.rotation else 0.0,
            seed=seed,
        )
