"""Configuration of the leakage and linear probes."""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

from traitlets import Float, Integer, List, TraitError, validate
from traitlets.config import LoggingConfigurable


class ProbeConfig(LoggingConfigurable):
    """Knobs of ``probe-leakage``, ``probe-linear`` and ``compare``."""

    keep_fractions = List(
        Float(),
        default_value=[1.0, 0.25, 0.05],
        config=True,
        help="Subsampling keep fractions the leakage adversary is evaluated at.",
    )
    seeds = List(
        Integer(),
        default_value=[0, 1, 2, 3, 4],
        config=True,
        help="Seeds of the subsampling draws (leakage) and of the probe runs (linear).",
    )
    max_centers = Integer(
        0,
        config=True,
        help="Masked centers evaluated per scene by the leakage probe (0 keeps all).",
    )
    steps = Integer(200, config=True, help="Optimizer steps of the linear classifier.")
    lr = Float(1e-2, config=True, help="Learning rate of the linear classifier.")
    weight_decay = Float(0.0, config=True, help="AdamW weight decay of the linear classifier.")
    train_fraction = Float(
        0.5,
        config=True,
        help="Fraction of scenes the linear classifier trains on; the rest are held out.",
    )
    split_seed = Integer(0, config=True, help="Seed of the train/held-out scene split.")
    leakage_margin = Float(
        0.05,
        config=True,
        help="Minimum recall drop between consecutive keep fractions for the leakage check.",
    )
    accuracy_margin = Float(
        0.03,
        config=True,
        help="Minimum accuracy gain of the pretrained arm over scratch for the probe check.",
    )

    @validate("keep_fractions")
    def _validate_keep_fractions(self, proposal):
        value = proposal["value"]
        if not value:
            msg = "keep_fractions must not be empty"
            raise TraitError(msg)
        for f in value:
            if not 0.0 < f <= 1.0:
                msg = f"keep fraction {f} is outside (0, 1]"
                raise TraitError(msg)
        return value

    @validate("seeds")
    def _validate_seeds(self, proposal):
        if not proposal["value"]:
            msg = "at least one seed is required"
            raise TraitError(msg)
        return proposal["value"]

    @validate("train_fraction")
    def _validate_train_fraction(self, proposal):
        value = proposal["value"]
        if not 0.0 < value < 1.0:
            msg = f"train_fraction must lie in (0, 1), got {value}"
            raise TraitError(msg)
        return value

    @validate("steps", "max_centers")
    def _validate_non_negative(self, proposal):
        if proposal["value"] < 0:
            msg = f"{proposal['trait'].name} must be non-negative, got {proposal['value']}"
            raise TraitError(msg)
        return proposal["value"]

    @validate("lr")
    def _validate_lr(self, proposal):
        if proposal["value"] <= 0:
            msg = f"lr must be positive, got {proposal['value']}"
            raise TraitError(msg)
        return proposal["value"]
