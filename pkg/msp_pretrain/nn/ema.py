"""Exponential moving average of a parameter subset."""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

from msp_pretrain.exceptions import ContractError

from .params import ParamStore


class EmaTracker:
    """A gradient-free shadow of the ``prefix`` parameters of an online store."""

    def __init__(self, shadow: ParamStore, decay: float, prefix: str = "encoder.") -> None:
        if not 0.0 <= decay <= 1.0:
            msg = f"EMA decay must lie in [0, 1], got {decay}"
            raise ValueError(msg)
        self.shadow = shadow
        self.decay = float(decay)
        self.prefix = prefix

    @classmethod
    def track(cls, online: ParamStore, decay: float, prefix: str = "encoder.") -> EmaTracker:
        return cls(online.subset(prefix).copy(requires_grad=False), decay, prefix)


def ema_update(tracker: EmaTracker, online: ParamStore) -> None:
    """shadow <- m * shadow + (1 - m) * online, for every tracked parameter."""
    tracked = online.subset(tracker.prefix)
    if set(tracked) != set(tracker.shadow):
        extra = sorted(set(tracked) ^ set(tracker.shadow))
        msg = f"EMA shadow does not mirror the online store: {extra[:3]}"
        raise ContractError(msg)
    m = tracker.decay
    for name in tracker.shadow:
        s, o = tracker.shadow[name], tracked[name]
        if s.shape != o.shape:
            msg = f"EMA shadow {name!r} has shape {s.shape}, online {o.shape}"
            raise ContractError(msg)
        s.data[...] = m * s.data + (1.0 - m) * o.data
