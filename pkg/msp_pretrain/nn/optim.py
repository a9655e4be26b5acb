"""AdamW with decoupled weight decay, and learning-rate schedules."""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from msp_pretrain.exceptions import ContractError

from .params import ParamStore

SCHEDULES = ("cosine", "constant")


@dataclass
class AdamWState:
    lr: float = 1e-3
    weight_decay: float = 0.1
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamStore, **kwargs) -> AdamWState:
        state = cls(**kwargs)
        for name in params:
            state.m[name] = np.zeros_like(params[name].data)
            state.v[name] = np.zeros_like(params[name].data)
        return state


def adamw_step(state: AdamWState, params: ParamStore, lr: float | None = None) -> None:
    """One bias-corrected Adam update plus decoupled decay on the pre-step weights.

    Gradients are left in place; the caller zeroes them.
    """
    missing = [name for name in params if params[name].grad is None]
    if missing:
        msg = f"parameter {missing[0]!r} has no gradient ({len(missing)} missing)"
        raise ContractError(msg)
    lr = state.lr if lr is None else lr
    beta1, beta2 = state.betas
    t = state.step + 1
    correction1 = 1.0 - beta1**t
    correction2 = 1.0 - beta2**t
    for name in params:
        p = params[name]
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        if m.shape != p.shape:
            msg = f"moment shape {m.shape} does not match parameter {name!r} {p.shape}"
            raise ContractError(msg)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        update = (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        p.data[...] = p.data - lr * update - lr * state.weight_decay * p.data
    state.step = t


def scheduled_lr(base_lr: float, step: int, total_steps: int, schedule: str = "cosine") -> float:
    """Learning rate for the 0-based ``step`` of ``total_steps``."""
    if schedule not in SCHEDULES:
        msg = f"unknown schedule {schedule!r}; expected one of {SCHEDULES}"
        raise ValueError(msg)
    if schedule == "constant" or total_steps <= 0:
        return base_lr
    progress = min(max(step, 0), total_steps) / total_steps
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
