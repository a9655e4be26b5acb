"""Finite-difference verification of recorded gradients."""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import typing as t
from dataclasses import dataclass, field

import numpy as np

from msp_pretrain.exceptions import ContractError
from msp_pretrain.utils import derive_rng

from .tensor import Tape, Tensor, backward, no_grad

# Relative error is |a - n| / max(|a| + |n|, REL_FLOOR).
REL_FLOOR = 1e-3


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    n_checked: int
    worst: tuple[str, tuple[int, ...], float, float] | None = None
    per_input: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= self.tol)

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        text = f"{status}: max rel error {self.max_rel_error:.3e} (tol {self.tol:.1e}, {self.n_checked} coords)"
        if self.worst is not None and not self.passed:
            name, idx, a, n = self.worst
            text += f"; worst {name}{list(idx)} analytic {a:.6e} numeric {n:.6e}"
        return text


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic) + abs(numeric), REL_FLOOR)


def grad_check(
    f: t.Callable[..., Tensor],
    inputs: t.Sequence[Tensor],
    h: float = 1e-6,
    tol: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare ``backward`` against central differences ``(f(x+h) - f(x-h)) / 2h``.

    ``f(*inputs)`` must return a scalar tensor and read the inputs' buffers
    on every call. With ``max_coords`` only that many coordinates per input
    are probed, picked with ``seed``. Existing ``.grad`` values are restored.
    """
    if not h > 0:
        msg = f"finite-difference step must be > 0, got {h}"
        raise ContractError(msg)
    inputs = list(inputs)
    saved = [x.grad for x in inputs]
    for x in inputs:
        x.grad = None
    try:
        with Tape() as tape:
            loss = f(*inputs)
        backward(tape, loss)
        analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]
    finally:
        for x, g in zip(inputs, saved):
            x.grad = g

    rng = derive_rng(seed)
    report = GradCheckReport(max_rel_error=0.0, tol=tol, n_checked=0)
    for i, (x, grad) in enumerate(zip(inputs, analytic)):
        name = x.name or f"input{i}"
        flat_idx = np.arange(x.size)
        if max_coords is not None and x.size > max_coords:
            flat_idx = np.sort(rng.choice(x.size, size=max_coords, replace=False))
        worst_here = 0.0
        for flat in flat_idx:
            idx = np.unravel_index(int(flat), x.shape) if x.ndim else ()
            orig = x.data[idx].copy()
            with no_grad():
                x.data[idx] = orig + h
                up = f(*inputs).item()
                x.data[idx] = orig - h
                down = f(*inputs).item()
            x.data[idx] = orig
            numeric = (up - down) / (2.0 * h)
            a = float(grad[idx])
            err = relative_error(a, numeric)
            report.n_checked += 1
            worst_here = max(worst_here, err)
            if report.worst is None or err > report.max_rel_error:
                report.max_rel_error = err
                report.worst = (name, tuple(int(v) for v in idx), a, numeric)
        report.per_input[name] = worst_here
    return report
