"""Log utilities."""

# -----------------------------------------------------------------------------
#  Copyright (c) MSP Pretrain Development Team
#
#  Distributed under the terms of the BSD License.  The full license is in
#  the file LICENSE, distributed as part of this software.
# -----------------------------------------------------------------------------
from __future__ import annotations

import logging
import os

from .prometheus.log_functions import prometheus_log_step

LOG_ENV = "MSP_LOG"

# MSP_LOG values, mapped to logging levels
_ENV_LEVELS = {
    "quiet": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def log_level_from_env(default: int = logging.INFO) -> int:
    """Logging level requested through ``MSP_LOG``; unknown values fall back to ``default``."""
    value = os.environ.get(LOG_ENV, "").strip().lower()
    return _ENV_LEVELS.get(value, default)


def log_train_step(log, metrics):
    """log one training step and record its prometheus metrics

    - step lines are debug-level (an epoch summary is logged at info)
    - skipped scenes are warnings
    """
    parts = [f"loss {metrics.loss_total:.6f}"]
    for target, value in metrics.losses.items():
        if value is not None:
            parts.append(f"{target} {value:.6f}")
    msg = "step {step} {losses} lr {lr:.3e} ({seconds:.2f}s, {n_scenes} scenes)".format(
        step=metrics.step,
        losses=" ".join(parts),
        lr=metrics.lr,
        seconds=metrics.seconds,
        n_scenes=metrics.n_scenes,
    )
    log.debug(msg)
    n_skipped = sum(metrics.skipped.values())
    if n_skipped:
        reasons = ", ".join(f"{n} {reason}" for reason, n in sorted(metrics.skipped.items()))
        log.warning("step %d skipped %d scene(s): %s", metrics.step, n_skipped, reasons)
    prometheus_log_step(metrics)
