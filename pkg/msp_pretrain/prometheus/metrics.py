"""
Prometheus metrics exported by msp_pretrain training runs

Read https://prometheus.io/docs/practices/naming/ for naming
conventions for metrics & labels.
"""

from prometheus_client import Counter, Gauge, Histogram

TRAIN_STEP_DURATION_SECONDS = Histogram(
    "msp_train_step_duration_seconds",
    "duration in seconds of one optimizer step, forward to EMA update",
)

TRAIN_LOSS = Gauge(
    "msp_train_loss",
    "loss of the most recent step labeled by target (total for the weighted sum)",
    ["target"],
)

SCENES_SKIPPED_TOTAL = Counter(
    "msp_scenes_skipped_total",
    "counter for scenes dropped from a batch labeled by reason",
    ["reason"],
)

CHECKPOINTS_WRITTEN_TOTAL = Counter(
    "msp_checkpoints_written_total",
    "counter for checkpoint files written",
)


__all__ = [
    "TRAIN_STEP_DURATION_SECONDS",
    "TRAIN_LOSS",
    "SCENES_SKIPPED_TOTAL",
    "CHECKPOINTS_WRITTEN_TOTAL",
]
