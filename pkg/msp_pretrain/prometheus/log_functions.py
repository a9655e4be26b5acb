"""Log functions for prometheus"""

from .metrics import SCENES_SKIPPED_TOTAL, TRAIN_LOSS, TRAIN_STEP_DURATION_SECONDS


def prometheus_log_step(metrics):
    """
    Record the metrics of one training step.

    We record the following metrics:
       Duration - wall time of the step.
       Loss - the weighted total and every enabled per-target loss.
       Skips - scenes dropped from the batch, by reason.
    """
    TRAIN_STEP_DURATION_SECONDS.observe(metrics.seconds)
    TRAIN_LOSS.labels(target="total").set(metrics.loss_total)
    for target, value in metrics.losses.items():
        if value is not None:
            TRAIN_LOSS.labels(target=target).set(value)
    for reason, count in metrics.skipped.items():
        SCENES_SKIPPED_TOTAL.labels(reason=reason).inc(count)
