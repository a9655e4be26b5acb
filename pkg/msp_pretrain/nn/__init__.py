from .attention import DEFAULT_LN_EPS, FFN_EXPANSION, LocalAttentionBlock, local_attention
from .ema import EmaTracker, ema_update
from .knn import knn_search
from .optim import SCHEDULES, AdamWState, adamw_step, scheduled_lr
from .params import ParamInit, ParamStore

__all__ = [
    "DEFAULT_LN_EPS",
    "FFN_EXPANSION",
    "SCHEDULES",
    "AdamWState",
    "EmaTracker",
    "LocalAttentionBlock",
    "ParamInit",
    "ParamStore",
    "adamw_step",
    "ema_update",
    "knn_search",
    "local_attention",
    "scheduled_lr",
]
