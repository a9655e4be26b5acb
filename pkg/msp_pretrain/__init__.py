"""Masked shape prediction pre-training for 3D point clouds."""

import pathlib

DEFAULT_EVENTS_SCHEMA_PATH = pathlib.Path(__file__).parent / "event_schemas"
MSP_EVENTS_URI = "https://events.msp-pretrain.org/msp_pretrain"

# Synthetic primitive classes, in label-id order.
PRIMITIVE_CLASSES = ("plane", "box", "sphere", "cylinder")

from ._version import __version__, version_info

__all__ = [
    "DEFAULT_EVENTS_SCHEMA_PATH",
    "MSP_EVENTS_URI",
    "PRIMITIVE_CLASSES",
    "__version__",
    "version_info",
]
