"""Exception classes raised across msp_pretrain."""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations


class MspError(Exception):
    """Base class for errors raised by msp_pretrain."""


class InvalidCloudError(MspError, ValueError):
    """A point cloud violates one of its invariants."""


class CloudParseError(MspError, ValueError):
    """A cloud file does not conform to its declared format."""

    def __init__(self, path: str, line_no: int, reason: str) -> None:
        self.path = path
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"{path}:{line_no}: {reason}")


class EmptyInputError(MspError, ValueError):
    """An input file or collection holds no usable data."""


class InvalidSpecError(MspError, ValueError):
    """A generation or masking spec cannot be satisfied."""


class DegenerateMaskError(MspError):
    """A mask leaves nothing to encode or nothing to predict."""


class ShapeError(MspError, ValueError):
    """Tensor operands have incompatible shapes."""

    def __init__(self, op: str, *shapes: tuple[int, ...]) -> None:
        self.op = op
        self.shapes = shapes
        listed = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {listed}")


class ContractError(MspError):
    """A caller broke a documented precondition."""


class DegenerateTargetError(MspError):
    """Every row of a reconstruction target had to be excluded."""


class ConfigError(MspError, ValueError):
    """A run configuration is malformed or inconsistent."""


class CheckpointError(MspError):
    """A checkpoint file is incompatible, truncated or tampered with."""


class TrainingError(MspError):
    """Training cannot continue."""

    def __init__(self, message: str, step: int | None = None) -> None:
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)


class DegenerateProbeError(MspError):
    """A probe has no meaningful answer for the given data."""
