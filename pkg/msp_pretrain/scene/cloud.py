"""Point-cloud data model and XYZ / ASCII-PLY serialization."""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import os
import typing as t
from dataclasses import dataclass, field

import numpy as np
from traitlets.log import get_logger

from msp_pretrain.exceptions import CloudParseError, EmptyInputError, InvalidCloudError
from msp_pretrain.fileio import atomic_writing
from msp_pretrain.utils import frozen_array

CLOUD_FORMATS = ("xyz", "ply-ascii")

# Decimal places written for coordinates and float colors.
POSITION_DECIMALS = 9
COLOR_DECIMALS = 6

_PLY_INT_TYPES = {
    "uchar", "uint8", "char", "int8", "ushort", "uint16", "short", "int16", "uint", "uint32", "int", "int32"
}


@dataclass(frozen=True, eq=False)
class Aabb:
    """Axis-aligned bounding box, in meters."""

    min: np.ndarray
    max: np.ndarray

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    @property
    def center(self) -> np.ndarray:
        return (self.min + self.max) / 2.0


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An immutable point cloud.

    ``positions`` is an ``(N, 3)`` float64 array in meters. ``colors`` are RGB
    triples in [0, 1] and ``labels`` are per-point class ids; both are optional
    and, when present, have one row per position.
    """

    positions: np.ndarray
    colors: np.ndarray | None = None
    labels: np.ndarray | None = None
    aabb: Aabb = field(init=False, repr=False)

    def __post_init__(self) -> None:
        positions = np.asarray(self.positions, dtype=np.float64)
        if positions.ndim != 2 or positions.shape[1] != 3:
            msg = f"positions must have shape (N, 3), got {positions.shape}"
            raise InvalidCloudError(msg)
        if positions.shape[0] == 0:
            msg = "a point cloud needs at least one position"
            raise InvalidCloudError(msg)
        if not np.all(np.isfinite(positions)):
            msg = "positions must be finite"
            raise InvalidCloudError(msg)
        object.__setattr__(self, "positions", frozen_array(positions))

        if self.colors is not None:
            colors = np.asarray(self.colors, dtype=np.float64)
            if colors.shape != positions.shape:
                msg = f"colors shape {colors.shape} does not match positions {positions.shape}"
                raise InvalidCloudError(msg)
            if colors.size and (colors.min() < 0.0 or colors.max() > 1.0):
                msg = "colors must lie in [0, 1]"
                raise InvalidCloudError(msg)
            object.__setattr__(self, "colors", frozen_array(colors))

        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (positions.shape[0],):
                msg = f"labels shape {labels.shape} does not match {positions.shape[0]} points"
                raise InvalidCloudError(msg)
            object.__setattr__(self, "labels", frozen_array(labels, dtype=np.int64))

        aabb = Aabb(frozen_array(positions.min(axis=0)), frozen_array(positions.max(axis=0)))
        object.__setattr__(self, "aabb", aabb)

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    @property
    def has_colors(self) -> bool:
        return self.colors is not None

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def with_positions(self, positions: np.ndarray) -> PointCloud:
        """Same colors and labels, new positions."""
        return PointCloud(positions, colors=self.colors, labels=self.labels)

    def subset(self, indices: np.ndarray) -> PointCloud:
        """A cloud holding only the rows at ``indices``."""
        idx = np.asarray(indices, dtype=np.int64)
        return PointCloud(
            self.positions[idx],
            colors=None if self.colors is None else self.colors[idx],
            labels=None if self.labels is None else self.labels[idx],
        )

    def equals(self, other: PointCloud, atol: float = 0.0) -> bool:
        """Compare positions, colors and labels."""

        def _same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and bool(np.allclose(a, b, rtol=0.0, atol=atol))

        return (
            _same(self.positions, other.positions)
            and _same(self.colors, other.colors)
            and _same(self.labels, other.labels)
        )


def _infer_format(path: str, format: str | None) -> str:
    if format is not None:
        if format not in CLOUD_FORMATS:
            msg = f"unknown cloud format {format!r}; expected one of {CLOUD_FORMATS}"
            raise ValueError(msg)
        return format
    ext = os.path.splitext(path)[1].lower()
    if ext == ".ply":
        return "ply-ascii"
    return "xyz"


def load_cloud(path: str | os.PathLike[str], format: str | None = None) -> PointCloud:
    """Read a cloud from an XYZ or ASCII PLY file.

    The format is taken from ``format`` or, when omitted, from the file
    extension (``.ply`` is PLY, anything else XYZ).
    """
    path = os.fspath(path)
    fmt = _infer_format(path, format)
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not any(line.strip() for line in lines):
        msg = f"{path} is empty"
        raise EmptyInputError(msg)
    if fmt == "xyz":
        cloud = _parse_xyz(path, lines)
    else:
        cloud = _parse_ply(path, lines)
    get_logger().debug("loaded %d points from %s", len(cloud), path)
    return cloud


def _parse_xyz(path: str, lines: list[str]) -> PointCloud:
    rows: list[list[float]] = []
    n_cols = None
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if len(tokens) not in (3, 6):
            raise CloudParseError(path, line_no, f"expected 3 or 6 columns, got {len(tokens)}")
        if n_cols is None:
            n_cols = len(tokens)
        elif len(tokens) != n_cols:
            raise CloudParseError(path, line_no, f"expected {n_cols} columns, got {len(tokens)}")
        try:
            rows.append([float(tok) for tok in tokens])
        except ValueError:
            raise CloudParseError(path, line_no, f"not a number in {line!r}") from None
    if not rows:
        msg = f"{path} holds no points"
        raise EmptyInputError(msg)
    data = np.array(rows, dtype=np.float64)
    colors = None
    if n_cols == 6:
        colors = data[:, 3:6]
        if colors.max() > 1.0:
            colors = colors / 255.0
    try:
        return PointCloud(data[:, :3], colors=colors)
    except InvalidCloudError as e:
        raise CloudParseError(path, 0, str(e)) from e


def _parse_ply(path: str, lines: list[str]) -> PointCloud:
    if not lines or lines[0].strip() != "ply":
        raise CloudParseError(path, 1, "missing 'ply' magic")
    n_vertex = None
    properties: list[tuple[str, str]] = []
    in_vertex = False
    header_end = None
    for line_no, raw in enumerate(lines[1:], start=2):
        tokens = raw.split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        key = tokens[0]
        if key == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise CloudParseError(path, line_no, "only ASCII PLY is supported")
        elif key == "element":
            if len(tokens) != 3:
                raise CloudParseError(path, line_no, "malformed element line")
            in_vertex = tokens[1] == "vertex"
            if in_vertex:
                try:
                    n_vertex = int(tokens[2])
                except ValueError:
                    raise CloudParseError(path, line_no, "vertex count is not an integer") from None
        elif key == "property":
            if tokens[1] == "list":
                if in_vertex:
                    raise CloudParseError(path, line_no, "list properties on vertices are not supported")
                continue
            if len(tokens) != 3:
                raise CloudParseError(path, line_no, "malformed property line")
            if in_vertex:
                properties.append((tokens[2], tokens[1]))
        elif key == "end_header":
            header_end = line_no
            break
        else:
            raise CloudParseError(path, line_no, f"unexpected header keyword {key!r}")
    if header_end is None:
        raise CloudParseError(path, len(lines), "missing end_header")
    if n_vertex is None:
        raise CloudParseError(path, header_end, "no vertex element declared")
    if n_vertex == 0:
        msg = f"{path} declares zero vertices"
        raise EmptyInputError(msg)

    names = [name for name, _ in properties]
    for required in ("x", "y", "z"):
        if required not in names:
            raise CloudParseError(path, header_end, f"missing vertex property {required!r}")
    has_rgb = all(c in names for c in ("red", "green", "blue"))
    has_label = "label" in names

    body = lines[header_end : header_end + n_vertex]
    if len(body) < n_vertex:
        raise CloudParseError(path, len(lines), f"expected {n_vertex} vertices, got {len(body)}")
    values = np.empty((n_vertex, len(properties)), dtype=np.float64)
    for i, raw in enumerate(body):
        line_no = header_end + 1 + i
        tokens = raw.split()
        if len(tokens) != len(properties):
            raise CloudParseError(
                path, line_no, f"expected {len(properties)} values, got {len(tokens)}"
            )
        try:
            values[i] = [float(tok) for tok in tokens]
        except ValueError:
            raise CloudParseError(path, line_no, f"not a number in {raw.strip()!r}") from None

    column = {name: i for i, name in enumerate(names)}
    positions = values[:, [column["x"], column["y"], column["z"]]]
    colors = None
    if has_rgb:
        colors = values[:, [column["red"], column["green"], column["blue"]]]
        rgb_types = {dict(properties)[c] for c in ("red", "green", "blue")}
        if rgb_types & _PLY_INT_TYPES:
            colors = colors / 255.0
    labels = values[:, column["label"]].astype(np.int64) if has_label else None
    try:
        return PointCloud(positions, colors=colors, labels=labels)
    except InvalidCloudError as e:
        raise CloudParseError(path, header_end, str(e)) from e


def _fmt(values: t.Iterable[float], decimals: int) -> str:
    return " ".join(f"{v:.{decimals}f}" for v in values)


def save_cloud(
    cloud: PointCloud, path: str | os.PathLike[str], format: str | None = None, log=None
) -> None:
    """Write ``cloud`` as XYZ (3 or 6 columns) or ASCII PLY.

    Positions are written with ``POSITION_DECIMALS`` decimals. PLY colors are
    stored as ``uchar`` and labels, when present, as an ``int label`` property;
    XYZ has no label column.
    """
    path = os.fspath(path)
    fmt = _infer_format(path, format)
    lines: list[str] = []
    if fmt == "xyz":
        for i in range(len(cloud)):
            row = _fmt(cloud.positions[i], POSITION_DECIMALS)
            if cloud.colors is not None:
                row += " " + _fmt(cloud.colors[i], COLOR_DECIMALS)
            lines.append(row)
    else:
        lines += ["ply", "format ascii 1.0", f"element vertex {len(cloud)}"]
        lines += ["property double x", "property double y", "property double z"]
        if cloud.colors is not None:
            lines += ["property uchar red", "property uchar green", "property uchar blue"]
        if cloud.labels is not None:
            lines.append("property int label")
        lines.append("end_header")
        rgb = None
        if cloud.colors is not None:
            rgb = np.clip(np.rint(cloud.colors * 255.0), 0, 255).astype(np.int64)
        for i in range(len(cloud)):
            row = _fmt(cloud.positions[i], POSITION_DECIMALS)
            if rgb is not None:
                row += " " + " ".join(str(int(c)) for c in rgb[i])
            if cloud.labels is not None:
                row += f" {int(cloud.labels[i])}"
            lines.append(row)
    with atomic_writing(path, log=log) as f:
        f.write("\n".join(lines))
        f.write("\n")
