"""
Checkpoint container and file-based checkpoint management.

A checkpoint file is the magic line ``MSPCKPT1``, a textual header, the
run configuration as a text block, then raw little-endian buffers::

    MSPCKPT1
    format 1
    step 300
    adam <step> <lr> <weight_decay> <beta1> <beta2> <eps>
    config <n_bytes>
    buffer <name> <dtype> <shape> <offset> <n_bytes>
    ...
    end
    <config text><buffers>

Buffer offsets count from the first byte after the config block. Buffer
names are ``param/``, ``ema/``, ``adam.m/`` and ``adam.v/`` followed by the
parameter name, sorted within each group.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass

import numpy as np
from traitlets import Unicode, default
from traitlets.config import LoggingConfigurable

from msp_pretrain.exceptions import CheckpointError
from msp_pretrain.fileio import atomic_writing
from msp_pretrain.nn import AdamWState, ParamStore
from msp_pretrain.prometheus.metrics import CHECKPOINTS_WRITTEN_TOTAL

from .model import ENCODER_PREFIX, MspModel, ModelSpec

MAGIC = b"MSPCKPT1"
FORMAT_VERSION = 1
CHECKPOINT_EXT = ".mspckpt"
LAST_NAME = "last"

_GROUPS = ("param", "ema", "adam.m", "adam.v")
_DTYPES = {"<f8": np.dtype("<f8"), "<f4": np.dtype("<f4")}


@dataclass
class Checkpoint:
    step: int
    params: ParamStore
    ema: ParamStore
    optimizer: AdamWState
    config_text: str = ""

    @classmethod
    def capture(cls, model: MspModel, optimizer: AdamWState, config_text: str = "") -> Checkpoint:
        """Copy the current training state."""
        opt = AdamWState(
            lr=optimizer.lr,
            weight_decay=optimizer.weight_decay,
            betas=tuple(optimizer.betas),
            eps=optimizer.eps,
            step=optimizer.step,
            m={n: v.copy() for n, v in optimizer.m.items()},
            v={n: v.copy() for n, v in optimizer.v.items()},
        )
        return cls(
            step=optimizer.step,
            params=model.params.copy(requires_grad=False),
            ema=model.ema.shadow.copy(requires_grad=False),
            optimizer=opt,
            config_text=config_text,
        )

    def restore(self, model: MspModel, optimizer: AdamWState) -> None:
        """Write this state into a model and optimizer of matching shapes."""
        if self.params.shapes() != model.params.shapes():
            diff = sorted(set(self.params.shapes().items()) ^ set(model.params.shapes().items()))
            msg = f"checkpoint parameters do not match the model: {diff[:3]}"
            raise CheckpointError(msg)
        if self.ema.shapes() != model.ema.shadow.shapes():
            msg = "checkpoint EMA branch does not match the model"
            raise CheckpointError(msg)
        for name in model.params:
            model.params[name].data[...] = self.params[name].data
        for name in model.ema.shadow:
            model.ema.shadow[name].data[...] = self.ema[name].data
        optimizer.lr = self.optimizer.lr
        optimizer.weight_decay = self.optimizer.weight_decay
        optimizer.betas = tuple(self.optimizer.betas)
        optimizer.eps = self.optimizer.eps
        optimizer.step = self.optimizer.step
        optimizer.m = {n: v.copy() for n, v in self.optimizer.m.items()}
        optimizer.v = {n: v.copy() for n, v in self.optimizer.v.items()}


def _buffers(ckpt: Checkpoint):
    groups = {
        "param": {n: ckpt.params[n].data for n in ckpt.params},
        "ema": {n: ckpt.ema[n].data for n in ckpt.ema},
        "adam.m": ckpt.optimizer.m,
        "adam.v": ckpt.optimizer.v,
    }
    for group in _GROUPS:
        for name in sorted(groups[group]):
            arr = np.asarray(groups[group][name])
            dtype = arr.dtype.newbyteorder("<")
            yield f"{group}/{name}", np.ascontiguousarray(arr, dtype=dtype)


def _shape_str(shape) -> str:
    return "x".join(str(d) for d in shape) if shape else "-"


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    """Serialize ``ckpt``; equal checkpoints give equal bytes."""
    config = ckpt.config_text.encode("utf-8")
    opt = ckpt.optimizer
    lines = [
        MAGIC.decode(),
        f"format {FORMAT_VERSION}",
        f"step {ckpt.step}",
        f"adam {opt.step} {opt.lr!r} {opt.weight_decay!r} {opt.betas[0]!r} {opt.betas[1]!r} {opt.eps!r}",
        f"config {len(config)}",
    ]
    blobs = []
    offset = 0
    for name, arr in _buffers(ckpt):
        if arr.dtype.str not in _DTYPES:
            msg = f"cannot store {name} with dtype {arr.dtype}"
            raise CheckpointError(msg)
        blob = arr.tobytes()
        lines.append(f"buffer {name} {arr.dtype.str} {_shape_str(arr.shape)} {offset} {len(blob)}")
        blobs.append(blob)
        offset += len(blob)
    lines.append("end")
    return ("\n".join(lines) + "\n").encode("ascii") + config + b"".join(blobs)


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike[str], log=None) -> str:
    path = os.fspath(path)
    with atomic_writing(path, text=False, log=log) as f:
        f.write(checkpoint_bytes(ckpt))
    CHECKPOINTS_WRITTEN_TOTAL.inc()
    return path


_BUFFER_RE = re.compile(r"^buffer (\S+) (\S+) (\S+) (\d+) (\d+)$")


def parse_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    """Inverse of :func:`checkpoint_bytes`; rejects anything inconsistent."""
    if not data.startswith(MAGIC + b"\n"):
        msg = f"{source}: not a checkpoint (bad magic)"
        raise CheckpointError(msg)
    end = data.find(b"\nend\n")
    if end < 0:
        msg = f"{source}: truncated header"
        raise CheckpointError(msg)
    try:
        header = data[: end + 1].decode("ascii").splitlines()[1:]
    except UnicodeDecodeError:
        msg = f"{source}: corrupt header"
        raise CheckpointError(msg) from None
    body = data[end + len(b"\nend\n") :]

    fields: dict[str, list[str]] = {}
    buffers = []
    for line in header:
        m = _BUFFER_RE.match(line)
        if m:
            buffers.append(m.groups())
            continue
        key, _, rest = line.partition(" ")
        if key in fields or key not in ("format", "step", "adam", "config"):
            msg = f"{source}: unexpected header line {line!r}"
            raise CheckpointError(msg)
        fields[key] = rest.split()
    if len(fields) != 4:
        msg = f"{source}: incomplete header, missing {sorted({'format', 'step', 'adam', 'config'} - set(fields))}"
        raise CheckpointError(msg)
    try:
        version = int(fields["format"][0])
        step = int(fields["step"][0])
        adam_step = int(fields["adam"][0])
        lr, wd, beta1, beta2, eps = (float(v) for v in fields["adam"][1:6])
        config_len = int(fields["config"][0])
    except (ValueError, IndexError):
        msg = f"{source}: malformed header values"
        raise CheckpointError(msg) from None
    if version != FORMAT_VERSION:
        msg = f"{source}: checkpoint format {version} is not supported (expected {FORMAT_VERSION})"
        raise CheckpointError(msg)
    if len(body) < config_len:
        msg = f"{source}: truncated config block"
        raise CheckpointError(msg)
    config_text = body[:config_len].decode("utf-8")
    payload = body[config_len:]

    groups: dict[str, dict[str, np.ndarray]] = {g: {} for g in _GROUPS}
    expected_offset = 0
    for name, dtype_str, shape_str, offset_s, length_s in buffers:
        group, _, pname = name.partition("/")
        offset, length = int(offset_s), int(length_s)
        if group not in groups or dtype_str not in _DTYPES:
            msg = f"{source}: unknown buffer {name} ({dtype_str})"
            raise CheckpointError(msg)
        shape = () if shape_str == "-" else tuple(int(d) for d in shape_str.split("x"))
        dtype = _DTYPES[dtype_str]
        if offset != expected_offset or length != int(np.prod(shape, dtype=np.int64)) * dtype.itemsize:
            msg = f"{source}: buffer {name} has inconsistent offset or length"
            raise CheckpointError(msg)
        if offset + length > len(payload):
            msg = f"{source}: truncated buffer {name}"
            raise CheckpointError(msg)
        arr = np.frombuffer(payload, dtype=dtype, count=length // dtype.itemsize, offset=offset)
        groups[group][pname] = arr.reshape(shape).astype(dtype.newbyteorder("="))
        expected_offset = offset + length
    if expected_offset != len(payload):
        msg = f"{source}: {len(payload) - expected_offset} trailing bytes after the last buffer"
        raise CheckpointError(msg)
    if set(groups["adam.m"]) != set(groups["param"]) or set(groups["adam.v"]) != set(groups["param"]):
        msg = f"{source}: optimizer moments do not match the parameters"
        raise CheckpointError(msg)

    params = ParamStore()
    for name, arr in sorted(groups["param"].items()):
        params.add(name, arr, requires_grad=False)
    ema = ParamStore()
    for name, arr in sorted(groups["ema"].items()):
        ema.add(name, arr, requires_grad=False)
    optimizer = AdamWState(
        lr=lr,
        weight_decay=wd,
        betas=(beta1, beta2),
        eps=eps,
        step=adam_step,
        m=groups["adam.m"],
        v=groups["adam.v"],
    )
    return Checkpoint(step=step, params=params, ema=ema, optimizer=optimizer, config_text=config_text)


def load_checkpoint(path: str | os.PathLike[str]) -> Checkpoint:
    path = os.fspath(path)
    with open(path, "rb") as f:
        data = f.read()
    return parse_checkpoint(data, source=path)


def extract_encoder(ckpt: Checkpoint) -> ParamStore:
    """The ``encoder.`` parameters only, as a fresh gradient-free store."""
    return ckpt.params.subset(ENCODER_PREFIX).copy(requires_grad=False)


def model_from_checkpoint(ckpt: Checkpoint, spec: ModelSpec) -> MspModel:
    """A model of ``spec`` carrying the checkpoint's online and EMA weights."""
    model = MspModel.build(spec, seed=0)
    scratch = AdamWState.for_params(model.params)
    ckpt.restore(model, scratch)
    return model


class FileCheckpoints(LoggingConfigurable):
    """
    Checkpoints kept as ``ckpt-<step>.mspckpt`` files in one directory,
    plus a ``last.mspckpt`` copy of the newest one.
    """

    checkpoint_dir = Unicode(
        "checkpoints",
        config=True,
        help="""The directory in which to keep checkpoints

        This is a path relative to root_dir.
        """,
    )

    root_dir = Unicode(config=True)

    @default("root_dir")
    def _root_dir_default(self):
        if not self.parent or not getattr(self.parent, "out", None):
            return os.getcwd()
        return self.parent.out

    @property
    def directory(self) -> str:
        return os.path.join(self.root_dir, self.checkpoint_dir)

    def checkpoint_path(self, checkpoint_id) -> str:
        """find the path to a checkpoint: a step number or 'last'"""
        if checkpoint_id == LAST_NAME:
            filename = LAST_NAME + CHECKPOINT_EXT
        else:
            filename = f"ckpt-{int(checkpoint_id)}{CHECKPOINT_EXT}"
        return os.path.join(self.directory, filename)

    def create_checkpoint(self, ckpt: Checkpoint) -> list[str]:
        """Write ``ckpt`` for its step and as ``last``."""
        data = checkpoint_bytes(ckpt)
        paths = []
        for checkpoint_id in (ckpt.step, LAST_NAME):
            path = self.checkpoint_path(checkpoint_id)
            with atomic_writing(path, text=False, log=self.log) as f:
                f.write(data)
            CHECKPOINTS_WRITTEN_TOTAL.inc()
            paths.append(path)
        self.log.info("Checkpoint at step %d written to %s", ckpt.step, paths[0])
        return paths

    def list_checkpoints(self) -> list[int]:
        """steps with a checkpoint file, ascending"""
        if not os.path.isdir(self.directory):
            return []
        steps = []
        for name in os.listdir(self.directory):
            m = re.fullmatch(r"ckpt-(\d+)" + re.escape(CHECKPOINT_EXT), name)
            if m:
                steps.append(int(m.group(1)))
        return sorted(steps)

    def resolve(self, ref: str) -> str:
        """Path for 'last', a step number, or an existing file path."""
        if os.path.isfile(ref):
            return ref
        if ref == LAST_NAME or ref.isdigit():
            path = self.checkpoint_path(ref)
            if os.path.isfile(path):
                return path
        self.no_such_checkpoint(ref)
        return ""

    def delete_checkpoint(self, step: int) -> None:
        """delete the checkpoint of one step"""
        path = self.checkpoint_path(step)
        if not os.path.isfile(path):
            self.no_such_checkpoint(str(step))
        self.log.debug("unlinking %s", path)
        os.unlink(path)

    # Error Handling
    def no_such_checkpoint(self, ref: str):
        msg = f"Checkpoint does not exist: {ref} (in {self.directory})"
        raise CheckpointError(msg)
