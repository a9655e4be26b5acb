"""Read and write run configuration files.

A run configuration is line-oriented ``key = value`` text with section
prefixes (``mask.r``, ``sc.R``, ``train.lr``, ...). Blank lines and ``#``
comments are ignored. Each key names one trait of :class:`MspConfig`,
:class:`SceneConfig` or :class:`ProbeConfig`; parsing yields a traitlets
``Config`` so command-line overrides layer on top of a file.
"""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import os
import typing as t

from traitlets import Bool, Float, Integer, List
from traitlets.config import Config, Configurable

from .exceptions import ConfigError
from .pipeline.config import MspConfig
from .probes.config import ProbeConfig
from .scene import SceneConfig

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}

# section.key -> (configurable class, trait name), in rendering order
RUN_CONFIG_KEYS: dict[str, tuple[type[Configurable], str]] = {
    "run.profile": (MspConfig, "profile"),
    "run.seed": (MspConfig, "seed"),
    "run.threads": (MspConfig, "threads"),
    "mask.r": (MspConfig, "mask_ratio"),
    "mask.w": (MspConfig, "mask_block_size"),
    "sc.R": (MspConfig, "sc_radius"),
    "sc.xi": (MspConfig, "sc_xi"),
    "sc.partitions": (MspConfig, "sc_partitions"),
    "model.arch": (MspConfig, "arch"),
    "model.width": (MspConfig, "width"),
    "model.depth": (MspConfig, "depth"),
    "model.encoder_depth": (MspConfig, "encoder_depth"),
    "model.heads": (MspConfig, "heads"),
    "model.k": (MspConfig, "k"),
    "model.keypoints": (MspConfig, "keypoints"),
    "model.ln_eps": (MspConfig, "ln_eps"),
    "targets.enabled": (MspConfig, "targets"),
    "targets.weight_sc": (MspConfig, "weight_sc"),
    "targets.weight_dsf": (MspConfig, "weight_dsf"),
    "targets.weight_color": (MspConfig, "weight_color"),
    "targets.weight_pointset": (MspConfig, "weight_pointset"),
    "targets.pointset_k": (MspConfig, "pointset_k"),
    "targets.pointset_R": (MspConfig, "pointset_radius"),
    "ema.decay": (MspConfig, "ema_decay"),
    "train.lr": (MspConfig, "lr"),
    "train.weight_decay": (MspConfig, "weight_decay"),
    "train.schedule": (MspConfig, "schedule"),
    "train.epochs": (MspConfig, "epochs"),
    "train.batch_size": (MspConfig, "batch_size"),
    "train.checkpoint_every": (MspConfig, "checkpoint_every"),
    "train.precision": (MspConfig, "precision"),
    "augment.jitter": (MspConfig, "jitter"),
    "augment.flip": (MspConfig, "flip"),
    "augment.rotation": (MspConfig, "rotation"),
    "data.scenes": (SceneConfig, "n_scenes"),
    "data.planes": (SceneConfig, "planes"),
    "data.boxes": (SceneConfig, "boxes"),
    "data.spheres": (SceneConfig, "spheres"),
    "data.cylinders": (SceneConfig, "cylinders"),
    "data.points_per_primitive": (SceneConfig, "points_per_primitive"),
    "data.extent": (SceneConfig, "extent"),
    "data.noise_sigma": (SceneConfig, "noise_sigma"),
    "data.colors": (SceneConfig, "with_colors"),
    "probe.keep_fractions": (ProbeConfig, "keep_fractions"),
    "probe.seeds": (ProbeConfig, "seeds"),
    "probe.max_centers": (ProbeConfig, "max_centers"),
    "probe.steps": (ProbeConfig, "steps"),
    "probe.lr": (ProbeConfig, "lr"),
    "probe.weight_decay": (ProbeConfig, "weight_decay"),
    "probe.train_fraction": (ProbeConfig, "train_fraction"),
    "probe.split_seed": (ProbeConfig, "split_seed"),
    "probe.leakage_margin": (ProbeConfig, "leakage_margin"),
    "probe.accuracy_margin": (ProbeConfig, "accuracy_margin"),
}


def _scalar(trait, text: str) -> t.Any:
    if isinstance(trait, Bool):
        word = text.lower()
        if word in _TRUE:
            return True
        if word in _FALSE:
            return False
        msg = f"expected a boolean, got {text!r}"
        raise ValueError(msg)
    if isinstance(trait, Integer):
        return int(text)
    if isinstance(trait, Float):
        return float(text)
    return text


def parse_value(cls: type[Configurable], name: str, text: str) -> t.Any:
    """Convert the text of one value to what trait ``cls.name`` holds."""
    trait = cls.class_traits()[name]
    if isinstance(trait, List):
        items = [tok.strip() for tok in text.replace(";", ",").split(",")]
        return [_scalar(trait._trait, tok) for tok in items if tok]
    return _scalar(trait, text.strip())


def format_value(value: t.Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(format_value(v) for v in value)
    return str(value)


def parse_run_config(text: str, source: str = "<string>") -> Config:
    """Parse run configuration text into a traitlets ``Config``.

    Malformed lines, unknown or repeated keys, and unparsable values raise
    :class:`ConfigError` naming ``source`` and the line number.
    """
    config = Config()
    seen: dict[str, int] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            msg = f"{source}:{line_no}: expected 'key = value', got {raw.strip()!r}"
            raise ConfigError(msg)
        if key not in RUN_CONFIG_KEYS:
            msg = f"{source}:{line_no}: unknown key {key!r}"
            raise ConfigError(msg)
        if key in seen:
            msg = f"{source}:{line_no}: {key!r} repeats line {seen[key]}"
            raise ConfigError(msg)
        seen[key] = line_no
        cls, name = RUN_CONFIG_KEYS[key]
        try:
            config[cls.__name__][name] = parse_value(cls, name, value)
        except ValueError as e:
            msg = f"{source}:{line_no}: bad value for {key!r}: {e}"
            raise ConfigError(msg) from None
    return config


def load_run_config(path: str | os.PathLike[str]) -> Config:
    path = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise OSError(e.errno, f"cannot read config {path}: {e.strerror}") from e
    return parse_run_config(text, source=path)


def render_run_config(
    msp: MspConfig | None = None,
    scenes: SceneConfig | None = None,
    probes: ProbeConfig | None = None,
) -> str:
    """Every key with its resolved value; missing sections use their defaults.

    The output parses back into the same configuration.
    """
    instances: dict[type, Configurable] = {
        MspConfig: msp if msp is not None else MspConfig(),
        SceneConfig: scenes if scenes is not None else SceneConfig(),
        ProbeConfig: probes if probes is not None else ProbeConfig(),
    }
    lines = []
    section = None
    for key, (cls, name) in RUN_CONFIG_KEYS.items():
        prefix = key.split(".", 1)[0]
        if section is not None and prefix != section:
            lines.append("")
        section = prefix
        lines.append(f"{key} = {format_value(getattr(instances[cls], name))}")
    return "\n".join(lines) + "\n"
