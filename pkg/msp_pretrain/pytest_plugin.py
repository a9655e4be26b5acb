"""Pytest fixtures exported by MSP Pretrain."""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
import pytest

from msp_pretrain.selfcheck import micro_config, micro_model, micro_scene
from msp_pretrain.utils import derive_rng


@pytest.fixture
def msp_rng():
    """A seeded numpy generator, fresh per test."""
    return derive_rng(1234)


@pytest.fixture
def msp_scene():
    """A small labeled synthetic scene without colors."""
    return micro_scene(seed=0, with_colors=False)


@pytest.fixture
def msp_colored_scene():
    """The same kind of scene, with per-primitive colors."""
    return micro_scene(seed=0, with_colors=True)


@pytest.fixture
def msp_micro_config():
    """Returns a factory for tiny float64 run configurations."""
    return micro_config


@pytest.fixture
def msp_micro_model(msp_micro_config):
    """A freshly built micro model with the default targets."""
    return micro_model(msp_micro_config(), seed=0)


@pytest.fixture
def msp_out_dir(tmp_path):
    """An empty output directory for a command or a training run."""
    out = tmp_path / "out"
    out.mkdir()
    return out
