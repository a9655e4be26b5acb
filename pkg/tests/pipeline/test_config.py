import numpy as np
import pytest
from traitlets import TraitError
from traitlets.config import Config

from msp_pretrain.pipeline.config import PROFILE_DEFAULTS, MspConfig
from msp_pretrain.shape_context import DEFAULT_PARTITIONS


@pytest.mark.parametrize("profile", ["desk", "paper"])
def test_profile_defaults(profile):
    config = MspConfig(profile=profile)
    for key, value in PROFILE_DEFAULTS[profile].items():
        assert getattr(config, key) == value
    assert config.encoder_depth == config.depth


def test_explicit_value_beats_profile():
    config = MspConfig(profile="paper", width=48, heads=4)
    assert config.width == 48
    assert config.depth == PROFILE_DEFAULTS["paper"]["depth"]


def test_from_traitlets_config():
    c = Config()
    c.MspConfig.arch = "CA++"
    c.MspConfig.mask_ratio = 0.4
    config = MspConfig(config=c)
    assert config.arch == "CA++"
    assert config.mask_ratio == 0.4


def test_default_partitions():
    config = MspConfig()
    assert config.partitions == DEFAULT_PARTITIONS
    assert config.sc_bits == 184
    assert config.dtype is np.float64


def test_partition_override_uses_run_radius():
    config = MspConfig(sc_partitions="1,2,3", sc_radius=0.4)
    assert config.partitions[0].radius == 0.4
    assert config.sc_bits == 6


@pytest.mark.parametrize(
    "trait,value",
    [
        ("mask_ratio", 1.5),
        ("mask_ratio", -0.1),
        ("mask_block_size", 0.0),
        ("sc_radius", -1.0),
        ("lr", 0.0),
        ("width", 0),
        ("k", 0),
        ("epochs", -1),
        ("ema_decay", 1.01),
        ("sc_partitions", "2,4"),
        ("arch", "MLP"),
        ("targets", ["sc", "normals"]),
        ("targets", []),
    ],
)
def test_invalid_values(trait, value):
    with pytest.raises(TraitError):
        MspConfig(**{trait: value})


def test_targets_normalized():
    config = MspConfig(targets=[" Color", "sc", "sc"])
    assert config.targets == ["sc", "color"]
    assert config.target_weights == {"sc": 1.0, "color": 1.0}


def test_target_weights():
    config = MspConfig(targets=["sc", "pointset"], weight_pointset=0.5)
    assert config.target_weights == {"sc": 1.0, "pointset": 0.5}


def test_check_cross_trait():
    with pytest.raises(TraitError):
        MspConfig(width=10, heads=4).check()
    with pytest.raises(TraitError):
        MspConfig(arch="SA", keypoints=1).check()
    MspConfig(arch="CA", keypoints=1).check()


def test_mask_spec():
    spec = MspConfig(mask_ratio=0.25, mask_block_size=0.5).mask_spec(seed=9)
    assert (spec.ratio, spec.block_size, spec.seed) == (0.25, 0.5, 9)


def test_augment_spec_switches():
    rng = np.random.default_rng(0)
    spec = MspConfig(flip=False, rotation=False, jitter=0.0).augment_spec(3, rng)
    assert spec.flip_axes == frozenset()
    assert spec.rotation_z == 0.0
    assert spec.jitter_sigma == 0.0
    spec = MspConfig().augment_spec(3, rng)
    assert spec.rotation_z is None
    assert spec.flip_axes <= {"x", "y"}
