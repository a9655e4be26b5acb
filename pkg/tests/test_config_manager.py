import pytest

from msp_pretrain.config_manager import (
    RUN_CONFIG_KEYS,
    format_value,
    load_run_config,
    parse_run_config,
    parse_value,
    render_run_config,
)
from msp_pretrain.exceptions import ConfigError
from msp_pretrain.pipeline.config import MspConfig
from msp_pretrain.probes.config import ProbeConfig
from msp_pretrain.scene import SceneConfig


def test_parse_sections():
    text = """
# a comment
run.seed = 7
mask.r = 0.5   # trailing comment
model.arch = CA++

targets.enabled = sc, pointset
data.colors = no
probe.keep_fractions = 1.0; 0.5
"""
    config = parse_run_config(text)
    assert config.MspConfig.seed == 7
    assert config.MspConfig.mask_ratio == 0.5
    assert config.MspConfig.arch == "CA++"
    assert config.MspConfig.targets == ["sc", "pointset"]
    assert config.SceneConfig.with_colors is False
    assert config.ProbeConfig.keep_fractions == [1.0, 0.5]


@pytest.mark.parametrize("word,expected", [("true", True), ("Yes", True), ("1", True), ("off", False), ("0", False)])
def test_parse_bool_words(word, expected):
    assert parse_value(MspConfig, "flip", word) is expected


def test_parse_value_types():
    assert parse_value(MspConfig, "width", " 16 ") == 16
    assert parse_value(MspConfig, "lr", "1e-4") == 1e-4
    assert parse_value(ProbeConfig, "seeds", "0, 1,,2") == [0, 1, 2]
    assert parse_value(MspConfig, "sc_partitions", "2,4,3") == "2,4,3"


@pytest.mark.parametrize(
    "text,fragment",
    [
        ("run.seed = 1\nnonsense", "<string>:2: expected 'key = value'"),
        ("= 3", "<string>:1: expected 'key = value'"),
        ("run.sed = 1", "<string>:1: unknown key 'run.sed'"),
        ("run.seed = 1\n\nrun.seed = 2", "<string>:3: 'run.seed' repeats line 1"),
        ("model.width = wide", "<string>:1: bad value for 'model.width'"),
        ("augment.flip = maybe", "<string>:1: bad value for 'augment.flip'"),
    ],
)
def test_parse_errors(text, fragment):
    with pytest.raises(ConfigError) as e:
        parse_run_config(text)
    assert fragment in str(e.value)


def test_render_has_every_key():
    text = render_run_config()
    keys = [line.split(" = ")[0] for line in text.splitlines() if line]
    assert keys == list(RUN_CONFIG_KEYS)


def test_render_round_trip():
    msp = MspConfig(width=8, heads=2, targets=["sc", "color"], lr=2.5e-4, flip=False)
    scenes = SceneConfig(n_scenes=3)
    probes = ProbeConfig(keep_fractions=[1.0, 0.1])
    text = render_run_config(msp, scenes, probes)
    config = parse_run_config(text)
    again = render_run_config(MspConfig(config=config), SceneConfig(config=config), ProbeConfig(config=config))
    assert again == text
    assert "model.width = 8\n" in text
    assert "targets.enabled = sc, color\n" in text
    assert "data.scenes = 3\n" in text


def test_format_value():
    assert format_value(True) == "true"
    assert format_value(0.1) == "0.1"
    assert format_value([1, 2]) == "1, 2"
    assert format_value("SA") == "SA"


def test_load_run_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("train.epochs = 3\nbogus = 1\n")
    with pytest.raises(ConfigError) as e:
        load_run_config(path)
    assert f"{path}:2:" in str(e.value)
    path.write_text("train.epochs = 3\n")
    assert load_run_config(path).MspConfig.epochs == 3


def test_load_missing_file(tmp_path):
    with pytest.raises(OSError) as e:
        load_run_config(tmp_path / "nope.cfg")
    assert "cannot read config" in str(e.value)
