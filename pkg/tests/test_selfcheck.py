import pytest

from msp_pretrain.selfcheck import (
    CHECKS,
    SelfCheckResult,
    format_results,
    micro_config,
    micro_scene,
    run_selfcheck,
)


@pytest.mark.parametrize(
    "name",
    ["descriptor oracle", "masking exactness", "EMA closed form", "loss unit values", "checkpoint idempotence"],
)
def test_fast_checks_pass(name):
    (result,) = run_selfcheck(names=[name])
    assert result.passed, result.detail
    assert result.seconds >= 0.0


@pytest.mark.parametrize("name", ["layer gradients", "structural leakage"])
def test_model_checks_pass(name):
    (result,) = run_selfcheck(names=[name])
    assert result.passed, result.detail


def test_layer_gradients_cover_every_op():
    (result,) = run_selfcheck(names=["layer gradients"])
    assert result.passed, result.detail
    for op in ["linear", "layer_norm", "softmax", "relu", "tanh", "sigmoid", "log", "attention"]:
        assert op in result.detail.split(": ", 1)[1].split(", ")


@pytest.mark.integration_test
@pytest.mark.parametrize("name", ["architecture gradients", "target gradients"])
def test_end_to_end_gradients(name):
    (result,) = run_selfcheck(names=[name])
    assert result.passed, result.detail


def test_failures_are_recorded(monkeypatch):
    def broken():
        raise ValueError("boom")

    monkeypatch.setitem(CHECKS, "broken", broken)
    results = run_selfcheck(names=["broken", "EMA closed form"])
    assert [r.passed for r in results] == [False, True]
    assert results[0].detail == "ValueError: boom"


def test_format_results():
    text = format_results(
        [SelfCheckResult("alpha", True, "ok", 0.5), SelfCheckResult("b", False, "bad", 1.0)]
    )
    lines = text.splitlines()
    assert lines[0] == "PASS  alpha    0.50s  ok"
    assert lines[1] == "FAIL  b        1.00s  bad"
    assert lines[2] == "1 passed, 1 failed"


def test_micro_helpers():
    config = micro_config(arch="CA")
    assert config.width == 8
    assert config.arch == "CA"
    config.check()
    cloud = micro_scene(seed=3, points_per_primitive=8, with_colors=False)
    assert cloud.colors is None
    assert len(cloud) > 0
