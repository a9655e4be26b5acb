import numpy as np
import pytest

from msp_pretrain.exceptions import ContractError, DegenerateProbeError, EmptyInputError
from msp_pretrain.nn import ParamStore
from msp_pretrain.pipeline.model import ModelSpec
from msp_pretrain.probes.linear import (
    N_CLASSES,
    PROBE_HEADER,
    ProbeResult,
    accuracies,
    classify,
    fit_linear_classifier,
    linear_probe,
    probe_arms,
    read_probe_csv,
    split_scenes,
    write_probe_csv,
)
from msp_pretrain.scene import SyntheticSceneSpec, generate_scene
from msp_pretrain.selfcheck import micro_config, micro_model, micro_scene

PROBE_KW = dict(steps=5, lr=0.05)


@pytest.fixture
def spec():
    return ModelSpec.from_config(micro_config())


@pytest.fixture
def scenes():
    return [micro_scene(seed=i, with_colors=False) for i in range(4)]


@pytest.mark.parametrize("n,fraction,n_train", [(2, 0.5, 1), (5, 0.5, 3), (10, 0.99, 9), (10, 0.01, 1)])
def test_split_scenes(n, fraction, n_train):
    train, test = split_scenes(n, fraction, seed=0)
    assert train.size == n_train
    assert sorted(np.concatenate([train, test]).tolist()) == list(range(n))
    assert np.all(np.diff(train) > 0) and np.all(np.diff(test) > 0)


def test_split_needs_two_scenes():
    with pytest.raises(EmptyInputError):
        split_scenes(1, 0.5, 0)


def test_accuracies():
    pred = np.array([0, 1, 1, 3])
    labels = np.array([0, 1, 0, 3])
    overall, per_class = accuracies(pred, labels)
    assert overall == 0.75
    assert per_class == (0.5, 1.0, None, 1.0)


def test_classifier_separates_clusters(msp_rng):
    centers = np.eye(N_CLASSES) * 4
    labels = np.repeat(np.arange(N_CLASSES), 20)
    features = centers[labels] + msp_rng.normal(scale=0.3, size=(labels.size, N_CLASSES))
    classifier = fit_linear_classifier(features, labels, steps=100, lr=0.1)
    assert np.mean(classify(classifier, features) == labels) == 1.0


def test_probe_result(spec, scenes):
    encoder = micro_model(seed=3).encoder_params()
    result = linear_probe(encoder, spec, scenes, split_seed=1, **PROBE_KW)
    assert result.arm == "pretrained"
    assert 0.0 <= result.overall_acc <= 1.0
    assert result.n_train + result.n_test == sum(len(s) for s in scenes)
    assert len(result.class_acc) == N_CLASSES
    again = linear_probe(encoder, spec, scenes, split_seed=1, **PROBE_KW)
    assert again.overall_acc == result.overall_acc


def test_single_class_labels(spec):
    planes = [
        generate_scene(SyntheticSceneSpec(planes=1, boxes=0, spheres=0, cylinders=0, points_per_primitive=16, seed=i))
        for i in range(2)
    ]
    encoder = micro_model().encoder_params()
    with pytest.raises(DegenerateProbeError):
        linear_probe(encoder, spec, planes, **PROBE_KW)
    result = linear_probe(encoder, spec, planes, allow_degenerate=True, **PROBE_KW)
    assert result.degenerate
    assert result.overall_acc == 1.0
    assert result.class_acc[0] == 1.0 and result.class_acc[1] is None


def test_encoder_must_match(spec, scenes):
    with pytest.raises(ContractError):
        linear_probe(ParamStore(), spec, scenes, **PROBE_KW)


def test_unlabeled_scenes(spec, scenes):
    from msp_pretrain.scene import PointCloud

    bare = [PointCloud(s.positions) for s in scenes]
    with pytest.raises(ContractError):
        linear_probe(micro_model().encoder_params(), spec, bare, **PROBE_KW)


def test_probe_arms(spec, scenes):
    encoder = micro_model(seed=7).encoder_params()
    results = probe_arms(encoder, spec, scenes, seeds=[0, 1], **PROBE_KW)
    assert [r.arm for r in results] == ["pretrained", "scratch", "pretrained", "scratch"]
    scratch_only = probe_arms(None, spec, scenes, seeds=[0], **PROBE_KW)
    assert [r.arm for r in scratch_only] == ["scratch"]
    assert scratch_only[0].overall_acc == results[1].overall_acc


def test_csv_round_trip(tmp_path):
    results = [
        ProbeResult("pretrained", 0.75, (1.0, 0.5, None, 0.25)),
        ProbeResult("scratch", 0.5, (0.5, 0.5, 0.5, 0.5)),
    ]
    path = tmp_path / "probe.csv"
    write_probe_csv(path, results)
    lines = path.read_text().splitlines()
    assert lines[0] == PROBE_HEADER
    assert lines[1] == "pretrained,0.75,1.0,0.5,,0.25"
    assert read_probe_csv(path) == results
