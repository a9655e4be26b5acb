import numpy as np
import pytest

from msp_pretrain.autodiff import as_tensor
from msp_pretrain.exceptions import ContractError, DegenerateMaskError
from msp_pretrain.masking import MaskSpec, apply_mask
from msp_pretrain.pipeline.config import ARCHITECTURES, TARGETS
from msp_pretrain.pipeline.model import (
    ABSENT_COLOR,
    MspModel,
    ModelSpec,
    build_mask_queries,
    decode,
    decode_ca,
    decode_ca_pp,
    encode_full,
    encode_remaining,
    encoder_inputs,
    predict,
    sample_keypoints,
)
from msp_pretrain.scene import PointCloud
from msp_pretrain.selfcheck import micro_model


def masked(cloud, seed=5):
    return apply_mask(cloud, MaskSpec(ratio=0.5, block_size=0.5, seed=seed))


def test_build_is_deterministic(msp_micro_config):
    spec = ModelSpec.from_config(msp_micro_config())
    assert MspModel.build(spec, 3).params.checksum() == MspModel.build(spec, 3).params.checksum()
    assert MspModel.build(spec, 3).params.checksum() != MspModel.build(spec, 4).params.checksum()


def test_parameter_groups(msp_micro_config):
    model = micro_model(msp_micro_config(targets=list(TARGETS)))
    prefixes = {name.split(".")[0] for name in model.params}
    assert prefixes == {"encoder", "decoder", "head"}
    assert list(model.ema.shadow) == list(model.encoder_params())
    assert model.params["head.shape.weight"].shape == (8, model.spec.sc_bits + 8)
    assert model.params["head.pointset.weight"].shape == (8, 3 * 4)


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_blocks_per_arch(msp_micro_config, arch):
    model = micro_model(msp_micro_config(arch=arch, depth=2))
    assert len(model.cross_blocks) == (2 if arch in ("CA", "CA++") else 0)
    assert len(model.refine_blocks) == (2 if arch == "CA++" else 0)
    assert len(model.sa_blocks) == (2 if arch == "SA" else 0)


def test_width_must_divide_heads():
    with pytest.raises(ContractError):
        MspModel.build(ModelSpec(width=10, heads=4), 0)


def test_encoder_inputs():
    cloud = PointCloud(np.array([[0.0, 0.0, 0.0], [2.0, 4.0, 6.0]]))
    inputs = encoder_inputs(cloud)
    np.testing.assert_array_equal(inputs[:, :3], [[-1, -2, -3], [1, 2, 3]])
    np.testing.assert_array_equal(inputs[:, 3:], np.full((2, 3), ABSENT_COLOR))


def test_masked_points_never_reach_the_encoder(msp_colored_scene, msp_micro_model):
    mask = masked(msp_colored_scene)
    before = encode_remaining(msp_micro_model, msp_colored_scene, mask).data
    colors = msp_colored_scene.colors.copy()
    colors[mask.masked_idx] = 0.0
    changed = PointCloud(msp_colored_scene.positions, colors, msp_colored_scene.labels)
    after = encode_remaining(msp_micro_model, changed, mask).data
    np.testing.assert_array_equal(before, after)
    assert before.shape == (mask.remaining_idx.size, 8)


def test_encode_full_shape(msp_scene, msp_micro_model):
    assert encode_full(msp_micro_model, msp_scene).shape == (len(msp_scene), 8)


def test_empty_remaining_set(msp_scene, msp_micro_model):
    mask = apply_mask(msp_scene, MaskSpec(ratio=1.0, seed=0), allow_degenerate=True)
    with pytest.raises(DegenerateMaskError):
        encode_remaining(msp_micro_model, msp_scene, mask)


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_decode_supervises_masked_points(msp_colored_scene, msp_micro_config, arch):
    model = micro_model(msp_micro_config(arch=arch))
    mask = masked(msp_colored_scene)
    decoded = decode(model, msp_colored_scene, mask, encode_remaining(model, msp_colored_scene, mask), seed=1)
    assert set(decoded.target_idx.tolist()) <= set(mask.masked_idx.tolist())
    assert decoded.features.shape == (decoded.target_idx.size, 8)
    if arch == "SA":
        assert decoded.target_idx.size <= model.spec.keypoints
        assert set(decoded.key_idx.tolist()) == set(decoded.keypoint_idx.tolist())
    else:
        np.testing.assert_array_equal(decoded.target_idx, mask.masked_idx)
        assert decoded.knn_index.max() < mask.remaining_idx.size


@pytest.mark.parametrize("run", [decode_ca, decode_ca_pp])
def test_masked_queries_are_independent(msp_scene, msp_micro_config, run):
    arch = "CA" if run is decode_ca else "CA++"
    model = micro_model(msp_micro_config(arch=arch))
    mask = masked(msp_scene)
    qpos = msp_scene.positions[mask.masked_idx]
    rpos = msp_scene.positions[mask.remaining_idx]
    feats = encode_remaining(model, msp_scene, mask)
    queries = build_mask_queries(model, qpos, msp_scene.aabb.center)
    base = run(model, queries, qpos, feats, rpos).data
    bumped = queries.data.copy()
    bumped[0] -= 3.0
    out = run(model, as_tensor(bumped), qpos, feats, rpos).data
    np.testing.assert_array_equal(out[1:], base[1:])
    assert not np.array_equal(out[0], base[0])


def test_refine_depth_zero_matches_ca(msp_scene, msp_micro_config):
    model = micro_model(msp_micro_config(arch="CA++"))
    mask = masked(msp_scene)
    qpos = msp_scene.positions[mask.masked_idx]
    rpos = msp_scene.positions[mask.remaining_idx]
    feats = encode_remaining(model, msp_scene, mask)
    queries = build_mask_queries(model, qpos)
    np.testing.assert_array_equal(
        decode_ca_pp(model, queries, qpos, feats, rpos, refine_depth=0).data,
        decode_ca(model, queries, qpos, feats, rpos).data,
    )


def test_mask_queries_depend_only_on_position(msp_micro_model):
    pos = np.array([[0.1, 0.2, 0.3], [0.1, 0.2, 0.3]])
    queries = build_mask_queries(msp_micro_model, pos).data
    np.testing.assert_array_equal(queries[0], queries[1])
    origin = build_mask_queries(msp_micro_model, np.zeros((1, 3))).data
    np.testing.assert_array_equal(origin[0], msp_micro_model.params["decoder.mask_token"].data)


def test_sample_keypoints():
    assert sample_keypoints(5, 10, 0).tolist() == [0, 1, 2, 3, 4]
    idx = sample_keypoints(100, 10, 3)
    assert idx.size == 10 and len(set(idx.tolist())) == 10
    assert np.all(np.diff(idx) > 0)
    np.testing.assert_array_equal(idx, sample_keypoints(100, 10, 3))


def test_sa_needs_two_keypoints(msp_scene, msp_micro_config):
    model = micro_model(msp_micro_config())
    model = MspModel.build(ModelSpec(**{**model.spec.__dict__, "keypoints": 1}), 0)
    mask = masked(msp_scene)
    with pytest.raises(ContractError):
        decode(model, msp_scene, mask, encode_remaining(model, msp_scene, mask))


def test_predict_heads(msp_colored_scene, msp_micro_config):
    model = micro_model(msp_micro_config(targets=list(TARGETS)))
    feats = as_tensor(np.random.default_rng(0).normal(size=(5, 8)))
    preds = predict(model, feats)
    assert preds.sc_logits.shape == (5, model.spec.sc_bits)
    assert preds.dsf.shape == (5, 8)
    assert preds.color.shape == (5, 3)
    assert preds.pointset.shape == (5, 4, 3)
    assert np.abs(preds.pointset.data).max() <= model.spec.pointset_radius


def test_predict_only_enabled(msp_micro_config):
    model = micro_model(msp_micro_config(targets=["color"]))
    preds = predict(model, as_tensor(np.zeros((2, 8))))
    assert preds.sc_logits is None and preds.dsf is None and preds.pointset is None
    assert "head.shape.weight" not in model.params
