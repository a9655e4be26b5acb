import numpy as np
import pytest

from msp_pretrain.exceptions import DegenerateMaskError, InvalidSpecError
from msp_pretrain.masking import (
    MaskSpec,
    apply_mask,
    build_block_grid,
    select_masked_blocks,
)
from msp_pretrain.scene import PointCloud
from msp_pretrain.utils import round_half_up


def test_origin_corner_is_block_zero():
    cloud = PointCloud(np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]))
    grid = build_block_grid(cloud, 0.3)
    assert 0 in grid.occupancy[(0, 0, 0)]


def test_hand_computed_block():
    cloud = PointCloud(np.array([[0.0, 0.0, 0.0], [0.65, 0.0, 0.0], [0.9, 0.1, 0.1]]))
    grid = build_block_grid(cloud, 0.3)
    assert 1 in grid.occupancy[(2, 0, 0)]


def test_upper_face_clamps_into_last_block():
    cloud = PointCloud(np.array([[0.0, 0.0, 0.0], [0.6, 0.0, 0.0]]))
    grid = build_block_grid(cloud, 0.3)
    assert tuple(grid.point_blocks[1]) == (1, 0, 0)
    assert len(grid) == 2


def test_single_block():
    cloud = PointCloud(np.random.default_rng(0).uniform(0, 0.1, size=(20, 3)))
    grid = build_block_grid(cloud, 0.3)
    assert len(grid) == 1
    assert sorted(grid.occupancy[(0, 0, 0)].tolist()) == list(range(20))


def test_every_point_listed_once(msp_scene):
    grid = build_block_grid(msp_scene, 0.3)
    listed = np.concatenate(list(grid.occupancy.values()))
    assert sorted(listed.tolist()) == list(range(len(msp_scene)))
    for block, members in grid.occupancy.items():
        expected = np.floor((msp_scene.positions[members] - grid.origin) / 0.3).astype(int)
        n_axis = np.maximum(np.ceil((msp_scene.aabb.max - grid.origin) / 0.3), 1).astype(int)
        np.testing.assert_array_equal(np.minimum(expected, n_axis - 1), np.tile(block, (len(members), 1)))


def test_invalid_block_size(msp_scene):
    with pytest.raises(InvalidSpecError):
        build_block_grid(msp_scene, 0.0)


@pytest.mark.parametrize("kwargs", [dict(ratio=-0.1), dict(ratio=1.5), dict(block_size=0.0)])
def test_invalid_mask_spec(kwargs):
    with pytest.raises(InvalidSpecError):
        MaskSpec(**kwargs)


def test_select_zero_and_all(msp_scene):
    grid = build_block_grid(msp_scene, 0.3)
    assert select_masked_blocks(grid, 0.0, seed=1) == frozenset()
    assert select_masked_blocks(grid, 1.0, seed=1) == frozenset(grid.occupancy)


@pytest.mark.parametrize("seed", range(10))
def test_select_count_matches_oracle(msp_rng, seed):
    cloud = PointCloud(msp_rng.uniform(0, 2, size=(200, 3)))
    grid = build_block_grid(cloud, 0.3)
    occupied = {tuple(int(v) for v in row) for row in grid.point_blocks}
    chosen = select_masked_blocks(grid, 0.6, seed)
    assert len(chosen) == round_half_up(0.6 * len(occupied))
    assert chosen <= occupied


def test_r_zero_masks_nothing(msp_scene):
    mask = apply_mask(msp_scene, MaskSpec(ratio=0.0, seed=4))
    assert mask.masked_idx.size == 0
    np.testing.assert_array_equal(mask.remaining_idx, np.arange(len(msp_scene)))


def test_one_point_per_block():
    # ten points in ten distinct blocks along x
    cloud = PointCloud(np.column_stack([np.arange(10) * 1.1, np.zeros(10), np.zeros(10)]))
    mask = apply_mask(cloud, MaskSpec(ratio=0.5, block_size=1.0, seed=2))
    assert len(mask.grid) == 10
    assert mask.masked_idx.size == 5


def test_determinism(msp_scene):
    spec = MaskSpec(ratio=0.6, block_size=0.3, seed=11)
    a, b = apply_mask(msp_scene, spec), apply_mask(msp_scene, spec)
    np.testing.assert_array_equal(a.masked_idx, b.masked_idx)
    assert a.masked_blocks == b.masked_blocks


@pytest.mark.parametrize("seed", range(1000))
def test_partition_properties(seed):
    rng = np.random.default_rng(seed)
    cloud = PointCloud(rng.uniform(-1, 1, size=(int(rng.integers(1, 120)), 3)))
    spec = MaskSpec(ratio=float(rng.uniform(0, 0.9)), block_size=float(rng.uniform(0.1, 1.0)), seed=seed)
    mask = apply_mask(cloud, spec, allow_degenerate=True)
    masked, remaining = set(mask.masked_idx.tolist()), set(mask.remaining_idx.tolist())
    assert not masked & remaining
    assert masked | remaining == set(range(len(cloud)))
    assert len(mask.masked_blocks) == round_half_up(spec.ratio * len(mask.grid))
    assert mask.masked_idx.size == sum(mask.grid.occupancy[b].size for b in mask.masked_blocks)
    for i in mask.masked_idx:
        assert tuple(int(v) for v in mask.grid.point_blocks[i]) in mask.masked_blocks


def test_full_mask_is_degenerate(msp_scene):
    spec = MaskSpec(ratio=1.0, seed=0)
    with pytest.raises(DegenerateMaskError):
        apply_mask(msp_scene, spec)
    mask = apply_mask(msp_scene, spec, allow_degenerate=True)
    assert mask.is_degenerate
    assert mask.remaining_idx.size == 0


def test_write_csv(tmp_path, msp_scene):
    mask = apply_mask(msp_scene, MaskSpec(seed=3))
    path = tmp_path / "mask.csv"
    mask.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "index,masked"
    assert len(lines) == len(msp_scene) + 1
    flags = [int(line.split(",")[1]) for line in lines[1:]]
    assert sum(flags) == mask.masked_idx.size
