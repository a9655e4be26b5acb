import math

import numpy as np
import pytest
from scipy.spatial.distance import pdist

from msp_pretrain.exceptions import InvalidSpecError
from msp_pretrain.scene import AugmentSpec, PointCloud, augment


def test_identity(msp_colored_scene):
    out = augment(msp_colored_scene, AugmentSpec())
    assert out.equals(msp_colored_scene)


def test_quarter_turn():
    cloud = PointCloud(np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 2.0]]))
    out = augment(cloud, AugmentSpec(rotation_z=math.pi / 2))
    np.testing.assert_allclose(out.positions, [[0.0, 1.0, 0.0], [0.0, 0.0, 2.0]], rtol=0, atol=1e-12)


def test_flips():
    cloud = PointCloud(np.array([[1.0, 2.0, 3.0]]))
    out = augment(cloud, AugmentSpec(flip_axes=frozenset({"x", "y"})))
    np.testing.assert_array_equal(out.positions, [[-1.0, -2.0, 3.0]])


@pytest.mark.parametrize("seed", range(5))
def test_rigid_motion_preserves_distances(msp_rng, seed):
    cloud = PointCloud(msp_rng.uniform(-1, 1, size=(50, 3)))
    spec = AugmentSpec(flip_axes=frozenset({"x"}) if seed % 2 else frozenset(), rotation_z=None, seed=seed)
    out = augment(cloud, spec)
    np.testing.assert_allclose(pdist(out.positions), pdist(cloud.positions), rtol=0, atol=1e-9)


def test_attributes_carried_through(msp_colored_scene):
    out = augment(msp_colored_scene, AugmentSpec(jitter_sigma=0.01, rotation_z=None, seed=1))
    np.testing.assert_array_equal(out.colors, msp_colored_scene.colors)
    np.testing.assert_array_equal(out.labels, msp_colored_scene.labels)
    assert not np.allclose(out.positions, msp_colored_scene.positions)
    np.testing.assert_array_equal(out.aabb.min, out.positions.min(axis=0))


def test_seeded():
    cloud = PointCloud(np.eye(3))
    spec = AugmentSpec(jitter_sigma=0.1, rotation_z=None, seed=7)
    np.testing.assert_array_equal(augment(cloud, spec).positions, augment(cloud, spec).positions)


@pytest.mark.parametrize("kwargs", [dict(jitter_sigma=-0.1), dict(flip_axes=frozenset({"z"}))])
def test_invalid_spec(kwargs):
    with pytest.raises(InvalidSpecError):
        AugmentSpec(**kwargs)
