from .augment import AugmentSpec, augment, rotation_matrix_z
from .cloud import CLOUD_FORMATS, Aabb, PointCloud, load_cloud, save_cloud
from .synthetic import (
    Primitive,
    SceneConfig,
    SyntheticSceneSpec,
    generate_scene,
    generate_scene_with_primitives,
)

__all__ = [
    "Aabb",
    "AugmentSpec",
    "CLOUD_FORMATS",
    "PointCloud",
    "Primitive",
    "SceneConfig",
    "SyntheticSceneSpec",
    "augment",
    "generate_scene",
    "generate_scene_with_primitives",
    "load_cloud",
    "rotation_matrix_z",
    "save_cloud",
]
