"""Lifting 2D feature maps into the voxel grid through the depth map."""

from dataclasses import dataclass

import numpy as np

from .camera import CameraModel
from .voxel import GridSpec, back_project_depth, world_to_voxel_array


@dataclass(frozen=True, eq=False)
class FeatureVolume:
    """Per-voxel feature vectors ``data[i, j, k, :]``; ``mask`` marks voxels hit by a pixel."""

    spec: GridSpec
    data: np.ndarray
    mask: np.ndarray

    @property
    def channels(self):
        return self.data.shape[-1]

    def channels_first(self):
        """Data as a ``(C, nx, ny, nz)`` array for the 3D network."""
        return np.moveaxis(self.data, -1, 0)


def back_project(u, v, d, camera: CameraModel):
    """World point seen at pixel ``(u, v)`` (column, row) with depth ``d`` meters."""
    if not d > 0:
        raise ValueError(f"depth must be positive, got {d}")
    cam = d * (np.linalg.inv(camera.intrinsics) @ np.array([u + 0.5, v + 0.5, 1.0]))
    return camera.camera_to_world(cam)


def pixel_voxel_routing(depth, camera: CameraModel, spec: GridSpec):
    """For each valid pixel whose back-projection lands in the grid: ``(rows, cols, voxel idx)``."""
    points, rows, cols = back_project_depth(depth, camera)
    idx, inside = world_to_voxel_array(points, spec)
    return rows[inside], cols[inside], idx[inside]


def project_features(features, depth, camera: CameraModel, spec: GridSpec):
    """Scatter ``features`` (H, W, C) into the grid with a channel-wise max per voxel.

    Pixels with depth 0 or landing outside the grid are dropped. Voxels that
    receive no pixel hold zeros and are left out of the mask.
    """
    features = np.asarray(features, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if features.ndim != 3 or features.shape[:2] != depth.shape:
        raise ValueError(f"features {features.shape} and depth {depth.shape} must share H x W")
    c = features.shape[2]
    rows, cols, idx = pixel_voxel_routing(depth, camera, spec)
    flat = np.ravel_multi_index(idx.T, spec.dims) if len(idx) else np.zeros(0, dtype=np.int64)
    acc = np.full((spec.num_voxels, c), -np.inf)
    np.maximum.at(acc, flat, features[rows, cols])
    mask = np.zeros(spec.num_voxels, dtype=bool)
    mask[flat] = True
    data = np.where(mask[:, None], acc, 0.0)
    return FeatureVolume(spec, data.reshape(spec.dims + (c,)), mask.reshape(spec.dims))
