"""Truncated signed distance encoding of a single depth view."""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .camera import CameraModel
from .voxel import (GridSpec, VisibilityMasks, VoxelGrid, _blocks, back_project_depth,
                    compute_visibility_masks, observed_depth_at_centers)


@dataclass(frozen=True, eq=False)
class TsdfVolume:
    """Distances normalized by ``truncation`` into [-1, 1].

    Positive values lie on the camera side of the observed surface (free
    space), negative values behind it. Voxels outside the view frustum hold -1.
    """

    grid: VoxelGrid
    truncation: float
    masks: Optional[VisibilityMasks] = None

    @property
    def values(self):
        return self.grid.values

    @property
    def spec(self):
        return self.grid.spec


def encode_tsdf(depth, camera: CameraModel, spec: GridSpec, truncation=0.24, variant="plain"):
    """Encode ``depth`` (meters, 0 = invalid) as a :class:`TsdfVolume` on ``spec``.

    Each voxel stores ``sign * min(dist, truncation) / truncation`` where
    ``dist`` is the Euclidean distance from its center to the nearest
    back-projected depth point. The sign is + for free voxels and - for
    occluded ones; surface voxels take the sign of (observed depth - center
    depth) along their projection.
    """
    if variant != "plain":
        raise ValueError(f"unsupported TSDF variant {variant!r}; only 'plain' is implemented")
    if not truncation > 0:
        raise ValueError("truncation must be positive")
    depth = np.asarray(depth, dtype=np.float64)
    points, _, _ = back_project_depth(depth, camera)
    if len(points) == 0:
        raise ValueError("depth map has no valid pixels; surface set is empty")
    masks = compute_visibility_masks(depth, camera, spec)
    centers = spec.centers().reshape(-1, 3)
    dist, _ = cKDTree(points).query(centers)
    mag = np.minimum(dist, truncation).reshape(spec.dims) / truncation

    sign = np.where(masks.occluded, -1.0, 1.0)
    z, in_view, observed = observed_depth_at_centers(depth, camera, spec)
    behind = masks.surface & in_view & (z >= observed)
    sign[behind] = -1.0
    values = np.where(masks.frustum, sign * mag, -1.0)
    return TsdfVolume(VoxelGrid(spec, values), float(truncation), masks)


def downsample_tsdf(vol: TsdfVolume, rate):
    """Block-average the TSDF by an integer ``rate``; masks are not carried over."""
    rate = int(rate)
    if rate < 1:
        raise ValueError("rate must be a positive integer")
    spec = vol.spec.scaled(rate)
    values = _blocks(np.asarray(vol.values, dtype=np.float64), rate).mean(axis=-1)
    return TsdfVolume(VoxelGrid(spec, values), vol.truncation, None)
