"""Voxel grid containers, world/voxel transforms, label downsampling and visibility masks.

Payload arrays are indexed ``[i, j, k]`` along ``(x, y, z)`` and stored in C
order, i.e. the linear index is ``(i * ny + j) * nz + k``. The y axis is the
vertical (gravity) axis.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .camera import CameraModel

IGNORE = 255


@dataclass(frozen=True)
class GridSpec:
    dims: tuple
    voxel_size: float
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        origin = tuple(float(o) for o in self.origin)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"dims must be three positive integers, got {self.dims}")
        if len(origin) != 3:
            raise ValueError("origin must have three components")
        if not self.voxel_size > 0:
            raise ValueError(f"voxel_size must be positive, got {self.voxel_size}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "voxel_size", float(self.voxel_size))

    @property
    def num_voxels(self):
        return int(np.prod(self.dims))

    def centers(self):
        """World coordinates of all voxel centers, shape ``dims + (3,)``."""
        idx = np.stack(np.meshgrid(*[np.arange(d) for d in self.dims], indexing="ij"), axis=-1)
        return np.asarray(self.origin) + (idx + 0.5) * self.voxel_size

    def scaled(self, rate):
        rate = int(rate)
        if any(d % rate for d in self.dims):
            raise ValueError(f"dims {self.dims} not divisible by rate {rate}")
        return GridSpec(tuple(d // rate for d in self.dims), self.voxel_size * rate, self.origin)


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Dense per-voxel payload; ``values`` has shape ``dims`` or ``dims + (C,)``."""

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values)
        if values.shape[:3] != self.spec.dims or values.ndim not in (3, 4):
            raise ValueError(f"payload shape {values.shape} does not match dims {self.spec.dims}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def channels(self):
        return 1 if self.values.ndim == 3 else self.values.shape[3]


@dataclass(frozen=True, eq=False)
class SemanticLabelGrid:
    """Integer labels in ``{0..num_classes-1}`` plus :data:`IGNORE`; class 0 is empty space."""

    spec: GridSpec
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.uint8)
        if labels.shape != self.spec.dims:
            raise ValueError(f"label shape {labels.shape} does not match dims {self.spec.dims}")
        if not 1 <= self.num_classes < IGNORE:
            raise ValueError(f"num_classes must be in [1, {IGNORE}), got {self.num_classes}")
        known = labels[labels != IGNORE]
        if known.size and known.max() >= self.num_classes:
            raise ValueError(f"label {int(known.max())} >= num_classes {self.num_classes}")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def ignore_mask(self):
        return self.labels == IGNORE


def world_to_voxel(p, spec: GridSpec):
    """Index of the voxel containing world point ``p``, or None outside the grid."""
    idx = np.floor((np.asarray(p, dtype=np.float64) - spec.origin) / spec.voxel_size)
    if np.any(idx < 0) or np.any(idx >= spec.dims):
        return None
    return tuple(int(i) for i in idx)


def world_to_voxel_array(points, spec: GridSpec):
    """Vectorized :func:`world_to_voxel`: returns ``(indices (M,3), inside (M,))``."""
    idx = np.floor((np.asarray(points, dtype=np.float64) - spec.origin) / spec.voxel_size)
    inside = np.all((idx >= 0) & (idx < np.asarray(spec.dims)), axis=-1)
    return idx.astype(np.int64), inside


def voxel_to_world_center(index, spec: GridSpec):
    return np.asarray(spec.origin) + (np.asarray(index, dtype=np.float64) + 0.5) * spec.voxel_size


def _blocks(arr, rate):
    nx, ny, nz = arr.shape[:3]
    b = arr.reshape(nx // rate, rate, ny // rate, rate, nz // rate, rate)
    return b.transpose(0, 2, 4, 1, 3, 5).reshape(nx // rate, ny // rate, nz // rate, rate ** 3)


def downsample_labels(labels: SemanticLabelGrid, rate):
    """Majority vote over each ``rate**3`` block.

    IGNORE voxels do not vote; a block that is entirely IGNORE stays IGNORE.
    Ties go to the smallest label.
    """
    rate = int(rate)
    if rate < 1:
        raise ValueError("rate must be a positive integer")
    spec = labels.spec.scaled(rate)
    blocks = _blocks(labels.labels, rate)
    counts = np.stack([(blocks == c).sum(axis=-1) for c in range(labels.num_classes)], axis=-1)
    out = counts.argmax(axis=-1).astype(np.uint8)
    out[counts.sum(axis=-1) == 0] = IGNORE
    return SemanticLabelGrid(spec, out, labels.num_classes)


@dataclass(frozen=True, eq=False)
class VisibilityMasks:
    frustum: np.ndarray
    surface: np.ndarray
    free: np.ndarray
    occluded: np.ndarray

    @classmethod
    def empty(cls, dims):
        z = np.zeros(dims, dtype=bool)
        return cls(z, z.copy(), z.copy(), z.copy())


def back_project_depth(depth, camera: CameraModel):
    """World points of every valid pixel plus their ``(row, col)`` indices."""
    depth = np.asarray(depth, dtype=np.float64)
    rows, cols = np.nonzero(depth > 0)
    d = depth[rows, cols]
    pix = np.stack([cols + 0.5, rows + 0.5, np.ones_like(d)], axis=-1)
    cam = (pix @ np.linalg.inv(camera.intrinsics).T) * d[:, None]
    return camera.camera_to_world(cam), rows, cols


def surface_voxels(depth, camera: CameraModel, spec: GridSpec):
    points, _, _ = back_project_depth(depth, camera)
    idx, inside = world_to_voxel_array(points, spec)
    mask = np.zeros(spec.dims, dtype=bool)
    idx = idx[inside]
    mask[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return mask


def observed_depth_at_centers(depth, camera: CameraModel, spec: GridSpec):
    """Per voxel: camera-frame depth of the center, whether the center projects into
    the image in front of the camera, and the nearest valid depth sample."""
    depth = np.asarray(depth, dtype=np.float64)
    h, w = depth.shape
    cam = camera.world_to_camera(spec.centers().reshape(-1, 3))
    z = cam[:, 2]
    in_view = z > 0
    xy = np.full((z.size, 2), -1.0)
    xy[in_view] = camera.project(cam[in_view])
    in_view &= (xy[:, 0] >= 0) & (xy[:, 0] < w) & (xy[:, 1] >= 0) & (xy[:, 1] < h)
    observed = np.full(z.size, np.nan)
    valid = depth > 0
    if valid.any() and in_view.any():
        _, (near_r, near_c) = ndimage.distance_transform_edt(~valid, return_indices=True)
        col = np.floor(xy[in_view, 0]).astype(np.int64)
        row = np.floor(xy[in_view, 1]).astype(np.int64)
        observed[in_view] = depth[near_r[row, col], near_c[row, col]]
    else:
        in_view[:] = False
    return z.reshape(spec.dims), in_view.reshape(spec.dims), observed.reshape(spec.dims)


def compute_visibility_masks(depth, camera: CameraModel, spec: GridSpec):
    """Classify voxels as surface, free or occluded with respect to one depth view.

    A voxel is in the frustum when its center projects into the image in
    front of the camera and the image holds at least one valid depth, or when
    it contains a back-projected depth point. Surface voxels contain a depth
    point. Other frustum voxels are free when their center is strictly nearer
    than the nearest valid depth sample along the projection, else occluded.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ValueError("depth must be a 2D array")
    if np.any(depth < 0) or not np.all(np.isfinite(depth)):
        raise ValueError("depth values must be finite and >= 0")
    if abs(np.linalg.det(camera.intrinsics)) < 1e-12:
        raise ValueError("intrinsic matrix is singular")
    if not (depth > 0).any():
        return VisibilityMasks.empty(spec.dims)
    z, in_view, observed = observed_depth_at_centers(depth, camera, spec)
    surface = surface_voxels(depth, camera, spec)
    frustum = in_view | surface
    nearer = np.zeros(spec.dims, dtype=bool)
    nearer[in_view] = z[in_view] < observed[in_view]
    free = frustum & ~surface & nearer
    occluded = frustum & ~surface & ~free
    return VisibilityMasks(frustum, surface, free, occluded)
