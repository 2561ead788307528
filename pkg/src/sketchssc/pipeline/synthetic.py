"""Procedural rooms rendered from a random interior viewpoint.

Each scene has a floor slab (class 1), two walls (class 2), each one or two
voxels thick, and one to three boxes standing on the floor (classes 3..N).
Depth is rendered by exact voxel traversal along every pixel ray, RGB by a
per-class palette with depth shading and noise. Voxels outside the view frustum are marked IGNORE.
"""

import colorsys
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ..camera import CameraModel
from ..sketch import SketchGrid, extract_sketch, sketch_targets
from ..tsdf import TsdfVolume, encode_tsdf
from ..voxel import (IGNORE, GridSpec, SemanticLabelGrid, VisibilityMasks, VoxelGrid,
                     compute_visibility_masks)


@dataclass(frozen=True, eq=False)
class SceneSample:
    rgb: np.ndarray
    depth: np.ndarray
    camera: CameraModel
    labels: SemanticLabelGrid
    tsdf: TsdfVolume
    sketch: SketchGrid
    masks: VisibilityMasks
    seed: Optional[int] = None

    @property
    def spec(self):
        return self.labels.spec

    def sketch_target(self):
        return sketch_targets(self.sketch, self.labels)


def build_sample(rgb, depth, camera, labels: SemanticLabelGrid, truncation, seed=None):
    """Attach masks, TSDF and sketch derived from a rendered view.

    Depth and TSDF are rounded to float32, the precision they are stored
    at, so a sample read back from disk equals the one generated.
    """
    depth = np.asarray(depth, dtype=np.float32).astype(np.float64)
    masks = compute_visibility_masks(depth, camera, labels.spec)
    tsdf = encode_tsdf(depth, camera, labels.spec, truncation)
    tsdf = replace(tsdf, grid=VoxelGrid(labels.spec,
                                        tsdf.values.astype(np.float32).astype(np.float64)))
    sketch = extract_sketch(labels)
    return SceneSample(np.asarray(rgb), np.asarray(depth), camera, labels, tsdf, sketch, masks, seed)


def palette(num_classes):
    """Fixed, well separated RGB color per class."""
    hues = (np.arange(num_classes) * 0.61803398875) % 1.0
    return np.array([colorsys.hsv_to_rgb(h, 0.7, 0.9) for h in hues])


def cast_rays(occupancy, spec: GridSpec, origin, directions):
    """First hit of each ray with an occupied voxel by grid traversal.

    ``directions`` (M, 3) are world-space; returned ``t`` values are in units
    of the direction vectors (inf when the ray leaves the grid), together
    with the index of the hit voxel (-1 when none). The ray origin must lie
    inside the grid in an empty voxel.
    """
    origin = np.asarray(origin, dtype=np.float64)
    d = np.asarray(directions, dtype=np.float64)
    m = len(d)
    dims = np.asarray(spec.dims)
    local = (origin - spec.origin) / spec.voxel_size
    start = np.floor(local).astype(np.int64)
    if np.any(start < 0) or np.any(start >= dims):
        raise ValueError("ray origin lies outside the grid")
    if occupancy[tuple(start)]:
        raise ValueError("ray origin lies inside an occupied voxel")
    cell = np.tile(start, (m, 1))
    step = np.where(d > 0, 1, -1).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(d != 0, spec.voxel_size / np.abs(d), np.inf)
        boundary = np.where(d > 0, cell + 1, cell) * spec.voxel_size + np.asarray(spec.origin)
        t_next = np.where(d != 0, (boundary - origin) / d, np.inf)
    t_hit = np.full(m, np.inf)
    hit = np.full((m, 3), -1, dtype=np.int64)
    active = np.ones(m, dtype=bool)
    for _ in range(int(dims.sum()) + 3):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        axis = np.argmin(t_next[idx], axis=1)
        t = t_next[idx, axis]
        cell[idx, axis] += step[idx, axis]
        t_next[idx, axis] += inv[idx, axis]
        c = cell[idx]
        inside = np.all((c >= 0) & (c < dims), axis=1)
        active[idx[~inside]] = False
        idx, c, t = idx[inside], c[inside], t[inside]
        occ = occupancy[c[:, 0], c[:, 1], c[:, 2]].astype(bool)
        t_hit[idx[occ]] = t[occ]
        hit[idx[occ]] = c[occ]
        active[idx[occ]] = False
    return t_hit, hit


def render_view(labels, spec: GridSpec, camera: CameraModel, width, height):
    """Depth (camera-frame z, 0 where nothing is hit) and hit class per pixel."""
    rays_cam = camera.pixel_rays(width, height).reshape(-1, 3)
    rays_world = rays_cam @ camera.rotation
    t, hit = cast_rays(labels > 0, spec, camera.position, rays_world)
    valid = np.isfinite(t)
    depth = np.where(valid, t, 0.0).reshape(height, width)
    cls = np.zeros(len(t), dtype=np.int64)
    cls[valid] = labels[hit[valid, 0], hit[valid, 1], hit[valid, 2]]
    return depth, cls.reshape(height, width)


def _room_labels(rng, dims, num_classes):
    nx, ny, nz = dims
    lab = np.zeros(dims, dtype=np.uint8)
    floor = int(rng.integers(1, 3))
    wx, wz = (int(v) for v in rng.integers(1, 3, size=2))
    lab[:, :floor, :] = 1
    lab[:wx, floor:, :] = 2
    lab[:, floor:, nz - wz:] = 2
    n_boxes = int(rng.integers(1, 4))
    for _ in range(n_boxes):
        sx = int(rng.integers(2, max(3, nx // 3) + 1))
        sz = int(rng.integers(2, max(3, nz // 3) + 1))
        sy = int(rng.integers(1, max(2, ny // 2) + 1))
        x0 = int(rng.integers(wx, max(wx + 1, nx - sx - nx // 4)))
        z0 = int(rng.integers(max(1, nz // 4), max(nz // 4 + 1, nz - wz - sz)))
        cls = int(rng.integers(3, num_classes))
        lab[x0:x0 + sx, floor:floor + sy, z0:z0 + sz] = cls
    return lab


def _random_camera(rng, spec: GridSpec, width, height):
    ext = np.asarray(spec.dims) * spec.voxel_size
    lo = np.asarray(spec.origin)
    pos = lo + ext * np.array([rng.uniform(0.8, 0.95), rng.uniform(0.6, 0.9), rng.uniform(0.05, 0.2)])
    target = lo + ext * np.array([rng.uniform(0.15, 0.4), rng.uniform(0.0, 0.25), rng.uniform(0.6, 0.85)])
    f = (width / 2.0) / np.tan(np.radians(rng.uniform(32.0, 40.0)))
    return CameraModel.look_at(f, f, width / 2.0, height / 2.0, pos, target)


def generate_synthetic_scene(seed, spec: GridSpec, num_classes, image_size=(32, 24),
                             truncation=None):
    """Deterministic synthetic :class:`SceneSample` for ``seed``.

    ``image_size`` is ``(width, height)``; ``truncation`` defaults to three
    voxel edges.
    """
    if min(spec.dims) < 8:
        raise ValueError(f"grid dims {spec.dims} too small; need at least 8 per axis")
    if num_classes < 3:
        raise ValueError("num_classes must be >= 3 (empty, floor, wall, objects)")
    truncation = 3.0 * spec.voxel_size if truncation is None else truncation
    rng = np.random.default_rng(seed)
    width, height = image_size
    full = _room_labels(rng, spec.dims, num_classes)
    camera = _random_camera(rng, spec, width, height)
    if full[tuple(np.floor((camera.position - spec.origin) / spec.voxel_size).astype(int))]:
        raise ValueError("camera position is occupied; grid too small")
    depth, cls = render_view(full, spec, camera, width, height)
    depth = depth.astype(np.float32).astype(np.float64)
    if not (depth > 0).any():
        raise ValueError("camera sees no surface; grid too small to place a camera")

    colors = palette(num_classes)
    shade = 1.0 - 0.35 * depth / max(depth.max(), 1e-9)
    tint = rng.uniform(0.9, 1.1, size=3)
    rgb = colors[cls] * shade[..., None] * tint + rng.normal(0.0, 0.03, size=(height, width, 3))
    rgb = np.clip(np.where((depth > 0)[..., None], rgb, 0.0), 0.0, 1.0)

    masks = compute_visibility_masks(depth, camera, spec)
    lab = full.copy()
    lab[~masks.frustum] = IGNORE
    labels = SemanticLabelGrid(spec, lab, num_classes)
    return build_sample(rgb, depth, camera, labels, truncation, seed)


def generate_dataset(seed, count, spec: GridSpec, num_classes, image_size=(32, 24)):
    """``count`` scenes with per-scene seeds spawned from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(count)
    return [generate_synthetic_scene(int(s), spec, num_classes, image_size) for s in seeds]


def sketch_target_batch(samples):
    return np.stack([s.sketch_target() for s in samples])


def label_batch(samples):
    return np.stack([s.labels.labels for s in samples])
