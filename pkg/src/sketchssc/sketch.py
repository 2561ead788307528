"""Ground-truth 3D sketch extraction from semantic labels.

A voxel belongs to the sketch when the 3D Sobel response of the label volume
is nonzero along more than one axis. Binarizing the per-axis responses makes
the result depend only on where labels change, not on the label values.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .voxel import IGNORE, SemanticLabelGrid, VoxelGrid

DERIVATIVE = (-1, 0, 1)
SMOOTHING = (1, 2, 1)
AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True, eq=False)
class SketchGrid:
    grid: VoxelGrid

    @property
    def mask(self):
        return self.grid.values

    @property
    def spec(self):
        return self.grid.spec


def _axis_index(axis):
    if isinstance(axis, str):
        if axis not in AXES:
            raise ValueError(f"axis must be one of x, y, z; got {axis!r}")
        return AXES[axis]
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1 or 2; got {axis!r}")
    return int(axis)


def _correlate_edge(a, weights, axis):
    pad = [(0, 0)] * a.ndim
    pad[axis] = (1, 1)
    p = np.pad(a, pad, mode="edge")
    n = a.shape[axis]
    out = np.zeros_like(a)
    for offset, w in enumerate(weights):
        if w:
            out += w * np.take(p, np.arange(offset, offset + n), axis=axis)
    return out


def fill_ignore(labels: SemanticLabelGrid):
    """Replace IGNORE voxels with the label of the nearest annotated voxel."""
    lab = labels.labels
    ignore = lab == IGNORE
    if not ignore.any() or ignore.all():
        return lab.copy()
    _, idx = ndimage.distance_transform_edt(ignore, return_indices=True)
    return lab[tuple(idx)]


def sobel3d_axis_response(labels: SemanticLabelGrid, axis):
    """Separable 3D Sobel response of the label volume along ``axis``.

    The derivative kernel runs along ``axis`` and the (1, 2, 1) smoothing
    kernel along the other two; borders use edge replication and IGNORE
    voxels take their nearest annotated label first.
    """
    a = _axis_index(axis)
    vol = fill_ignore(labels).astype(np.int64)
    for ax in range(3):
        vol = _correlate_edge(vol, DERIVATIVE if ax == a else SMOOTHING, ax)
    return VoxelGrid(labels.spec, vol)


def extract_sketch(labels: SemanticLabelGrid, threshold=1):
    """Sketch voxels: those where more than ``threshold`` axes have a nonzero response."""
    active = sum((sobel3d_axis_response(labels, ax).values != 0).astype(np.int64)
                 for ax in range(3))
    return SketchGrid(VoxelGrid(labels.spec, active > threshold))


def sketch_targets(sketch: SketchGrid, labels: SemanticLabelGrid):
    """Two-class training target: 1 on sketch voxels, 0 elsewhere, IGNORE where unlabeled."""
    t = sketch.mask.astype(np.uint8)
    t[labels.ignore_mask] = IGNORE
    return t
