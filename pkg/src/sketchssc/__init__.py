"""Sketch-aware semantic scene completion at desk scale."""

from .camera import CameraModel
from .projection import FeatureVolume, back_project, project_features
from .sketch import SketchGrid, extract_sketch, sobel3d_axis_response
from .tsdf import TsdfVolume, downsample_tsdf, encode_tsdf
from .voxel import (IGNORE, GridSpec, SemanticLabelGrid, VisibilityMasks, VoxelGrid,
                    compute_visibility_masks, downsample_labels, voxel_to_world_center,
                    world_to_voxel)

__version__ = "0.1.0"

__all__ = [
    "IGNORE", "CameraModel", "FeatureVolume", "GridSpec", "SemanticLabelGrid", "SketchGrid",
    "TsdfVolume", "VisibilityMasks", "VoxelGrid", "back_project", "compute_visibility_masks",
    "downsample_labels", "downsample_tsdf", "encode_tsdf", "extract_sketch", "project_features",
    "sobel3d_axis_response", "voxel_to_world_center", "world_to_voxel",
]
