import sys

import numpy as np
import pytest

from sketchssc.camera import CameraModel
from sketchssc.voxel import GridSpec


def frontal_camera(spec: GridSpec, width=16, height=12, distance=0.6):
    """Camera in front of the grid's z=0 face, looking along +z through its middle."""
    lo = np.asarray(spec.origin)
    hi = lo + np.asarray(spec.dims) * spec.voxel_size
    mid = 0.5 * (lo + hi)
    pos = np.array([mid[0], mid[1], lo[2] - distance])
    f = 0.8 * width
    return CameraModel.look_at(f, f, width / 2, height / 2, pos, pos + [0.0, 0.0, 1.0],
                               up=(0.0, -1.0, 0.0))


def random_depth_view(rng, spec: GridSpec, width=16, height=12):
    """A camera looking into the grid plus a depth map of a tilted plane with holes."""
    distance = rng.uniform(0.3, 0.8)
    cam = frontal_camera(spec, width, height, distance=distance)
    extent = np.asarray(spec.dims) * spec.voxel_size
    base = distance + rng.uniform(0.2, 0.8) * extent[2]
    u, v = np.meshgrid(np.arange(width), np.arange(height))
    depth = base + rng.uniform(-0.01, 0.01) * (u - width / 2) + rng.uniform(-0.01, 0.01) * (v - height / 2)
    depth = depth + rng.uniform(0, 0.02, size=depth.shape)
    depth[rng.random(depth.shape) < 0.1] = 0.0
    return cam, depth


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_config(variant="two-stage+prior+cvae", dims=(8, 8, 8), num_classes=4, channels=4):
    """A narrow model on a small grid: fast enough for unit tests."""
    from dataclasses import replace

    from sketchssc.cvae import HallucinationConfig
    from sketchssc.pipeline.config import default_stage_spec, load_config, with_variant

    model_cfg, train_cfg = load_config()
    stage = replace(default_stage_spec(channels), batch_norm=model_cfg.stage1.batch_norm,
                    skip=model_cfg.stage1.skip)
    model_cfg = replace(model_cfg, grid_dims=dims, num_classes=num_classes,
                        feature_channels=channels, stage1=stage, stage2=stage,
                        hallucination=HallucinationConfig(latent_dim=3, channels=4))
    return with_variant(model_cfg, variant), train_cfg


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
