from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole camera with intrinsics ``K`` (3x3) and world-to-camera extrinsics ``E`` (3x4).

    Camera frame: x right, y down, z forward. Pixel ``(u, v)`` covers the
    continuous image region ``[u, u+1) x [v, v+1)``, so its center is at
    ``(u + 0.5, v + 0.5)``.
    """

    intrinsics: np.ndarray
    extrinsics: np.ndarray

    def __post_init__(self):
        K = np.array(self.intrinsics, dtype=np.float64)
        E = np.array(self.extrinsics, dtype=np.float64)
        if K.shape != (3, 3):
            raise ValueError(f"intrinsics must be 3x3, got {K.shape}")
        if E.shape != (3, 4):
            raise ValueError(f"extrinsics must be 3x4, got {E.shape}")
        if not np.all(np.isfinite(K)) or not np.all(np.isfinite(E)):
            raise ValueError("camera matrices must be finite")
        if abs(np.linalg.det(K)) < 1e-12:
            raise ValueError("intrinsic matrix is singular")
        if K[2, 2] != 1.0:
            raise ValueError("intrinsic matrix must have K[2,2] = 1")
        R = E[:, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6):
            raise ValueError("extrinsic rotation block is not orthonormal")
        K.setflags(write=False)
        E.setflags(write=False)
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "extrinsics", E)

    @classmethod
    def from_params(cls, fx, fy, cx, cy, extrinsics=None):
        K = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
        E = np.hstack([np.eye(3), np.zeros((3, 1))]) if extrinsics is None else extrinsics
        return cls(K, E)

    @classmethod
    def look_at(cls, fx, fy, cx, cy, position, target, up=(0.0, 1.0, 0.0)):
        """Camera at ``position`` looking at ``target``; world ``up`` maps to image up."""
        position = np.asarray(position, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - position
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            raise ValueError("view direction is parallel to up")
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])
        E = np.hstack([R, (-R @ position)[:, None]])
        return cls.from_params(fx, fy, cx, cy, E)

    @property
    def rotation(self):
        return self.extrinsics[:, :3]

    @property
    def translation(self):
        return self.extrinsics[:, 3]

    @property
    def position(self):
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def world_to_camera(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def camera_to_world(self, points):
        points = np.asarray(points, dtype=np.float64)
        return (points - self.translation) @ self.rotation

    def project(self, points_cam):
        """Continuous image coordinates ``(x, y)`` of camera-frame points (z > 0 assumed)."""
        uvw = np.asarray(points_cam, dtype=np.float64) @ self.intrinsics.T
        return uvw[..., :2] / uvw[..., 2:3]

    def pixel_rays(self, width, height):
        """Camera-frame directions through pixel centers, scaled to unit depth: ``(H, W, 3)``."""
        u, v = np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5)
        pix = np.stack([u, v, np.ones_like(u)], axis=-1)
        return pix @ np.linalg.inv(self.intrinsics).T

    def __eq__(self, other):
        return (isinstance(other, CameraModel)
                and np.array_equal(self.intrinsics, other.intrinsics)
                and np.array_equal(self.extrinsics, other.extrinsics))

    def __hash__(self):
        return hash((self.intrinsics.tobytes(), self.extrinsics.tobytes()))
