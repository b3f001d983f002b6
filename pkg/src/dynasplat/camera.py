"""Camera model: intrinsics, world-to-camera pose, pinhole projection.

Pixel (row i, col j) has its center at continuous image coordinates (j, i);
a pinhole camera with principal point ((W-1)/2, (H-1)/2) is centered.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError


@dataclass
class CameraFrame:
    """One view: intrinsics K, world-to-camera T, normalized timestamp."""

    K: np.ndarray
    T: np.ndarray
    t: float
    width: int
    height: int

    @property
    def fx(self) -> float:
        return float(self.K[0, 0])

    @property
    def fy(self) -> float:
        return float(self.K[1, 1])

    @property
    def cx(self) -> float:
        return float(self.K[0, 2])

    @property
    def cy(self) -> float:
        return float(self.K[1, 2])

    @property
    def rotation(self) -> np.ndarray:
        return self.T[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.T[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera origin in world coordinates."""
        return -self.rotation.T @ self.translation

    def validate(self) -> None:
        if self.K.shape != (3, 3) or self.T.shape != (4, 4):
            raise InvalidParameterError("camera matrices must be 3x3 (K) and 4x4 (T)")
        if self.K[0, 0] <= 0 or self.K[1, 1] <= 0:
            raise InvalidParameterError("focal lengths must be positive")
        if abs(self.K[1, 0]) > 0 or abs(self.K[2, 0]) > 0 or abs(self.K[2, 1]) > 0:
            raise InvalidParameterError("K must be upper-triangular")
        rot = self.rotation
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6):
            raise InvalidParameterError("rotation block of T is not orthonormal")
        if self.width <= 0 or self.height <= 0:
            raise InvalidParameterError("image dimensions must be positive")


def make_camera(fx, fy, cx, cy, width, height, T=None, t=0.0) -> CameraFrame:
    K = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
    if T is None:
        T = np.eye(4)
    return CameraFrame(K=K, T=np.asarray(T, dtype=np.float64), t=float(t), width=int(width), height=int(height))


def world_to_camera(points: np.ndarray, cam: CameraFrame) -> np.ndarray:
    return points @ cam.rotation.T + cam.translation


def camera_to_world(points: np.ndarray, cam: CameraFrame) -> np.ndarray:
    return (points - cam.translation) @ cam.rotation


def project_points(points: np.ndarray, cam: CameraFrame):
    """Pinhole projection of world points: pixel coords (P, 2) and camera z (P,)."""
    p = world_to_camera(np.atleast_2d(points), cam)
    z = p[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * p[:, 0] / z + cam.cx
        v = cam.fy * p[:, 1] / z + cam.cy
    return np.stack([u, v], axis=1), z
