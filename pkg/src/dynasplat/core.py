"""Canonical Gaussian point cloud: storage, activations, covariance."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .deform import DeformParams, init_deform
from .errors import InvalidParameterError, NumericalError

COV_EPS = 1e-8  # diagonal regularization before inverting a 3D covariance


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass
class GaussianCloud:
    """Per-Gaussian canonical attributes plus temporal deformation curves.

    positions     (N, 3) world units
    rotations_raw (N, 4) unnormalized quaternions, wxyz order
    scales_raw    (N, 3) log-scale; world scale is exp(scales_raw)
    opacity_raw   (N,)   pre-sigmoid logits
    sh            (N, C, 3) color coefficients; C = (degree + 1)^2, and at
                  degree 0 the single coefficient is the RGB color directly
    deform        learnable per-Gaussian deformation curves
    """

    positions: np.ndarray
    rotations_raw: np.ndarray
    scales_raw: np.ndarray
    opacity_raw: np.ndarray
    sh: np.ndarray
    deform: DeformParams

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def sh_degree(self) -> int:
        return int(round(np.sqrt(self.sh.shape[1]))) - 1

    def validate(self) -> None:
        n = len(self)
        shapes = {
            "positions": (n, 3),
            "rotations_raw": (n, 4),
            "scales_raw": (n, 3),
            "opacity_raw": (n,),
        }
        for name, shape in shapes.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise InvalidParameterError(f"{name} has shape {arr.shape}, expected {shape}")
        if self.sh.ndim != 3 or self.sh.shape[0] != n or self.sh.shape[2] != 3:
            raise InvalidParameterError(f"sh has shape {self.sh.shape}, expected (N, C, 3)")
        if self.sh.shape[1] not in (1, 4, 9, 16):
            raise InvalidParameterError(f"sh coefficient count {self.sh.shape[1]} is not a supported degree")
        for name in shapes:
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidParameterError(f"{name} contains non-finite values")
        if n and np.any(np.linalg.norm(self.rotations_raw, axis=1) < 1e-12):
            raise InvalidParameterError("a raw quaternion is (near) zero")
        if self.deform.n != n:
            raise InvalidParameterError("deformation parameters and attributes disagree on N")

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            positions=self.positions.copy(),
            rotations_raw=self.rotations_raw.copy(),
            scales_raw=self.scales_raw.copy(),
            opacity_raw=self.opacity_raw.copy(),
            sh=self.sh.copy(),
            deform=self.deform.copy(),
        )


def empty_cloud(n_bases: int = 17, sh_degree: int = 0) -> GaussianCloud:
    c = (sh_degree + 1) ** 2
    return GaussianCloud(
        positions=np.zeros((0, 3)),
        rotations_raw=np.zeros((0, 4)),
        scales_raw=np.zeros((0, 3)),
        opacity_raw=np.zeros((0,)),
        sh=np.zeros((0, c, 3)),
        deform=init_deform(0, n_bases),
    )


def quat_to_rotation(q_raw: np.ndarray) -> np.ndarray:
    """Rotation matrix of q_raw / ||q_raw|| (wxyz), invariant to positive scaling."""
    q_raw = np.asarray(q_raw, dtype=np.float64)
    if q_raw.shape != (4,):
        raise InvalidParameterError(f"quaternion has shape {q_raw.shape}, expected (4,)")
    if not np.all(np.isfinite(q_raw)):
        raise InvalidParameterError("quaternion has non-finite components")
    norm = np.linalg.norm(q_raw)
    if norm < 1e-12:
        raise InvalidParameterError("quaternion is (near) zero")
    return quats_to_rotations(q_raw[None])[0]


def quats_to_rotations(q_raw: np.ndarray) -> np.ndarray:
    """Batched wxyz quaternion -> rotation matrices. No validation."""
    q = q_raw / np.linalg.norm(q_raw, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    rot = np.empty(q.shape[:-1] + (3, 3))
    rot[..., 0, 0] = 1 - 2 * (y * y + z * z)
    rot[..., 0, 1] = 2 * (x * y - w * z)
    rot[..., 0, 2] = 2 * (x * z + w * y)
    rot[..., 1, 0] = 2 * (x * y + w * z)
    rot[..., 1, 1] = 1 - 2 * (x * x + z * z)
    rot[..., 1, 2] = 2 * (y * z - w * x)
    rot[..., 2, 0] = 2 * (x * z - w * y)
    rot[..., 2, 1] = 2 * (y * z + w * x)
    rot[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return rot


def rotation_partials(q_unit: np.ndarray) -> np.ndarray:
    """dR/dq for unit quaternions, shape (..., 4, 3, 3).

    Valid only at ||q|| = 1; compose with the normalization Jacobian for raw
    quaternions.
    """
    w, x, y, z = q_unit[..., 0], q_unit[..., 1], q_unit[..., 2], q_unit[..., 3]
    zero = np.zeros_like(w)
    part = np.empty(q_unit.shape[:-1] + (4, 3, 3))
    part[..., 0, :, :] = 2 * np.stack(
        [
            np.stack([zero, -z, y], axis=-1),
            np.stack([z, zero, -x], axis=-1),
            np.stack([-y, x, zero], axis=-1),
        ],
        axis=-2,
    )
    part[..., 1, :, :] = 2 * np.stack(
        [
            np.stack([zero, y, z], axis=-1),
            np.stack([y, -2 * x, -w], axis=-1),
            np.stack([z, w, -2 * x], axis=-1),
        ],
        axis=-2,
    )
    part[..., 2, :, :] = 2 * np.stack(
        [
            np.stack([-2 * y, x, w], axis=-1),
            np.stack([x, zero, z], axis=-1),
            np.stack([-w, z, -2 * y], axis=-1),
        ],
        axis=-2,
    )
    part[..., 3, :, :] = 2 * np.stack(
        [
            np.stack([-2 * z, -w, x], axis=-1),
            np.stack([w, -2 * z, y], axis=-1),
            np.stack([x, y, zero], axis=-1),
        ],
        axis=-2,
    )
    return part


def build_covariance(q_raw: np.ndarray, s_activated: np.ndarray) -> np.ndarray:
    """Sigma = R S S^T R^T from a raw quaternion and activated (positive) scales."""
    s = np.asarray(s_activated, dtype=np.float64)
    if s.shape != (3,):
        raise InvalidParameterError(f"scale has shape {s.shape}, expected (3,)")
    if not np.all(np.isfinite(s)) or np.any(s <= 0):
        raise InvalidParameterError("scales must be positive and finite")
    rot = quat_to_rotation(q_raw)
    m = rot * s[None, :]
    return m @ m.T


def gaussian_density(x: np.ndarray, mu: np.ndarray, cov: np.ndarray) -> float:
    """exp(-0.5 (x - mu)^T Sigma^-1 (x - mu)); 1 exactly at x = mu."""
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    d = x - mu
    try:
        sol = np.linalg.solve(cov, d)
    except np.linalg.LinAlgError:
        # degenerate covariance: regularize the diagonal and retry
        try:
            sol = np.linalg.solve(cov + COV_EPS * np.eye(3), d)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"covariance is singular after regularization: {exc}") from None
    q = float(d @ sol)
    return float(np.exp(-0.5 * max(q, 0.0)))


def activate_scales(scales_raw: np.ndarray) -> np.ndarray:
    return np.exp(scales_raw)


def activate_opacity(opacity_raw: np.ndarray) -> np.ndarray:
    return sigmoid(opacity_raw)


def activate(cloud: GaussianCloud, index: int):
    """(mu, R, s, alpha, color) for one Gaussian at the canonical state."""
    n = len(cloud)
    if not 0 <= index < n:
        raise InvalidParameterError(f"index {index} out of range for cloud of size {n}")
    mu = cloud.positions[index].copy()
    rot = quat_to_rotation(cloud.rotations_raw[index])
    s = activate_scales(cloud.scales_raw[index])
    alpha = float(activate_opacity(cloud.opacity_raw[index]))
    if cloud.sh_degree == 0:
        color = np.maximum(cloud.sh[index, 0], 0.0)
    else:
        color = cloud.sh[index, 0].copy()
    return mu, rot, s, alpha, color
