"""Canonical point cloud construction from masked RGB-D frames.

Frame 0 is backprojected to seed the canonical state; pixels flagged by the
motion/occlusion mask pull extra points in from later frames so that regions
hidden or moving at frame 0 start with geometry instead of voids.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .camera import CameraFrame, camera_to_world, project_points
from .core import GaussianCloud, logit
from .deform import BasisKind, init_deform
from .errors import InvalidParameterError


@dataclass
class RGBDFrame:
    """One observation: color in [0,1], depth in world units (0 = invalid),
    binary validity mask, normalized timestamp."""

    color: np.ndarray
    depth: np.ndarray
    mask: np.ndarray
    t: float

    def validate(self) -> None:
        h, w = self.depth.shape
        if self.color.shape != (h, w, 3):
            raise InvalidParameterError(f"color shape {self.color.shape} does not match depth {self.depth.shape}")
        if self.mask.shape != (h, w):
            raise InvalidParameterError(f"mask shape {self.mask.shape} does not match depth {self.depth.shape}")
        if np.any(self.depth < 0):
            raise InvalidParameterError("depth must be non-negative")
        if not np.isin(self.mask, (0, 1)).all():
            raise InvalidParameterError("mask must be binary")


@dataclass
class MotionMask:
    mask: np.ndarray  # (H, W) uint8, 1 = fuse points here
    tau: float
    n_frames: int


@dataclass
class SeedPointCloud:
    points: np.ndarray  # (P, 3) world units
    colors: np.ndarray  # (P, 3) in [0, 1]

    def __len__(self) -> int:
        return self.points.shape[0]


def backproject(frame: RGBDFrame, cam: CameraFrame) -> SeedPointCloud:
    """Lift valid masked pixels to world points through the pinhole model."""
    h, w = frame.depth.shape
    if (cam.height, cam.width) != (h, w):
        raise InvalidParameterError(f"frame is {h}x{w} but camera expects {cam.height}x{cam.width}")
    sel = (frame.mask == 1) & (frame.depth > 0)
    if not np.any(sel):
        warnings.warn("all pixels masked out; backprojection produced an empty cloud")
        return SeedPointCloud(points=np.zeros((0, 3)), colors=np.zeros((0, 3)))
    vs, us = np.nonzero(sel)
    d = frame.depth[vs, us]
    kinv = np.linalg.inv(cam.K)
    rays = np.stack([us, vs, np.ones_like(us)], axis=1).astype(np.float64) @ kinv.T
    p_cam = rays * d[:, None]
    points = camera_to_world(p_cam, cam)
    return SeedPointCloud(points=points, colors=frame.color[vs, us].astype(np.float64))


def motion_mask(frames: list[RGBDFrame], tau: float) -> MotionMask:
    """Pixels whose frame-0 color strays from the sequence mean, or that are
    occluded at frame 0 (mask = 0). Color difference is max over channels."""
    if len(frames) == 0:
        raise InvalidParameterError("motion mask needs at least one frame")
    if tau <= 0:
        raise InvalidParameterError(f"tau must be positive, got {tau}")
    mean = np.zeros_like(frames[0].color)
    for f in frames:
        mean += f.color
    mean /= len(frames)
    diff = np.max(np.abs(frames[0].color - mean), axis=2)
    mask = ((diff > tau) | (frames[0].mask == 0)).astype(np.uint8)
    return MotionMask(mask=mask, tau=float(tau), n_frames=len(frames))


def voxel_downsample(seed: SeedPointCloud, voxel: float) -> SeedPointCloud:
    """Keep the first point in every voxel; order-stable and deterministic."""
    if voxel <= 0 or len(seed) == 0:
        return seed
    keys = np.floor(seed.points / voxel).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    keep = np.sort(first)
    return SeedPointCloud(points=seed.points[keep].copy(), colors=seed.colors[keep].copy())


def fuse_points(canonical: SeedPointCloud, frames: list[RGBDFrame], cams: list[CameraFrame],
                motion: MotionMask, voxel: float, max_donors: int = 8) -> SeedPointCloud:
    """Append donor-frame points whose frame-0 projection lands in the motion
    mask, then voxel-deduplicate. Canonical points always survive (they come
    first and first-in-voxel wins); voxel <= 0 disables deduplication."""
    cam0 = cams[0]
    parts = [canonical.points]
    colors = [canonical.colors]
    n_donor = min(len(frames) - 1, max_donors)
    if n_donor > 0 and np.any(motion.mask):
        donor_idx = np.unique(np.round(np.linspace(1, len(frames) - 1, n_donor)).astype(int))
        for i in donor_idx:
            seed = backproject(frames[i], cams[i])
            if len(seed) == 0:
                continue
            uv, z = project_points(seed.points, cam0)
            px = np.round(uv).astype(np.int64)
            inside = (z > 0) & (px[:, 0] >= 0) & (px[:, 0] < cam0.width) \
                & (px[:, 1] >= 0) & (px[:, 1] < cam0.height)
            ok = np.zeros(len(seed), dtype=bool)
            ok[inside] = motion.mask[px[inside, 1], px[inside, 0]] == 1
            if np.any(ok):
                parts.append(seed.points[ok])
                colors.append(seed.colors[ok])
    merged = SeedPointCloud(points=np.concatenate(parts, axis=0), colors=np.concatenate(colors, axis=0))
    return voxel_downsample(merged, voxel)


def nearest_neighbor_distances(points: np.ndarray, k: int = 3, chunk: int = 512) -> np.ndarray:
    """Mean distance to the k nearest neighbors of each point (brute force,
    chunked to bound memory)."""
    n = points.shape[0]
    k = min(k, n - 1)
    if k < 1:
        return np.zeros(n)
    out = np.empty(n)
    for start in range(0, n, chunk):
        block = points[start : start + chunk]
        d2 = np.sum((block[:, None, :] - points[None, :, :]) ** 2, axis=2)
        # k+1 smallest include the zero self-distance
        part = np.partition(d2, k, axis=1)[:, : k + 1]
        part = np.sort(part, axis=1)[:, 1:]
        out[start : start + chunk] = np.sqrt(part).mean(axis=1)
    return out


def scene_extent(points: np.ndarray) -> float:
    """Radius of the cloud around its centroid, used for learning-rate and
    densification scaling."""
    if points.shape[0] == 0:
        return 1.0
    centroid = points.mean(axis=0)
    return float(max(np.linalg.norm(points - centroid, axis=1).max(), 1e-6))


def seed_to_gaussians(seed: SeedPointCloud, n_bases: int = 17,
                      kind: BasisKind = BasisKind.GAUSSIAN, sh_degree: int = 0) -> GaussianCloud:
    """One Gaussian per seed point: isotropic scale from local point spacing,
    low initial opacity, identity rotation, zero deformation."""
    n = len(seed)
    if n == 0:
        raise InvalidParameterError("cannot build a Gaussian cloud from an empty seed")
    if n > 1:
        span = np.linalg.norm(seed.points.max(axis=0) - seed.points.min(axis=0))
        dist = nearest_neighbor_distances(seed.points, k=3)
        dist = np.where(dist > 0, dist, 1e-2)
        scales = np.clip(dist, 1e-4, max(span / 10.0, 1e-4))
    else:
        scales = np.full(1, 1e-2)
    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0
    c_sh = (sh_degree + 1) ** 2
    sh = np.zeros((n, c_sh, 3))
    sh[:, 0, :] = seed.colors
    return GaussianCloud(
        positions=seed.points.copy(),
        rotations_raw=rotations,
        scales_raw=np.log(np.repeat(scales[:, None], 3, axis=1)),
        opacity_raw=np.full(n, float(logit(0.1))),
        sh=sh,
        deform=init_deform(n, n_bases, kind),
    )


def build_canonical_cloud(frames: list[RGBDFrame], cams: list[CameraFrame], tau: float = 0.1,
                          use_point_fusion: bool = True, voxel: float | None = None,
                          n_bases: int = 17, kind: BasisKind = BasisKind.GAUSSIAN,
                          sh_degree: int = 0, max_donors: int = 8) -> GaussianCloud:
    """Full initialization pipeline: backproject frame 0, optionally fuse
    motion-masked donor points, convert to Gaussians."""
    seed = backproject(frames[0], cams[0])
    if use_point_fusion and len(frames) > 1:
        motion = motion_mask(frames, tau)
        if voxel is None:
            if len(seed) > 1:
                voxel = float(np.median(nearest_neighbor_distances(seed.points, k=1)))
            else:
                voxel = 0.0
        seed = fuse_points(seed, frames, cams, motion, voxel, max_donors=max_donors)
    return seed_to_gaussians(seed, n_bases=n_bases, kind=kind, sh_degree=sh_degree)
