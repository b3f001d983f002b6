"""Synthetic deforming-scene generator: the ground-truth oracle for tests.

A scripted Gaussian set is posed analytically at any timestamp and rendered
with the package's own rasterizer, so the emitted color/depth sequence is
exactly reproducible by the model class, and the generator doubles as a
self-consistent reconstruction benchmark. An optional moving occluder
rectangle zeroes the validity mask the way an instrument would.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .camera import make_camera
from .core import GaussianCloud, logit
from .deform import init_deform
from .errors import InvalidParameterError
from .rasterizer import RasterSettings, render
from .seeding import RGBDFrame


@dataclass
class SynthSpec:
    n_gaussians: int = 300
    n_frames: int = 64
    width: int = 64
    height: int = 64
    motion: str = "sine"            # "sine" | "poke" | "none"
    amplitude: float = 0.06         # world units of positional motion
    rot_amplitude: float = 0.10     # radians of quaternion wobble
    scale_amplitude: float = 0.05   # log-scale pulsation
    occluder: bool = False
    occluder_frac: float = 0.2      # fraction of image area covered at frame 0
    occluder_moving: bool = True
    depth_min: float = 2.6
    depth_max: float = 3.4
    spread: float = 1.2             # lateral extent of the Gaussian slab
    base_scale: float = 0.085
    focal: float = 70.0
    poke_window: float = 0.05       # temporal sigma of the poke bump
    poke_radius: float = 0.5        # spatial radius of the poke

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        return cls(**d)


@dataclass
class SyntheticScene:
    spec: SynthSpec
    base_positions: np.ndarray
    base_rotations: np.ndarray
    base_scales_raw: np.ndarray
    opacity_raw: np.ndarray
    colors: np.ndarray
    amp: np.ndarray           # (N, 3) per-Gaussian translation amplitude
    phase: np.ndarray         # (N,)
    rot_axis: np.ndarray      # (N, 3)
    scale_phase: np.ndarray   # (N,)
    poke_center: np.ndarray   # (3,)
    poke_dir: np.ndarray      # (3,)
    cams: list = field(default_factory=list)

    def position_offsets(self, t: float) -> np.ndarray:
        s = self.spec
        if s.motion == "sine":
            return self.amp * np.sin(2 * np.pi * t + self.phase)[:, None]
        if s.motion == "poke":
            bump = np.exp(-0.5 * ((t - 0.5) / s.poke_window) ** 2)
            d2 = np.sum((self.base_positions - self.poke_center) ** 2, axis=1)
            weight = np.exp(-d2 / (s.poke_radius**2))
            return s.amplitude * bump * weight[:, None] * self.poke_dir[None, :]
        return np.zeros_like(self.base_positions)

    def cloud_at(self, t: float) -> GaussianCloud:
        """Ground-truth cloud posed at time t (deformation curves all zero)."""
        s = self.spec
        positions = self.base_positions + self.position_offsets(t)
        rotations = self.base_rotations.copy()
        scales_raw = self.base_scales_raw.copy()
        if s.motion == "sine":
            ang = s.rot_amplitude * np.sin(2 * np.pi * t + self.phase)
            rotations = rotations + np.column_stack(
                [np.cos(0.5 * ang) - 1.0, self.rot_axis * np.sin(0.5 * ang)[:, None]])
            scales_raw = scales_raw + (s.scale_amplitude * np.sin(2 * np.pi * t + self.scale_phase))[:, None]
        return GaussianCloud(
            positions=positions,
            rotations_raw=rotations,
            scales_raw=scales_raw,
            opacity_raw=self.opacity_raw.copy(),
            sh=self.colors[:, None, :].copy(),
            deform=init_deform(len(self.base_positions), 1),
        )

    def occluder_rect(self, frame_index: int):
        """Inclusive pixel rect (x0, x1, y0, y1) of the occluder, or None."""
        s = self.spec
        if not s.occluder:
            return None
        area = s.occluder_frac * s.width * s.height
        rw = int(round(np.sqrt(area * s.width / s.height)))
        rh = int(round(area / max(rw, 1)))
        if s.occluder_moving and s.n_frames > 1:
            span = s.width - rw
            x0 = int(round(span * frame_index / (s.n_frames - 1)))
        else:
            x0 = 0
        y0 = (s.height - rh) // 2
        return (x0, min(x0 + rw - 1, s.width - 1), y0, min(y0 + rh - 1, s.height - 1))


def generate_synthetic(spec: SynthSpec, rng_seed: int, settings: RasterSettings | None = None):
    """Deterministic scene + rendered RGB-D-mask frame sequence.

    Returns (scene, frames, cams). Depth is the rasterizer's own composited
    depth of the true scene, so the ground-truth parameters reproduce the
    frames exactly.
    """
    if spec.n_frames <= 0:
        raise InvalidParameterError("need at least one frame")
    if spec.n_gaussians <= 0:
        raise InvalidParameterError("need at least one Gaussian")
    rng = np.random.default_rng(rng_seed)
    n = spec.n_gaussians
    positions = np.column_stack([
        rng.uniform(-spec.spread, spec.spread, n),
        rng.uniform(-spec.spread, spec.spread, n),
        rng.uniform(spec.depth_min, spec.depth_max, n),
    ])
    rotations = rng.normal(size=(n, 4))
    rotations /= np.linalg.norm(rotations, axis=1, keepdims=True)
    scales_raw = np.log(spec.base_scale) + rng.normal(0, 0.25, (n, 3))
    opacity_raw = logit(rng.uniform(0.6, 0.95, n))
    colors = rng.uniform(0.05, 0.95, (n, 3))
    amp = spec.amplitude * rng.uniform(0.3, 1.0, n)[:, None] * _unit(rng.normal(size=(n, 3)))
    phase = rng.uniform(0, 2 * np.pi, n)
    rot_axis = _unit(rng.normal(size=(n, 3)))
    scale_phase = rng.uniform(0, 2 * np.pi, n)
    poke_center = np.array([0.0, 0.0, 0.5 * (spec.depth_min + spec.depth_max)])
    poke_dir = _unit(rng.normal(size=3))

    cx = (spec.width - 1) / 2.0
    cy = (spec.height - 1) / 2.0
    cams = []
    for i in range(spec.n_frames):
        t = i / (spec.n_frames - 1) if spec.n_frames > 1 else 0.0
        cams.append(make_camera(spec.focal, spec.focal, cx, cy, spec.width, spec.height, t=t))

    scene = SyntheticScene(
        spec=spec, base_positions=positions, base_rotations=rotations,
        base_scales_raw=scales_raw, opacity_raw=opacity_raw, colors=colors,
        amp=amp, phase=phase, rot_axis=rot_axis, scale_phase=scale_phase,
        poke_center=poke_center, poke_dir=poke_dir, cams=cams,
    )
    frames = []
    for i, cam in enumerate(cams):
        out = render(scene.cloud_at(cam.t), cam, background=None, settings=settings)
        mask = np.ones((spec.height, spec.width), dtype=np.uint8)
        rect = scene.occluder_rect(i)
        if rect is not None:
            x0, x1, y0, y1 = rect
            mask[y0 : y1 + 1, x0 : x1 + 1] = 0
        frames.append(RGBDFrame(color=out.color, depth=out.depth, mask=mask, t=cam.t))
    return scene, frames, cams


def split_indices(n_frames: int):
    """Deterministic 7:1 split: every 8th frame is held out for testing."""
    idx = np.arange(n_frames)
    test = idx[(idx + 1) % 8 == 0]
    train = idx[(idx + 1) % 8 != 0]
    if len(test) == 0:  # tiny sequences still need a test frame
        test = idx[-1:]
        train = idx[:-1] if n_frames > 1 else idx
    return train, test


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)
