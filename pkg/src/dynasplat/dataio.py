"""On-disk formats: scene directories, checkpoints, and report files.

Scene layout:
    cameras.txt     key/value header (fx fy cx cy width height depth_scale)
                    then per frame: "frame <index> <raw_timestamp>" followed
                    by 4 rows of the 4x4 world-to-camera matrix
    color/NNNNNN.ppm   8-bit binary PPM
    depth/NNNNNN.pgm   16-bit binary PGM (Netpbm big-endian); world depth =
                       stored value * depth_scale
    mask/NNNNNN.pgm    8-bit binary PGM, nonzero = valid

Checkpoints are a magic + version + JSON header + little-endian float32 blob;
the header records the blob layout so a round trip is bit-exact.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .camera import make_camera
from .core import GaussianCloud
from .deform import BasisKind, DeformParams, N_CHANNELS
from .errors import CheckpointError, DatasetError
from .seeding import RGBDFrame
from .synthetic import split_indices

CKPT_MAGIC = b"DGSP"
CKPT_VERSION = 1

# Serialization order of the parameter blob
_BLOB_FIELDS = ("positions", "rotations_raw", "scales_raw", "opacity_raw", "sh",
                "omega", "centers", "widths")


# ---------------------------------------------------------------- images

def _read_pnm_header(fh):
    """Parse a binary PNM header (magic, dims, maxval), honoring comments."""
    magic = fh.read(2)
    tokens = []
    while len(tokens) < 3:
        line = fh.readline()
        if not line:
            raise DatasetError("truncated PNM header")
        stripped = line.split(b"#", 1)[0]
        tokens.extend(stripped.split())
    width, height, maxval = (int(t) for t in tokens[:3])
    return magic, width, height, maxval


def write_ppm(path, image: np.ndarray) -> None:
    """8-bit binary PPM from float RGB in [0, 1]."""
    h, w = image.shape[:2]
    data = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, w, h, maxval = _read_pnm_header(fh)
        if magic != b"P6" or maxval != 255:
            raise DatasetError(f"{path}: expected 8-bit binary PPM")
        data = np.frombuffer(fh.read(w * h * 3), dtype=np.uint8)
    if data.size != w * h * 3:
        raise DatasetError(f"{path}: truncated pixel data")
    return data.reshape(h, w, 3).astype(np.float64) / 255.0


def write_pgm16(path, values: np.ndarray) -> None:
    """16-bit binary PGM of raw integer values (big-endian per Netpbm)."""
    h, w = values.shape
    data = np.clip(np.round(values), 0, 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n65535\n" % (w, h))
        fh.write(data.tobytes())


def write_pgm8(path, values: np.ndarray) -> None:
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(values.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    """Binary PGM as integers; 8- or 16-bit (big-endian) by maxval."""
    with open(path, "rb") as fh:
        magic, w, h, maxval = _read_pnm_header(fh)
        if magic != b"P5":
            raise DatasetError(f"{path}: expected binary PGM")
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        data = np.frombuffer(fh.read(w * h * dtype.itemsize), dtype=dtype)
    if data.size != w * h:
        raise DatasetError(f"{path}: truncated pixel data")
    return data.reshape(h, w).astype(np.int64)


# ---------------------------------------------------------------- datasets

@dataclass
class SceneDataset:
    frames: list          # RGBDFrame, timestamps normalized to [0, 1]
    cams: list            # CameraFrame, same timestamps
    train_indices: np.ndarray
    test_indices: np.ndarray
    depth_scale: float
    path: str = ""

    def __len__(self) -> int:
        return len(self.frames)


def write_scene(path, frames, cams, depth_scale: float | None = None) -> None:
    """Serialize frames + cameras into the directory layout above."""
    os.makedirs(path, exist_ok=True)
    for sub in ("color", "depth", "mask"):
        os.makedirs(os.path.join(path, sub), exist_ok=True)
    if depth_scale is None:
        dmax = max(float(f.depth.max()) for f in frames)
        depth_scale = max(dmax, 1e-6) / 65000.0
    cam0 = cams[0]
    lines = [
        "# dynasplat scene manifest",
        f"fx {cam0.fx!r}",
        f"fy {cam0.fy!r}",
        f"cx {cam0.cx!r}",
        f"cy {cam0.cy!r}",
        f"width {cam0.width}",
        f"height {cam0.height}",
        f"depth_scale {depth_scale!r}",
    ]
    for i, (frame, cam) in enumerate(zip(frames, cams)):
        lines.append(f"frame {i} {cam.t!r}")
        for row in cam.T:
            lines.append(" ".join(repr(float(v)) for v in row))
        write_ppm(os.path.join(path, "color", f"{i:06d}.ppm"), frame.color)
        write_pgm16(os.path.join(path, "depth", f"{i:06d}.pgm"), frame.depth / depth_scale)
        write_pgm8(os.path.join(path, "mask", f"{i:06d}.pgm"), frame.mask * 255)
    with open(os.path.join(path, "cameras.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path) -> SceneDataset:
    """Load and validate a scene directory; normalize timestamps, apply the
    depth scale, binarize masks, and compute the 7:1 split."""
    manifest = os.path.join(path, "cameras.txt")
    if not os.path.isfile(manifest):
        raise DatasetError(f"missing camera manifest {manifest}")
    header: dict = {}
    frames_meta = []  # (index, timestamp, 4x4 matrix)
    with open(manifest) as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    i = 0
    while i < len(lines):
        parts = lines[i].split()
        if parts[0] == "frame":
            if len(parts) != 3:
                raise DatasetError(f"malformed frame record: {lines[i]!r}")
            if i + 4 >= len(lines):
                raise DatasetError(f"truncated matrix for frame record: {lines[i]!r}")
            rows = [list(map(float, lines[i + 1 + r].split())) for r in range(4)]
            mat = np.array(rows)
            if mat.shape != (4, 4):
                raise DatasetError(f"frame {parts[1]}: expected a 4x4 matrix")
            frames_meta.append((int(parts[1]), float(parts[2]), mat))
            i += 5
        else:
            if len(parts) != 2:
                raise DatasetError(f"malformed manifest line: {lines[i]!r}")
            header[parts[0]] = float(parts[1])
            i += 1
    for key in ("fx", "fy", "cx", "cy", "width", "height", "depth_scale"):
        if key not in header:
            raise DatasetError(f"manifest is missing '{key}'")
    width, height = int(header["width"]), int(header["height"])
    depth_scale = float(header["depth_scale"])

    indices = [m[0] for m in frames_meta]
    if indices != list(range(len(indices))):
        raise DatasetError(f"frame indices are not contiguous from 0: {indices}")
    raw_ts = np.array([m[1] for m in frames_meta])
    if len(raw_ts) == 0:
        raise DatasetError("manifest lists no frames")
    if len(raw_ts) > 1 and not np.all(np.diff(raw_ts) > 0):
        raise DatasetError("timestamps are not strictly increasing")
    span = raw_ts[-1] - raw_ts[0]
    norm_ts = (raw_ts - raw_ts[0]) / span if span > 0 else np.zeros_like(raw_ts)

    frames, cams = [], []
    for (idx, _, mat), t in zip(frames_meta, norm_ts):
        color_path = os.path.join(path, "color", f"{idx:06d}.ppm")
        depth_path = os.path.join(path, "depth", f"{idx:06d}.pgm")
        mask_path = os.path.join(path, "mask", f"{idx:06d}.pgm")
        for p in (color_path, depth_path, mask_path):
            if not os.path.isfile(p):
                raise DatasetError(f"missing frame file {p}")
        color = read_ppm(color_path)
        depth = read_pgm(depth_path).astype(np.float64) * depth_scale
        mask = (read_pgm(mask_path) > 0).astype(np.uint8)
        for name, arr in (("color", color[:, :, 0]), ("depth", depth), ("mask", mask)):
            if arr.shape != (height, width):
                raise DatasetError(f"frame {idx}: {name} is {arr.shape}, manifest says {(height, width)}")
        cam = make_camera(header["fx"], header["fy"], header["cx"], header["cy"],
                          width, height, T=mat, t=float(t))
        cam.validate()
        frames.append(RGBDFrame(color=color, depth=depth, mask=mask, t=float(t)))
        cams.append(cam)
    train_idx, test_idx = split_indices(len(frames))
    return SceneDataset(frames=frames, cams=cams, train_indices=train_idx,
                        test_indices=test_idx, depth_scale=depth_scale, path=str(path))


def dataset_from_frames(frames, cams) -> SceneDataset:
    """In-memory dataset with the standard split (no files involved)."""
    train_idx, test_idx = split_indices(len(frames))
    return SceneDataset(frames=list(frames), cams=list(cams), train_indices=train_idx,
                        test_indices=test_idx, depth_scale=1.0)


# ---------------------------------------------------------------- checkpoints

def _config_echo(cfg) -> dict:
    if cfg is None:
        return {}
    out = {}
    for key, val in vars(cfg).items():
        if isinstance(val, BasisKind):
            out[key] = val.value
        elif isinstance(val, (list, tuple)):
            out[key] = list(val)
        elif isinstance(val, dict):
            out[key] = dict(val)
        else:
            out[key] = val
    return out


def save_checkpoint(cloud: GaussianCloud, cfg, iteration: int, path,
                    rng_state=None) -> None:
    """Header + float32 parameter blob; load(save(x)) is bit-exact.

    Checkpoints are a pure function of the parameters and config (wall-clock
    timings live in the train_meta sidecar), so identical runs produce
    identical bytes.
    """
    arrays = {
        "positions": cloud.positions,
        "rotations_raw": cloud.rotations_raw,
        "scales_raw": cloud.scales_raw,
        "opacity_raw": cloud.opacity_raw,
        "sh": cloud.sh,
        "omega": cloud.deform.omega,
        "centers": cloud.deform.centers,
        "widths": cloud.deform.widths,
    }
    header = {
        "n": len(cloud),
        "n_bases": cloud.deform.n_bases,
        "sh_coeffs": cloud.sh.shape[1],
        "basis_kind": cloud.deform.kind.value,
        "iteration": int(iteration),
        "config": _config_echo(cfg),
        "rng_state": rng_state,
        "fields": list(_BLOB_FIELDS),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    blob = b"".join(arrays[name].astype("<f4").tobytes() for name in _BLOB_FIELDS)
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(np.uint32(CKPT_VERSION).tobytes())
        fh.write(np.uint32(len(header_bytes)).tobytes())
        fh.write(header_bytes)
        fh.write(blob)


@dataclass
class Checkpoint:
    cloud: GaussianCloud
    header: dict


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CKPT_MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        version = int(np.frombuffer(fh.read(4), dtype=np.uint32)[0])
        if version != CKPT_VERSION:
            raise CheckpointError(f"{path}: version {version} unsupported (expected {CKPT_VERSION})")
        hlen = int(np.frombuffer(fh.read(4), dtype=np.uint32)[0])
        header = json.loads(fh.read(hlen).decode())
        blob = fh.read()
    n = int(header["n"])
    b = int(header["n_bases"])
    c_sh = int(header["sh_coeffs"])
    shapes = {
        "positions": (n, 3),
        "rotations_raw": (n, 4),
        "scales_raw": (n, 3),
        "opacity_raw": (n,),
        "sh": (n, c_sh, 3),
        "omega": (n, N_CHANNELS, b),
        "centers": (n, N_CHANNELS, b),
        "widths": (n, N_CHANNELS, b),
    }
    expected = 4 * sum(int(np.prod(shapes[name])) for name in _BLOB_FIELDS)
    if len(blob) != expected:
        raise CheckpointError(f"{path}: blob is {len(blob)} bytes, expected {expected}")
    arrays = {}
    offset = 0
    for name in _BLOB_FIELDS:
        count = int(np.prod(shapes[name]))
        arrays[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=offset) \
            .reshape(shapes[name]).astype(np.float64)
        offset += 4 * count
    cloud = GaussianCloud(
        positions=arrays["positions"],
        rotations_raw=arrays["rotations_raw"],
        scales_raw=arrays["scales_raw"],
        opacity_raw=arrays["opacity_raw"],
        sh=arrays["sh"],
        deform=DeformParams(BasisKind(header["basis_kind"]), arrays["omega"],
                            arrays["centers"], arrays["widths"]),
    )
    return Checkpoint(cloud=cloud, header=header)


# ---------------------------------------------------------------- reports

def write_train_meta(out_dir, train_time_sec: float, iterations: int, backend: str) -> None:
    with open(os.path.join(out_dir, "train_meta.txt"), "w") as fh:
        fh.write(f"train_time_sec {train_time_sec!r}\n")
        fh.write(f"iterations {iterations}\n")
        fh.write(f"kernel_backend {backend}\n")


def read_train_meta(ckpt_path) -> dict:
    """Sidecar next to a checkpoint; empty dict when absent."""
    meta_path = os.path.join(os.path.dirname(os.path.abspath(ckpt_path)), "train_meta.txt")
    if not os.path.isfile(meta_path):
        return {}
    out = {}
    with open(meta_path) as fh:
        for line in fh:
            key, _, val = line.strip().partition(" ")
            out[key] = val
    return out


def write_loss_history(path, history) -> None:
    with open(path, "w") as fh:
        fh.write("iter,L_C,L_D,L,N_gaussians\n")
        for it, l_c, l_d, total, n in history:
            fh.write(f"{it},{l_c!r},{l_d!r},{total!r},{n}\n")


def write_metric_report(report, path_prefix) -> None:
    """Flat key-value summary plus a per-frame CSV."""
    with open(path_prefix + "_summary.txt", "w") as fh:
        fh.write(f"psnr_mean {report.psnr_mean!r}\n")
        fh.write(f"ssim_mean {report.ssim_mean!r}\n")
        fh.write(f"fps {report.fps!r}\n")
        fh.write(f"fps_std {report.fps_std!r}\n")
        fh.write(f"train_time_sec {report.train_time_sec!r}\n")
    with open(path_prefix + "_frames.csv", "w") as fh:
        fh.write("frame,psnr,ssim\n")
        for idx, p, s in zip(report.frame_indices, report.psnr_per_frame, report.ssim_per_frame):
            fh.write(f"{idx},{p!r},{s!r}\n")
