"""Reconstruction quality metrics and a rendering throughput benchmark."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ._backend import available_backends
from .errors import InvalidParameterError
from .rasterizer import RasterSettings, render

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def psnr(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None) -> float:
    """10 log10(1 / MSE) over valid pixels at peak value 1, capped at 100 dB."""
    if pred.shape != gt.shape:
        raise InvalidParameterError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if mask is not None:
        if mask.shape != pred.shape[:2]:
            raise InvalidParameterError(f"mask shape {mask.shape} does not match image {pred.shape}")
        valid = mask == 1
        if not np.any(valid):
            raise InvalidParameterError("no valid pixels under the mask")
        diff = (pred - gt)[valid]
    else:
        diff = pred - gt
    mse = float(np.mean(diff**2))
    if mse <= 10 ** (-PSNR_CAP_DB / 10.0):
        return PSNR_CAP_DB
    return float(10.0 * np.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def _filter2d_valid(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Separable 'valid' convolution with a 1D window along both axes."""
    k = len(window)
    h, w = img.shape
    rows = np.zeros((h, w - k + 1))
    for j in range(k):
        rows += window[j] * img[:, j : j + w - k + 1]
    out = np.zeros((h - k + 1, w - k + 1))
    for j in range(k):
        out += window[j] * rows[j : j + h - k + 1]
    return out


def ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean local structural similarity, Gaussian 11x11 window at unit
    dynamic range; channels are averaged."""
    if pred.shape != gt.shape:
        raise InvalidParameterError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if pred.ndim == 2:
        pred = pred[:, :, None]
        gt = gt[:, :, None]
    h, w = pred.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise InvalidParameterError(f"image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    win = gaussian_window()
    vals = []
    for c in range(pred.shape[2]):
        a = pred[:, :, c].astype(np.float64)
        b = gt[:, :, c].astype(np.float64)
        mu_a = _filter2d_valid(a, win)
        mu_b = _filter2d_valid(b, win)
        var_a = _filter2d_valid(a * a, win) - mu_a * mu_a
        var_b = _filter2d_valid(b * b, win) - mu_b * mu_b
        cov = _filter2d_valid(a * b, win) - mu_a * mu_b
        num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
        den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


@dataclass
class MetricReport:
    psnr_per_frame: list = field(default_factory=list)
    ssim_per_frame: list = field(default_factory=list)
    frame_indices: list = field(default_factory=list)
    fps: float = 0.0
    fps_std: float = 0.0
    train_time_sec: float = 0.0

    @property
    def psnr_mean(self) -> float:
        return float(np.mean(self.psnr_per_frame)) if self.psnr_per_frame else 0.0

    @property
    def ssim_mean(self) -> float:
        return float(np.mean(self.ssim_per_frame)) if self.ssim_per_frame else 0.0


def evaluate_dataset(cloud, dataset, split: str = "test", background=None,
                     settings: RasterSettings | None = None) -> MetricReport:
    """Render the chosen split at its timestamps and score against ground truth."""
    indices = dataset.test_indices if split == "test" else dataset.train_indices
    if len(indices) == 0:
        raise InvalidParameterError(f"{split} split is empty")
    report = MetricReport()
    for i in indices:
        frame, cam = dataset.frames[i], dataset.cams[i]
        out = render(cloud, cam, background, settings)
        report.frame_indices.append(int(i))
        report.psnr_per_frame.append(psnr(out.color, frame.color, frame.mask))
        report.ssim_per_frame.append(ssim(out.color, frame.color))
    return report


@dataclass
class BenchResult:
    fps: float
    fps_std: float
    backend: str
    per_backend: dict = field(default_factory=dict)  # backend -> (fps, std)


def bench_render(cloud, cams, repetitions: int, background=None) -> BenchResult:
    """Frames per second over full passes of the camera list, one warm-up pass
    excluded, for every available kernel backend. Informational only."""
    if repetitions <= 0:
        raise InvalidParameterError(f"repetitions must be positive, got {repetitions}")
    per_backend = {}
    for name in available_backends():
        settings = RasterSettings(backend=name)
        for cam in cams:  # warm-up
            render(cloud, cam, background, settings)
        fps_runs = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            for cam in cams:
                render(cloud, cam, background, settings)
            dt = time.perf_counter() - t0
            fps_runs.append(len(cams) / dt)
        per_backend[name] = (float(np.mean(fps_runs)), float(np.std(fps_runs)))
    active = "compiled" if "compiled" in per_backend else "python"
    return BenchResult(fps=per_backend[active][0], fps_std=per_backend[active][1],
                       backend=active, per_backend=per_backend)
