"""Shared test utilities: random scenes sized for finite-difference checks."""
import numpy as np

from dynasplat.camera import make_camera
from dynasplat.core import GaussianCloud, logit
from dynasplat.deform import init_deform
from dynasplat.rasterizer import render


def random_cloud(seed, n=6, n_bases=4, depth_gap=0.2, omega_std=0.01,
                 opacity_range=(0.3, 0.8), sh_degree=0):
    """Random cloud with strictly separated depths so splat order is stable
    under finite-difference perturbations (order swaps are the renderer's one
    genuine discontinuity)."""
    rng = np.random.default_rng(seed)
    z = 2.4 + depth_gap * np.arange(n) + rng.uniform(-0.2 * depth_gap, 0.2 * depth_gap, n)
    c_sh = (sh_degree + 1) ** 2
    sh = np.zeros((n, c_sh, 3))
    sh[:, 0, :] = rng.uniform(0.2, 0.9, (n, 3))
    if c_sh > 1:
        sh[:, 1:, :] = rng.normal(0, 0.05, (n, c_sh - 1, 3))
    cloud = GaussianCloud(
        positions=np.column_stack([rng.uniform(-0.4, 0.4, n), rng.uniform(-0.4, 0.4, n), z]),
        rotations_raw=rng.normal(size=(n, 4)),
        scales_raw=np.log(rng.uniform(0.1, 0.3, (n, 3))),
        opacity_raw=logit(rng.uniform(*opacity_range, n)),
        sh=sh,
        deform=init_deform(n, n_bases),
    )
    cloud.deform.omega[:] = rng.normal(0, omega_std, cloud.deform.omega.shape)
    cloud.deform.centers[:] += rng.normal(0, 0.05, cloud.deform.centers.shape)
    cloud.deform.widths[:] = rng.uniform(0.05, 0.3, cloud.deform.widths.shape)
    return cloud, rng


def square_camera(size=16, t=0.5):
    return make_camera(1.25 * size, 1.25 * size, (size - 1) / 2, (size - 1) / 2, size, size, t=t)


def scalar_render_loss(cloud, cam, background, settings, w_color, w_depth):
    out = render(cloud, cam, background, settings)
    return float(np.sum(out.color * w_color) + np.sum(out.depth * w_depth))


def central_diff(f, arr, h):
    """Central finite differences of a scalar function over every entry of a
    parameter array, mutated in place."""
    flat = arr.reshape(-1)
    out = np.zeros_like(flat)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        lp = f()
        flat[k] = orig - h
        lm = f()
        flat[k] = orig
        out[k] = (lp - lm) / (2.0 * h)
    return out.reshape(arr.shape)


def grad_mismatches(analytic, numeric, rel_tol=1e-3, abs_floor=1e-6):
    """Count entries where the gradients disagree beyond rel_tol, ignoring
    differences below the absolute floor."""
    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    bad = (diff > abs_floor) & (diff > rel_tol * denom)
    return int(bad.sum())
