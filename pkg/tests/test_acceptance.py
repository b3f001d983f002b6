"""Acceptance suite: one test per criterion, each printing a PASS line with
the measured values (run with -s to see them live).

The reconstruction criteria (4-6) train real models and take a few minutes
each on the compiled kernels; everything else is fast. Gradient checks run
with the gating thresholds disabled (RasterSettings.dense) because the
production skip/stop gates are step functions that corrupt central
differences without contributing gradient terms of their own; the gates are
value-tested separately (criterion 2 runs with production settings).
"""

import time

import numpy as np


from helpers import central_diff, random_cloud, scalar_render_loss, square_camera

from dynasplat import dataio
from dynasplat.camera import project_points

from dynasplat.deform import BasisKind, basis_eval, fourier_poly_basis, gaussian_basis_with_partials, init_deform
from dynasplat.metrics import evaluate_dataset
from dynasplat.rasterizer import RasterSettings, render, render_backward
from dynasplat.seeding import RGBDFrame, backproject, build_canonical_cloud
from dynasplat.synthetic import SynthSpec, generate_synthetic
from dynasplat.train import TrainConfig, adam_step, train


def _report(name: str, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{name}: {detail}"


# ------------------------------------------------------------- criterion 1

GRAD_STEPS = {
    "positions": 1e-4,
    "rotations_raw": 1e-3,
    "scales_raw": 3e-4,
    "opacity_raw": 1e-3,
    "sh": 1e-3,
    "omega": 3e-4,
    "centers": 1e-4,
    "widths": 1e-4,
}


def _grad_scene(seed, n, n_bases):
    # reject draws whose deformed depths come too close: splat order swaps
    # are the renderer's one genuine discontinuity and would poison the
    # finite-difference oracle
    from dynasplat.deform import evaluate_curves

    while True:
        cloud, rng = random_cloud(seed, n=n, n_bases=n_bases)
        t = float(rng.uniform(0, 1))
        offs = evaluate_curves(cloud.deform, t)
        z = np.sort(cloud.positions[:, 2] + offs[:, 2])
        if np.diff(z).min() > 0.05:
            return cloud, rng, t
        seed += 1000


def test_criterion_1_gradient_correctness():
    t_start = time.perf_counter()
    settings = RasterSettings.dense()
    n_scenes = 0
    worst = 0.0
    total_bad = 0
    for seed in range(21):
        n_bases = (1, 4, 17)[seed % 3]
        n = 4 + seed % 7  # 4..10 Gaussians
        cloud, rng, t = _grad_scene(seed, n, n_bases)
        cam = square_camera(16, t=t)
        bg = rng.uniform(0, 1, 3)
        out = render(cloud, cam, bg, settings)
        w_color = rng.normal(size=(16, 16, 3))
        w_depth = rng.normal(size=(16, 16)) * (out.accum_alpha > 0.05)
        grads = render_backward(cloud, cam, w_color, w_depth, bg, settings)

        def loss():
            return scalar_render_loss(cloud, cam, bg, settings, w_color, w_depth)

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
        for name, arr in arrays.items():
            numeric = central_diff(loss, arr, GRAD_STEPS[name])
            analytic = getattr(grads, name)
            diff = np.abs(analytic - numeric)
            denom = np.maximum(np.abs(analytic), np.abs(numeric))
            bad = (diff > 1e-6) & (diff > 1e-3 * denom)
            total_bad += int(bad.sum())
            meaningful = diff > 1e-6
            if np.any(meaningful):
                worst = max(worst, float((diff[meaningful] / np.maximum(denom[meaningful], 1e-12)).max()))
        n_scenes += 1
    elapsed = time.perf_counter() - t_start
    _report("criterion-1 gradient correctness",
            total_bad == 0 and n_scenes >= 20 and elapsed < 120.0,
            f"{n_scenes} scenes, 8 parameter classes, worst rel err {worst:.2e}, {elapsed:.1f}s")


# ------------------------------------------------------------- criterion 2

def test_criterion_2_blending_conservation():
    rng = np.random.default_rng(0)
    worst = 0.0
    n_pixels = 0
    for seed in range(8):
        cloud, _ = random_cloud(seed, n=14, opacity_range=(0.05, 0.97))
        cloud.sh[:] = 1.0  # unit colors: the channel sum is the weight total
        cam = square_camera(16, t=float(rng.uniform(0, 1)))
        out = render(cloud, cam)  # production gates
        total = out.color[:, :, 0] + (1.0 - out.accum_alpha)
        ys = rng.integers(0, 16, 125)
        xs = rng.integers(0, 16, 125)
        worst = max(worst, float(np.abs(total[ys, xs] - 1.0).max()))
        n_pixels += 125
    _report("criterion-2 blending conservation", worst < 1e-6 and n_pixels >= 1000,
            f"{n_pixels} pixels, worst |weights + T - 1| = {worst:.2e}")


# ------------------------------------------------------------- criterion 3

def test_criterion_3_fdm_expressiveness():
    t_start = time.perf_counter()
    ts = np.linspace(0, 1, 100)
    target = np.sin(2 * np.pi * ts) + 0.5 * np.sin(6 * np.pi * ts)

    # learnable-Gaussian channel fit by the package's Adam
    n_bases = 17
    params = init_deform(1, n_bases)
    omega = params.omega[0, 0].copy()
    centers = params.centers[0, 0].copy()
    widths = params.widths[0, 0].copy()
    states = {k: {"m": np.zeros(n_bases), "v": np.zeros(n_bases), "t": 0} for k in ("o", "c", "w")}
    for _ in range(2000):
        bvals, db_dc, db_dw = gaussian_basis_with_partials(ts[:, None], centers[None, :], widths[None, :])
        resid = bvals @ omega - target
        g_pred = 2.0 * resid / len(ts)
        adam_step(omega, bvals.T @ g_pred, states["o"], lr=0.02)
        adam_step(centers, (omega[None, :] * db_dc).T @ g_pred, states["c"], lr=0.02)
        adam_step(widths, (omega[None, :] * db_dw).T @ g_pred, states["w"], lr=0.02)
    pred = basis_eval(ts[:, None], centers[None, :], widths[None, :]) @ omega
    rmse_gauss = float(np.sqrt(np.mean((pred - target) ** 2)))

    # fixed Fourier+polynomial baseline: weights are the linear solution;
    # the oracle builds its design matrix from explicit trig/monomial forms
    design = fourier_poly_basis(ts, n_bases)
    w_impl, *_ = np.linalg.lstsq(design, target, rcond=None)
    rmse_baseline = float(np.sqrt(np.mean((design @ w_impl - target) ** 2)))
    oracle = np.empty((100, n_bases))
    for k in range(1, 9):
        oracle[:, 2 * (k - 1)] = np.sin(2 * np.pi * k * ts)
        oracle[:, 2 * k - 1] = np.cos(2 * np.pi * k * ts)
    oracle[:, 16] = 1.0
    w_oracle, *_ = np.linalg.lstsq(oracle, target, rcond=None)
    rmse_oracle = float(np.sqrt(np.mean((oracle @ w_oracle - target) ** 2)))
    elapsed = time.perf_counter() - t_start
    # the target lies exactly in the Fourier span, so both residuals sit at
    # machine noise; the tiny floor keeps the 2x comparison meaningful
    baseline_ok = rmse_baseline <= max(2.0 * rmse_oracle, 1e-9)
    _report("criterion-3 deformation-curve expressiveness",
            rmse_gauss < 0.02 and baseline_ok and elapsed < 30.0,
            f"gaussian-basis Adam rmse {rmse_gauss:.4f}, baseline rmse {rmse_baseline:.2e} "
            f"vs oracle {rmse_oracle:.2e}, {elapsed:.1f}s")


# ------------------------------------------------------------- criterion 4

def test_criterion_4_end_to_end_reconstruction():
    t_start = time.perf_counter()
    spec = SynthSpec(n_gaussians=300, n_frames=64, width=64, height=64)
    _, frames, cams = generate_synthetic(spec, 42)
    ds = dataio.dataset_from_frames(frames, cams)
    assert len(ds.train_indices) == 56 and len(ds.test_indices) == 8
    cfg = TrainConfig(seed=0)  # defaults: 3000 iterations, lr 1.6e-3, B=17, freeze 600
    assert cfg.iterations == 3000 and cfg.lr == 1.6e-3 and cfg.n_bases == 17 \
        and cfg.densify_freeze_iters == 600
    result = train(ds, cfg)
    report = evaluate_dataset(result.cloud, ds)
    elapsed = time.perf_counter() - t_start
    # smoothed training loss must decrease over the run
    losses = [row[3] for row in result.history]
    smooth_300 = float(np.mean(losses[200:400]))
    smooth_3000 = float(np.mean(losses[-200:]))
    _report("criterion-4 end-to-end synthetic reconstruction",
            report.psnr_mean >= 30.0 and report.ssim_mean >= 0.90
            and smooth_3000 < smooth_300 and elapsed < 1200.0,
            f"test PSNR {report.psnr_mean:.2f} dB, SSIM {report.ssim_mean:.4f}, "
            f"loss {smooth_300:.4f}->{smooth_3000:.4f}, {elapsed:.0f}s, N={len(result.cloud)}")


# ------------------------------------------------------------- criterion 5

def _projected_coverage(cloud, cam, region_mask):
    uv, z = project_points(cloud.positions, cam)
    px = np.round(uv).astype(int)
    h, w = region_mask.shape
    ok = (z > 0) & (px[:, 0] >= 0) & (px[:, 0] < w) & (px[:, 1] >= 0) & (px[:, 1] < h)
    hits = np.zeros((h, w), dtype=bool)
    hits[px[ok, 1], px[ok, 0]] = True
    return float(hits[region_mask].mean())


def test_criterion_5_point_fusion_ablation():
    spec = SynthSpec(n_gaussians=150, n_frames=32, width=32, height=32,
                     occluder=True, occluder_frac=0.2)
    scene, frames, cams = generate_synthetic(spec, 11)
    ds = dataio.dataset_from_frames(frames, cams)
    x0, x1, y0, y1 = scene.occluder_rect(0)
    occluded = np.zeros((32, 32), dtype=bool)
    occluded[y0 : y1 + 1, x0 : x1 + 1] = True

    seed_fused = build_canonical_cloud(frames, cams, tau=0.1, use_point_fusion=True)
    seed_plain = build_canonical_cloud(frames, cams, use_point_fusion=False)
    cov_fused = _projected_coverage(seed_fused, cams[0], occluded)
    cov_plain = _projected_coverage(seed_plain, cams[0], occluded)

    common = dict(iterations=1200, densify_freeze_iters=600, seed=0)
    psnr_fused = evaluate_dataset(
        train(ds, TrainConfig(use_point_fusion=True, **common)).cloud, ds).psnr_mean
    psnr_plain = evaluate_dataset(
        train(ds, TrainConfig(use_point_fusion=False, **common)).cloud, ds).psnr_mean
    _report("criterion-5 point-fusion ablation direction",
            cov_fused >= 0.9 and cov_plain < 0.9 and psnr_fused >= psnr_plain,
            f"occluded-region seed coverage {cov_fused:.2f} vs {cov_plain:.2f}, "
            f"test PSNR {psnr_fused:.2f} vs {psnr_plain:.2f} dB")


# ------------------------------------------------------------- criterion 6

def test_criterion_6_basis_ablation():
    spec = SynthSpec(n_gaussians=150, n_frames=32, width=32, height=32,
                     motion="poke", amplitude=0.25, poke_window=0.04, poke_radius=0.6)
    scene, frames, cams = generate_synthetic(spec, 13)
    # the poke really is confined to t in [0.4, 0.6]
    for i, cam in enumerate(cams):
        if cam.t <= 0.35 or cam.t >= 0.65:
            assert np.abs(frames[i].color - frames[0].color).max() < 0.05
    ds = dataio.dataset_from_frames(frames, cams)
    common = dict(iterations=1200, densify_freeze_iters=600, seed=0)
    psnr_gauss = evaluate_dataset(
        train(ds, TrainConfig(basis=BasisKind.GAUSSIAN, **common)).cloud, ds).psnr_mean
    psnr_fourier = evaluate_dataset(
        train(ds, TrainConfig(basis=BasisKind.FOURIER_POLY, **common)).cloud, ds).psnr_mean
    _report("criterion-6 basis ablation direction",
            psnr_gauss >= psnr_fourier,
            f"localized-motion test PSNR: gaussian {psnr_gauss:.2f} vs "
            f"fourier-poly {psnr_fourier:.2f} dB")


# ------------------------------------------------------------- criterion 7

def test_criterion_7_training_determinism(tmp_path):
    spec = SynthSpec(n_gaussians=40, n_frames=16, width=24, height=24)
    _, frames, cams = generate_synthetic(spec, 21)
    ds = dataio.dataset_from_frames(frames, cams)
    cfg = TrainConfig(iterations=200, densify_freeze_iters=100, densify_interval=50,
                      checkpoint_interval=100, seed=7)
    out_a = tmp_path / "run_a"
    out_b = tmp_path / "run_b"
    train(ds, cfg, out_dir=str(out_a))
    train(ds, cfg, out_dir=str(out_b))
    files = ["ckpt_final.dgs", "ckpt_000100.dgs", "loss_history.csv"]
    identical = all((out_a / f).read_bytes() == (out_b / f).read_bytes() for f in files)
    _report("criterion-7 training determinism", identical,
            f"{files} byte-identical across two seeded runs")


# ------------------------------------------------------------- criterion 8

def test_criterion_8_round_trips(tmp_path):
    rng = np.random.default_rng(3)
    h, w = 100, 100
    theta = 0.25
    rot = np.array([
        [np.cos(theta), 0, np.sin(theta)],
        [0, 1, 0],
        [-np.sin(theta), 0, np.cos(theta)],
    ])
    T = np.eye(4)
    T[:3, :3] = rot
    T[:3, 3] = [0.3, -0.2, 0.5]
    from dynasplat.camera import make_camera

    cam = make_camera(120.0, 115.0, (w - 1) / 2, (h - 1) / 2, w, h, T=T)
    depth = rng.uniform(0.5, 5.0, (h, w))
    frame = RGBDFrame(color=rng.uniform(0, 1, (h, w, 3)), depth=depth,
                      mask=np.ones((h, w), dtype=np.uint8), t=0.0)
    seed = backproject(frame, cam)
    assert len(seed) == 10000
    uv, _ = project_points(seed.points, cam)
    vs, us = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    expect = np.stack([us.reshape(-1), vs.reshape(-1)], axis=1).astype(float)
    px_err = float(np.abs(uv - expect).max())

    cloud, _ = random_cloud(5, n=9, n_bases=17)
    path_a = tmp_path / "a.dgs"
    path_b = tmp_path / "b.dgs"
    dataio.save_checkpoint(cloud, TrainConfig(), 123, path_a, rng_state={"s": 1})
    loaded = dataio.load_checkpoint(path_a)
    dataio.save_checkpoint(loaded.cloud, TrainConfig(), 123, path_b, rng_state={"s": 1})
    ckpt_ok = path_a.read_bytes() == path_b.read_bytes()
    f32 = cloud.positions.astype(np.float32).astype(np.float64)
    ckpt_ok &= np.array_equal(loaded.cloud.positions, f32)
    _report("criterion-8 round trips",
            px_err < 1e-4 and ckpt_ok,
            f"backproject/project error {px_err:.2e} px over 10^4 pixels; "
            f"checkpoint save/load bit-exact")
