import numpy as np
import pytest

from helpers import random_cloud

from dynasplat import dataio
from dynasplat.core import activate_opacity, logit
from dynasplat.errors import InvalidParameterError, NumericalError
from dynasplat.synthetic import SynthSpec, generate_synthetic
from dynasplat.train import (
    Adam, DensifyStats, TrainConfig, adam_step, cloud_params, color_loss, color_loss_grad,
    densify_and_prune, depth_loss, depth_loss_grad, train,
)


def test_color_loss_identical_images():
    img = np.random.default_rng(0).uniform(0, 1, (6, 6, 3))
    assert color_loss(img, img, np.ones((6, 6), dtype=np.uint8)) == 0.0


def test_color_loss_constant_residual():
    gt = np.zeros((5, 5, 3))
    pred = gt + 0.2
    assert abs(color_loss(pred, gt, np.ones((5, 5), dtype=np.uint8)) - 0.2) < 1e-12


def test_color_loss_masked_half():
    gt = np.zeros((4, 4, 3))
    pred = gt.copy()
    mask = np.ones((4, 4), dtype=np.uint8)
    mask[:2] = 0
    pred[:2] += 0.2  # residual only where masked out
    assert color_loss(pred, gt, mask) == 0.0
    assert color_loss(pred, gt, np.zeros((4, 4), dtype=np.uint8)) == 0.0


def test_color_loss_shape_check():
    with pytest.raises(InvalidParameterError):
        color_loss(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)), np.ones((5, 5)))


def test_depth_loss_values():
    mask = np.ones((1, 1), dtype=np.uint8)
    assert depth_loss(np.full((1, 1), 2.0), np.full((1, 1), 2.0), mask) == 0.0
    val = depth_loss(np.full((1, 1), 2.0), np.full((1, 1), 1.0), mask)
    assert abs(val - 0.5) < 1e-12
    assert depth_loss(np.full((1, 1), 2.0), np.full((1, 1), 1.0), np.zeros((1, 1), dtype=np.uint8)) == 0.0
    # invalid ground truth and vanishing renders are excluded
    assert depth_loss(np.full((1, 1), 2.0), np.zeros((1, 1)), mask) == 0.0
    assert depth_loss(np.zeros((1, 1)), np.full((1, 1), 1.0), mask) == 0.0


def test_losses_invariant_to_masked_out_pixels():
    rng = np.random.default_rng(1)
    gt_c = rng.uniform(0, 1, (6, 6, 3))
    gt_d = rng.uniform(1, 3, (6, 6))
    pred_c = gt_c + rng.normal(0, 0.1, gt_c.shape)
    pred_d = gt_d + rng.normal(0, 0.1, gt_d.shape)
    mask = (rng.uniform(size=(6, 6)) > 0.4).astype(np.uint8)
    base_c = color_loss(pred_c, gt_c, mask)
    base_d = depth_loss(pred_d, gt_d, mask)
    pred_c2 = pred_c.copy()
    pred_d2 = pred_d.copy()
    pred_c2[mask == 0] = 77.0
    pred_d2[mask == 0] = 77.0
    assert color_loss(pred_c2, gt_c, mask) == base_c
    assert depth_loss(pred_d2, gt_d, mask) == base_d


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    gt_c = rng.uniform(0.2, 0.8, (5, 5, 3))
    gt_d = rng.uniform(1, 3, (5, 5))
    pred_c = gt_c + rng.normal(0, 0.2, gt_c.shape)
    pred_d = gt_d + rng.normal(0, 0.2, gt_d.shape)
    mask = (rng.uniform(size=(5, 5)) > 0.3).astype(np.uint8)
    _, g_c = color_loss_grad(pred_c, gt_c, mask)
    _, g_d = depth_loss_grad(pred_d, gt_d, mask)
    h = 1e-6
    for _ in range(20):
        i, j, k = rng.integers(5), rng.integers(5), rng.integers(3)
        pred_c[i, j, k] += h
        lp = color_loss(pred_c, gt_c, mask)
        pred_c[i, j, k] -= 2 * h
        lm = color_loss(pred_c, gt_c, mask)
        pred_c[i, j, k] += h
        assert abs((lp - lm) / (2 * h) - g_c[i, j, k]) < 1e-9
        pred_d[i, j] += h
        lp = depth_loss(pred_d, gt_d, mask)
        pred_d[i, j] -= 2 * h
        lm = depth_loss(pred_d, gt_d, mask)
        pred_d[i, j] += h
        assert abs((lp - lm) / (2 * h) - g_d[i, j]) < 1e-9


def test_adam_zero_gradient_keeps_params():
    p = np.array([1.0, -2.0, 3.0])
    state = {"m": np.zeros(3), "v": np.zeros(3), "t": 0}
    for _ in range(5):
        adam_step(p, np.zeros(3), state, lr=0.1)
    assert np.array_equal(p, [1.0, -2.0, 3.0])


def test_adam_first_step_closed_form():
    p = np.array([0.0])
    state = {"m": np.zeros(1), "v": np.zeros(1), "t": 0}
    adam_step(p, np.array([1.0]), state, lr=0.01)
    assert abs(p[0] + 0.01) < 1e-12


def test_adam_quadratic_bowl():
    # textbook recurrence as the oracle: both must land near the optimum
    x = np.array([1.0])
    state = {"m": np.zeros(1), "v": np.zeros(1), "t": 0}
    m = v = 0.0
    x_ref = 1.0
    beta1, beta2, eps, lr = 0.9, 0.999, 1e-15, 0.1
    for t in range(1, 201):
        adam_step(x, 2.0 * x, state, lr=lr)
        g = 2.0 * x_ref
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        x_ref -= lr * (m / (1 - beta1**t)) / (np.sqrt(v / (1 - beta2**t)) + eps)
    assert abs(x[0]) < 1e-2
    assert abs(x[0] - x_ref) < 1e-12


def test_adam_rejects_non_finite_gradients():
    cloud, _ = random_cloud(0, n=3)
    adam = Adam(cloud_params(cloud))
    grads = {k: np.zeros_like(v) for k, v in cloud_params(cloud).items()}
    grads["positions"][0, 0] = np.nan
    with pytest.raises(NumericalError, match="positions"):
        adam.step(grads, {k: 1e-3 for k in grads})


def make_densify_cfg(**kw):
    defaults = dict(iterations=1000, densify_freeze_iters=600, densify_interval=100,
                    grad_densify_threshold=2e-4, opacity_prune_threshold=0.005)
    defaults.update(kw)
    return TrainConfig(**defaults)


def test_densify_frozen_before_horizon():
    cloud, _ = random_cloud(1, n=5)
    stats = DensifyStats.zeros(5)
    stats.grad_sum[:] = 10.0
    stats.seen[:] = 1.0
    cfg = make_densify_cfg()
    rng = np.random.default_rng(0)
    out, _ = densify_and_prune(cloud, stats, 100, cfg, extent=1.0, rng=rng)
    assert out is cloud


def test_densify_noop_without_triggers():
    cloud, _ = random_cloud(2, n=5, opacity_range=(0.5, 0.9))
    stats = DensifyStats.zeros(5)
    cfg = make_densify_cfg()
    rng = np.random.default_rng(0)
    out, _ = densify_and_prune(cloud, stats, 600, cfg, extent=1.0, rng=rng)
    assert len(out) == 5
    assert np.array_equal(out.positions, cloud.positions)


def test_densify_prunes_transparent_gaussian():
    cloud, _ = random_cloud(3, n=5, opacity_range=(0.5, 0.9))
    cloud.opacity_raw[2] = float(logit(0.001))
    stats = DensifyStats.zeros(5)
    cfg = make_densify_cfg()
    rng = np.random.default_rng(0)
    out, _ = densify_and_prune(cloud, stats, 600, cfg, extent=1.0, rng=rng)
    assert len(out) == 4
    assert np.all(activate_opacity(out.opacity_raw) >= cfg.opacity_prune_threshold)


def test_densify_clone_and_split_inherit_deformation():
    cloud, _ = random_cloud(4, n=4, opacity_range=(0.5, 0.9))
    cloud.deform.omega[:] = np.random.default_rng(0).normal(0, 0.1, cloud.deform.omega.shape)
    extent = 10.0
    # gaussian 0 small (clone), gaussian 1 large (split)
    cloud.scales_raw[0] = np.log(0.01)
    cloud.scales_raw[1] = np.log(0.5)
    stats = DensifyStats.zeros(4)
    stats.grad_sum[[0, 1]] = 1.0
    stats.seen[:] = 1.0
    cfg = make_densify_cfg()
    adam = Adam(cloud_params(cloud))
    adam.state["positions"]["m"][:] = 7.0  # recognizable moment values
    rng = np.random.default_rng(0)
    out, _ = densify_and_prune(cloud, stats, 600, cfg, extent=extent, rng=rng, adam=adam)
    # 4 - 1 split parent + 1 clone + 2 children
    assert len(out) == 6
    kept = [0, 2, 3]  # order: kept block first
    assert np.allclose(out.deform.omega[: len(kept)], cloud.deform.omega[kept])
    # clone of gaussian 0 carries its curves
    assert np.allclose(out.deform.omega[3], cloud.deform.omega[0])
    # both split children carry gaussian 1 curves, scales divided by 1.6
    assert np.allclose(out.deform.omega[4], cloud.deform.omega[1])
    assert np.allclose(out.deform.omega[5], cloud.deform.omega[1])
    assert np.allclose(np.exp(out.scales_raw[4]), np.exp(cloud.scales_raw[1]) / 1.6)
    # optimizer state: survivors keep moments, children start fresh
    assert np.all(adam.state["positions"]["m"][:3] == 7.0)
    assert np.all(adam.state["positions"]["m"][3:] == 0.0)
    assert adam.params["positions"] is out.positions


def small_dataset(seed=5, n_frames=16, size=24, n_gaussians=40):
    spec = SynthSpec(n_gaussians=n_gaussians, n_frames=n_frames, width=size, height=size)
    _, frames, cams = generate_synthetic(spec, seed)
    return dataio.dataset_from_frames(frames, cams)


def test_zero_iterations_returns_initialized_cloud():
    ds = small_dataset()
    cfg = TrainConfig(iterations=0, densify_freeze_iters=0)
    res = train(ds, cfg)
    assert res.history == []
    assert np.all(res.cloud.deform.omega == 0.0)


def test_train_requires_frames():
    ds = small_dataset()
    ds.train_indices = np.array([], dtype=int)
    with pytest.raises(InvalidParameterError):
        train(ds, TrainConfig(iterations=10, densify_freeze_iters=0))


def test_overfit_static_single_gaussian():
    # static scene, one ground-truth gaussian: the color loss collapses
    spec = SynthSpec(n_gaussians=1, n_frames=4, width=16, height=16, motion="none",
                     base_scale=0.5, amplitude=0.0)
    _, frames, cams = generate_synthetic(spec, 3)
    ds = dataio.dataset_from_frames(frames, cams)
    cfg = TrainConfig(iterations=500, densify_freeze_iters=500, seed=0)
    res = train(ds, cfg)
    from dynasplat.rasterizer import render
    from dynasplat.train import color_loss as closs
    out = render(res.cloud, cams[0])
    assert closs(out.color, frames[0].color, frames[0].mask) < 0.01


def test_training_deterministic_given_seed():
    ds = small_dataset(seed=6, n_frames=9, size=16, n_gaussians=20)
    cfg = TrainConfig(iterations=40, densify_freeze_iters=20, densify_interval=10, seed=123)
    r1 = train(ds, cfg)
    r2 = train(ds, cfg)
    assert r1.history == r2.history
    for name, arr in cloud_params(r1.cloud).items():
        assert np.array_equal(arr, cloud_params(r2.cloud)[name]), name


def test_point_count_constant_during_freeze():
    ds = small_dataset(seed=7, n_frames=9, size=16, n_gaussians=20)
    cfg = TrainConfig(iterations=30, densify_freeze_iters=25, densify_interval=5, seed=1)
    res = train(ds, cfg)
    counts = [row[4] for row in res.history]
    assert len(set(counts[:24])) == 1
