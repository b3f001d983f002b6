"""Joint optimization of canonical Gaussians and deformation curves.

Loss is masked L1 on color plus masked L1 on inverse depth, optimized with
Adam; the point count is frozen for an initial span of iterations, after
which high-gradient Gaussians are cloned or split and transparent ones
pruned.
"""
from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import dataio
from ._backend import active_backend
from .core import GaussianCloud, activate_opacity, activate_scales, quats_to_rotations
from .deform import BasisKind, DeformParams
from .errors import InvalidParameterError, NumericalError
from .rasterizer import RasterSettings, backward_from_context, render_forward
from .seeding import build_canonical_cloud, scene_extent

DEPTH_EPS = 1e-4  # rendered inverse depth is undefined below this

# Per-group multipliers on the base learning rate; the position rate is
# additionally scaled by the scene extent and decays exponentially.
DEFAULT_LR_MULT = {
    "positions": 0.1,
    "rotations_raw": 0.625,
    "scales_raw": 3.125,
    "opacity_raw": 31.25,
    "sh": 1.5625,
    "omega": 1.0,
    "centers": 1.0,
    "widths": 1.0,
}

PARAM_GROUPS = tuple(DEFAULT_LR_MULT)


@dataclass
class TrainConfig:
    iterations: int = 3000
    lr: float = 1.6e-3
    densify_freeze_iters: int = 600
    densify_interval: int = 100
    grad_densify_threshold: float = 2e-4
    opacity_prune_threshold: float = 0.005
    seed: int = 0
    n_bases: int = 17
    tau: float = 0.1
    basis: BasisKind = BasisKind.GAUSSIAN
    use_point_fusion: bool = True
    loss_weight_color: float = 1.0
    loss_weight_depth: float = 1.0
    sh_degree: int = 0
    percent_dense: float = 0.01
    lr_final_ratio: float = 0.01
    lr_mult: dict = field(default_factory=lambda: dict(DEFAULT_LR_MULT))
    checkpoint_interval: int = 1000
    background: tuple = (0.0, 0.0, 0.0)

    def validate(self) -> None:
        # iterations == 0 is tolerated and returns the initialized cloud
        if self.iterations < 0:
            raise InvalidParameterError("iterations must be non-negative")
        if self.iterations > 0 and self.densify_freeze_iters > self.iterations:
            raise InvalidParameterError("densify_freeze_iters exceeds iterations")


@dataclass
class LossReport:
    color_loss: float
    depth_loss: float
    total: float
    valid_pixels: int


def color_loss(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> float:
    loss, _ = color_loss_grad(pred, gt, mask)
    return loss


def color_loss_grad(pred, gt, mask):
    """Masked mean absolute color error and its gradient image."""
    if pred.shape != gt.shape or mask.shape != pred.shape[:2]:
        raise InvalidParameterError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}, mask {mask.shape}")
    valid = mask == 1
    n = int(valid.sum())
    grad = np.zeros_like(pred)
    if n == 0:
        return 0.0, grad
    resid = pred - gt
    loss = float(np.abs(resid[valid]).sum() / (3 * n))
    grad[valid] = np.sign(resid[valid]) / (3 * n)
    return loss, grad


def depth_loss(pred, gt, mask, eps: float = DEPTH_EPS) -> float:
    loss, _ = depth_loss_grad(pred, gt, mask, eps)
    return loss


def depth_loss_grad(pred, gt, mask, eps: float = DEPTH_EPS):
    """Masked mean absolute inverse-depth error and its gradient image.

    Pixels with invalid ground truth (gt <= 0) or vanishing rendered depth
    (pred <= eps) are excluded; inverse depth is undefined there.
    """
    if pred.shape != gt.shape or mask.shape != pred.shape:
        raise InvalidParameterError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}, mask {mask.shape}")
    valid = (mask == 1) & (gt > 0) & (pred > eps)
    n = int(valid.sum())
    grad = np.zeros_like(pred)
    if n == 0:
        return 0.0, grad
    inv_resid = 1.0 / pred[valid] - 1.0 / gt[valid]
    loss = float(np.abs(inv_resid).sum() / n)
    grad[valid] = -np.sign(inv_resid) / (pred[valid] ** 2 * n)
    return loss, grad


def adam_step(param, grad, state, lr, beta1=0.9, beta2=0.999, eps=1e-15):
    """One bias-corrected Adam update, in place. state holds m, v, t."""
    state["t"] += 1
    t = state["t"]
    state["m"] *= beta1
    state["m"] += (1.0 - beta1) * grad
    state["v"] *= beta2
    state["v"] += (1.0 - beta2) * grad * grad
    m_hat = state["m"] / (1.0 - beta1**t)
    v_hat = state["v"] / (1.0 - beta2**t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return param


class Adam:
    """Adam over named parameter groups with per-group learning rates."""

    def __init__(self, params: dict, beta1=0.9, beta2=0.999, eps=1e-15):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = {k: {"m": np.zeros_like(v), "v": np.zeros_like(v), "t": 0} for k, v in params.items()}

    def step(self, grads: dict, lrs: dict) -> None:
        for name, param in self.params.items():
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient in parameter group '{name}'")
            adam_step(param, g, self.state[name], lrs[name], self.beta1, self.beta2, self.eps)

    def resize(self, name: str, keep: np.ndarray, n_new: int, new_param: np.ndarray) -> None:
        """Carry optimizer state through pruning/densification: survivors keep
        their moments, new Gaussians start at zero."""
        st = self.state[name]
        for key in ("m", "v"):
            old = st[key][keep]
            st[key] = np.concatenate([old, np.zeros((n_new,) + old.shape[1:])], axis=0)
        self.params[name] = new_param


def position_lr(cfg: TrainConfig, extent: float, iteration: int) -> float:
    """Exponential decay from lr*mult*extent to lr_final_ratio of that."""
    frac = min(max(iteration / max(cfg.iterations, 1), 0.0), 1.0)
    base = cfg.lr * cfg.lr_mult["positions"] * extent
    return base * (cfg.lr_final_ratio**frac)


def learning_rates(cfg: TrainConfig, extent: float, iteration: int) -> dict:
    lrs = {name: cfg.lr * mult for name, mult in cfg.lr_mult.items()}
    lrs["positions"] = position_lr(cfg, extent, iteration)
    return lrs


def cloud_params(cloud: GaussianCloud) -> dict:
    return {
        "positions": cloud.positions,
        "rotations_raw": cloud.rotations_raw,
        "scales_raw": cloud.scales_raw,
        "opacity_raw": cloud.opacity_raw,
        "sh": cloud.sh,
        "omega": cloud.deform.omega,
        "centers": cloud.deform.centers,
        "widths": cloud.deform.widths,
    }


def _cloud_from_params(params: dict, kind: BasisKind) -> GaussianCloud:
    return GaussianCloud(
        positions=params["positions"],
        rotations_raw=params["rotations_raw"],
        scales_raw=params["scales_raw"],
        opacity_raw=params["opacity_raw"],
        sh=params["sh"],
        deform=DeformParams(kind, params["omega"], params["centers"], params["widths"]),
    )


@dataclass
class DensifyStats:
    grad_sum: np.ndarray
    seen: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "DensifyStats":
        return cls(grad_sum=np.zeros(n), seen=np.zeros(n))

    def update(self, screen_grad_norm, visible) -> None:
        self.grad_sum += screen_grad_norm
        self.seen += visible


def densify_and_prune(cloud: GaussianCloud, stats: DensifyStats, iteration: int,
                      cfg: TrainConfig, extent: float, rng: np.random.Generator,
                      adam: Adam | None = None):
    """Clone small / split large high-gradient Gaussians, prune transparent
    ones. No-op before the freeze horizon or off the densify cadence.

    Children copy the parent's deformation parameters so learned motion
    survives densification. Returns (cloud, stats); arrays are replaced, not
    mutated, and the Adam state is resized alongside when provided.
    """
    n = len(cloud)
    if iteration < cfg.densify_freeze_iters or iteration % cfg.densify_interval != 0 or n == 0:
        return cloud, stats
    avg_grad = stats.grad_sum / np.maximum(stats.seen, 1)
    scales = activate_scales(cloud.scales_raw)
    max_scale = scales.max(axis=1)
    high_grad = avg_grad > cfg.grad_densify_threshold
    small = max_scale <= cfg.percent_dense * extent
    clone_mask = high_grad & small
    split_mask = high_grad & ~small

    params = cloud_params(cloud)

    def sample_offsets(mask):
        k = int(mask.sum())
        local = rng.standard_normal((k, 3)) * scales[mask]
        rot = quats_to_rotations(cloud.rotations_raw[mask])
        return np.einsum("nij,nj->ni", rot, local)

    # clones keep their size and shift by one sampled offset
    clone_new = {name: params[name][clone_mask].copy() for name in params}
    if clone_mask.any():
        clone_new["positions"] = clone_new["positions"] + sample_offsets(clone_mask)
    # splits: parent is removed, two children sampled inside it, scales / 1.6
    split_children = []
    for _ in range(2):
        child = {name: params[name][split_mask].copy() for name in params}
        if split_mask.any():
            child["positions"] = child["positions"] + sample_offsets(split_mask)
            child["scales_raw"] = child["scales_raw"] - np.log(1.6)
        split_children.append(child)

    keep = ~split_mask
    opacity = activate_opacity(cloud.opacity_raw)
    keep &= opacity >= cfg.opacity_prune_threshold

    new_params = {}
    for name in params:
        parts = [params[name][keep], clone_new[name], split_children[0][name], split_children[1][name]]
        new_params[name] = np.concatenate(parts, axis=0)
    n_new = len(clone_new["positions"]) + 2 * len(split_children[0]["positions"])
    if adam is not None:
        # prune also drops clone/split sources from the kept block, so the
        # appended children always start with fresh moments
        for name in params:
            adam.resize(name, keep, n_new, new_params[name])
    new_cloud = _cloud_from_params(new_params, cloud.deform.kind)
    return new_cloud, DensifyStats.zeros(len(new_cloud))


@dataclass
class TrainResult:
    cloud: GaussianCloud
    history: list  # rows (iteration, L_C, L_D, L, n_gaussians)
    extent: float
    train_time_sec: float


def train(dataset, cfg: TrainConfig, out_dir: str | None = None,
          settings: RasterSettings | None = None) -> TrainResult:
    """Optimize a canonical cloud + deformation curves against the dataset's
    training split. Deterministic for a fixed seed in single-threaded mode."""
    cfg.validate()
    train_idx = dataset.train_indices
    if len(train_idx) == 0:
        raise InvalidParameterError("training split is empty")
    frames = dataset.frames
    cams = dataset.cams
    rng = np.random.default_rng(cfg.seed)
    settings = settings or RasterSettings()
    background = np.asarray(cfg.background, dtype=np.float64)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    t_start = time.perf_counter()
    cloud = build_canonical_cloud(
        frames, cams, tau=cfg.tau, use_point_fusion=cfg.use_point_fusion,
        n_bases=cfg.n_bases, kind=cfg.basis, sh_degree=cfg.sh_degree)
    extent = scene_extent(cloud.positions)
    adam = Adam(cloud_params(cloud))
    stats = DensifyStats.zeros(len(cloud))

    history = []
    for it in range(1, cfg.iterations + 1):
        fi = int(train_idx[rng.integers(len(train_idx))])
        frame, cam = frames[fi], cams[fi]
        ctx = render_forward(cloud, cam, background, settings)
        out = ctx.output
        l_c, g_color = color_loss_grad(out.color, frame.color, frame.mask)
        l_d, g_depth = depth_loss_grad(out.depth, frame.depth, frame.mask)
        l_c *= cfg.loss_weight_color
        l_d *= cfg.loss_weight_depth
        grads = backward_from_context(ctx, cfg.loss_weight_color * g_color, cfg.loss_weight_depth * g_depth)
        stats.update(grads.screen_grad_norm, grads.visible)
        adam.step(
            {name: getattr(grads, name) for name in PARAM_GROUPS},
            learning_rates(cfg, extent, it),
        )
        history.append((it, l_c, l_d, l_c + l_d, len(cloud)))
        new_cloud, stats = densify_and_prune(cloud, stats, it, cfg, extent, rng, adam)
        if new_cloud is not cloud:
            cloud = new_cloud
        if out_dir and cfg.checkpoint_interval and it % cfg.checkpoint_interval == 0 and it < cfg.iterations:
            dataio.save_checkpoint(cloud, cfg, it, os.path.join(out_dir, f"ckpt_{it:06d}.dgs"),
                                   rng_state=rng.bit_generator.state)
    train_time = time.perf_counter() - t_start
    if out_dir:
        dataio.save_checkpoint(cloud, cfg, cfg.iterations, os.path.join(out_dir, "ckpt_final.dgs"),
                               rng_state=rng.bit_generator.state)
        dataio.write_loss_history(os.path.join(out_dir, "loss_history.csv"), history)
        dataio.write_train_meta(out_dir, train_time, cfg.iterations, active_backend())
    return TrainResult(cloud=cloud, history=history, extent=extent, train_time_sec=train_time)
