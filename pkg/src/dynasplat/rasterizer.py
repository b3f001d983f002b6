"""Differentiable splatting: projection, alpha blending, analytic gradients.

The forward path poses the cloud at the camera timestamp, projects every
Gaussian to a 2D splat (EWA approximation), and composites color and depth
front to back. The backward path chains upstream image/depth gradients all
the way to the canonical attributes and the deformation-curve parameters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import deform as _deform
from ._backend import get_kernels
from .camera import CameraFrame
from .core import GaussianCloud, activate_opacity, quats_to_rotations, rotation_partials
from .errors import InvalidParameterError, NumericalError

_SH_C1 = 0.4886025119029199
_SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
          -1.0925484305920792, 0.5462742152960396)
_SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
          0.3731763325901154, -0.4570457994644658, 1.445305721320277,
          -0.5900435899266435)


@dataclass
class RasterSettings:
    """Rendering knobs. Defaults are the splatting-standard values.

    bbox_sigma bounds pixel iteration to that many standard deviations of the
    2D footprint; alpha_skip and stop_transmittance gate negligible
    contributions. dense() disables all gating (every splat visits every
    pixel), which makes the render smooth in its parameters; the
    finite-difference validation runs in that mode because the production
    gates are step discontinuities.
    """

    near: float = 0.01
    lowpass: float = 0.3
    bbox_sigma: float = 3.0
    alpha_clamp: float = 0.99
    alpha_skip: float = 1.0 / 255.0
    stop_transmittance: float = 1e-4
    accum_eps: float = 1e-6
    backend: str | None = None

    @classmethod
    def dense(cls, **kw) -> "RasterSettings":
        return cls(bbox_sigma=math.inf, alpha_skip=0.0, stop_transmittance=0.0, **kw)


@dataclass
class RenderOutput:
    color: np.ndarray        # (H, W, 3)
    depth: np.ndarray        # (H, W), alpha-normalized view depth
    accum_alpha: np.ndarray  # (H, W) in [0, 1]


@dataclass
class Splat2D:
    mean2d: np.ndarray
    cov2d: np.ndarray
    view_depth: float
    opacity: float | None = None
    color: np.ndarray | None = None


@dataclass
class ParamGrads:
    """dL/d(every learnable array), plus densification statistics."""

    positions: np.ndarray
    rotations_raw: np.ndarray
    scales_raw: np.ndarray
    opacity_raw: np.ndarray
    sh: np.ndarray
    omega: np.ndarray
    centers: np.ndarray
    widths: np.ndarray
    screen_grad_norm: np.ndarray  # (N,) |dL/d mean2d|, 0 for culled Gaussians
    visible: np.ndarray           # (N,) bool

    @classmethod
    def zeros_like(cls, cloud: GaussianCloud) -> "ParamGrads":
        return cls(
            positions=np.zeros_like(cloud.positions),
            rotations_raw=np.zeros_like(cloud.rotations_raw),
            scales_raw=np.zeros_like(cloud.scales_raw),
            opacity_raw=np.zeros_like(cloud.opacity_raw),
            sh=np.zeros_like(cloud.sh),
            omega=np.zeros_like(cloud.deform.omega),
            centers=np.zeros_like(cloud.deform.centers),
            widths=np.zeros_like(cloud.deform.widths),
            screen_grad_norm=np.zeros(len(cloud)),
            visible=np.zeros(len(cloud), dtype=bool),
        )


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Real spherical-harmonic basis values, shape (N, (degree+1)^2).

    The DC term is 1 so the first coefficient is the mean color directly.
    """
    n = dirs.shape[0]
    b = np.empty((n, (degree + 1) ** 2))
    b[:, 0] = 1.0
    if degree >= 1:
        x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
        b[:, 1] = -_SH_C1 * y
        b[:, 2] = _SH_C1 * z
        b[:, 3] = -_SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        b[:, 4] = _SH_C2[0] * x * y
        b[:, 5] = _SH_C2[1] * y * z
        b[:, 6] = _SH_C2[2] * (2.0 * zz - xx - yy)
        b[:, 7] = _SH_C2[3] * x * z
        b[:, 8] = _SH_C2[4] * (xx - yy)
    if degree >= 3:
        b[:, 9] = _SH_C3[0] * y * (3.0 * xx - yy)
        b[:, 10] = _SH_C3[1] * x * y * z
        b[:, 11] = _SH_C3[2] * y * (4.0 * zz - xx - yy)
        b[:, 12] = _SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        b[:, 13] = _SH_C3[4] * x * (4.0 * zz - xx - yy)
        b[:, 14] = _SH_C3[5] * z * (xx - yy)
        b[:, 15] = _SH_C3[6] * x * (xx - 3.0 * yy)
    return b


def sh_basis_partials(dirs: np.ndarray, degree: int) -> np.ndarray:
    """d(basis)/d(direction), shape (N, C, 3)."""
    n = dirs.shape[0]
    p = np.zeros((n, (degree + 1) ** 2, 3))
    if degree >= 1:
        x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
        p[:, 1, 1] = -_SH_C1
        p[:, 2, 2] = _SH_C1
        p[:, 3, 0] = -_SH_C1
    if degree >= 2:
        p[:, 4, 0] = _SH_C2[0] * y
        p[:, 4, 1] = _SH_C2[0] * x
        p[:, 5, 1] = _SH_C2[1] * z
        p[:, 5, 2] = _SH_C2[1] * y
        p[:, 6, 0] = _SH_C2[2] * (-2.0 * x)
        p[:, 6, 1] = _SH_C2[2] * (-2.0 * y)
        p[:, 6, 2] = _SH_C2[2] * (4.0 * z)
        p[:, 7, 0] = _SH_C2[3] * z
        p[:, 7, 2] = _SH_C2[3] * x
        p[:, 8, 0] = _SH_C2[4] * (2.0 * x)
        p[:, 8, 1] = _SH_C2[4] * (-2.0 * y)
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        p[:, 9, 0] = _SH_C3[0] * 6.0 * x * y
        p[:, 9, 1] = _SH_C3[0] * (3.0 * xx - 3.0 * yy)
        p[:, 10, 0] = _SH_C3[1] * y * z
        p[:, 10, 1] = _SH_C3[1] * x * z
        p[:, 10, 2] = _SH_C3[1] * x * y
        p[:, 11, 0] = _SH_C3[2] * (-2.0 * x * y)
        p[:, 11, 1] = _SH_C3[2] * (4.0 * zz - xx - 3.0 * yy)
        p[:, 11, 2] = _SH_C3[2] * 8.0 * y * z
        p[:, 12, 0] = _SH_C3[3] * (-6.0 * x * z)
        p[:, 12, 1] = _SH_C3[3] * (-6.0 * y * z)
        p[:, 12, 2] = _SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)
        p[:, 13, 0] = _SH_C3[4] * (4.0 * zz - 3.0 * xx - yy)
        p[:, 13, 1] = _SH_C3[4] * (-2.0 * x * y)
        p[:, 13, 2] = _SH_C3[4] * 8.0 * x * z
        p[:, 14, 0] = _SH_C3[5] * 2.0 * x * z
        p[:, 14, 1] = _SH_C3[5] * (-2.0 * y * z)
        p[:, 14, 2] = _SH_C3[5] * (xx - yy)
        p[:, 15, 0] = _SH_C3[6] * (3.0 * xx - 3.0 * yy)
        p[:, 15, 1] = _SH_C3[6] * (-6.0 * x * y)
    return p


def project_gaussian(mu: np.ndarray, cov3d: np.ndarray, cam: CameraFrame,
                     settings: RasterSettings | None = None) -> Splat2D | None:
    """EWA projection of one Gaussian; None when culled by the near plane."""
    settings = settings or RasterSettings()
    rot = cam.rotation
    p = rot @ np.asarray(mu, dtype=np.float64) + cam.translation
    if p[2] <= settings.near:
        return None
    fx, fy = cam.fx, cam.fy
    inv_z = 1.0 / p[2]
    mean2d = np.array([fx * p[0] * inv_z + cam.cx, fy * p[1] * inv_z + cam.cy])
    J = np.array([
        [fx * inv_z, 0.0, -fx * p[0] * inv_z * inv_z],
        [0.0, fy * inv_z, -fy * p[1] * inv_z * inv_z],
    ])
    u = J @ rot
    cov2d = u @ np.asarray(cov3d, dtype=np.float64) @ u.T + settings.lowpass * np.eye(2)
    return Splat2D(mean2d=mean2d, cov2d=cov2d, view_depth=float(p[2]))


@dataclass
class _Prepared:
    """Visible splats in depth order plus the intermediates backward needs."""

    idx: np.ndarray       # original Gaussian indices, depth-ordered
    mu2d: np.ndarray      # (M, 2)
    conic: np.ndarray     # (M, 3) packed inverse 2D covariance
    alpha: np.ndarray     # (M,) activated opacity
    color: np.ndarray     # (M, 3) activated color
    z: np.ndarray         # (M,) camera-frame depth
    bbox: np.ndarray      # (M, 4) int64 inclusive pixel bounds x0 x1 y0 y1
    p_cam: np.ndarray     # (M, 3)
    s_act: np.ndarray     # (M, 3)
    rot_mats: np.ndarray  # (M, 3, 3)
    m_mat: np.ndarray     # (M, 3, 3) R diag(s)
    cov3d: np.ndarray     # (M, 3, 3)
    u_mat: np.ndarray     # (M, 2, 3) J W
    q_unit: np.ndarray    # (M, 4)
    q_norm: np.ndarray    # (M,)
    sh_vals: np.ndarray   # (M, 3) pre-clamp color
    sh_b: np.ndarray      # (M, C) basis values
    dirs: np.ndarray | None
    dir_norm: np.ndarray | None


@dataclass
class RenderContext:
    cloud: GaussianCloud
    cam: CameraFrame
    settings: RasterSettings
    background: np.ndarray
    prep: _Prepared | None
    image_raw: np.ndarray
    dsum: np.ndarray
    trans: np.ndarray
    last_contrib: np.ndarray
    output: RenderOutput


def _check_finite(name, arr, where_idx):
    bad = ~np.all(np.isfinite(arr.reshape(len(arr), -1)), axis=1)
    if np.any(bad):
        i = int(where_idx[np.argmax(bad)]) if where_idx is not None else int(np.argmax(bad))
        raise NumericalError(f"gaussian {i}: non-finite deformed {name}")


def _prepare(cloud: GaussianCloud, cam: CameraFrame, settings: RasterSettings) -> _Prepared | None:
    n = len(cloud)
    if n == 0:
        return None
    offsets = _deform.evaluate_curves(cloud.deform, cam.t)
    mu_t = cloud.positions + offsets[:, _deform.POS_CHANNELS]
    q_t = cloud.rotations_raw + offsets[:, _deform.ROT_CHANNELS]
    sraw_t = cloud.scales_raw + offsets[:, _deform.SCL_CHANNELS]
    all_idx = np.arange(n)
    _check_finite("position", mu_t, all_idx)
    _check_finite("rotation", q_t, all_idx)
    _check_finite("scale", sraw_t, all_idx)
    q_norm = np.linalg.norm(q_t, axis=1)
    if np.any(q_norm < 1e-12):
        raise NumericalError(f"gaussian {int(np.argmax(q_norm < 1e-12))}: deformed quaternion is (near) zero")
    s_act = np.exp(sraw_t)
    _check_finite("activated scale", s_act, all_idx)

    rot_w = cam.rotation
    p_cam = mu_t @ rot_w.T + cam.translation
    vis = p_cam[:, 2] > settings.near
    if not np.any(vis):
        return None
    idx = all_idx[vis]
    mu_t, q_t, sraw_t, q_norm, s_act, p_cam = (
        mu_t[vis], q_t[vis], sraw_t[vis], q_norm[vis], s_act[vis], p_cam[vis])

    q_unit = q_t / q_norm[:, None]
    rot_mats = quats_to_rotations(q_t)
    m_mat = rot_mats * s_act[:, None, :]
    cov3d = np.einsum("mij,mkj->mik", m_mat, m_mat)

    fx, fy = cam.fx, cam.fy
    z = p_cam[:, 2]
    inv_z = 1.0 / z
    mu2d = np.stack([fx * p_cam[:, 0] * inv_z + cam.cx, fy * p_cam[:, 1] * inv_z + cam.cy], axis=1)
    jmat = np.zeros((len(z), 2, 3))
    jmat[:, 0, 0] = fx * inv_z
    jmat[:, 0, 2] = -fx * p_cam[:, 0] * inv_z * inv_z
    jmat[:, 1, 1] = fy * inv_z
    jmat[:, 1, 2] = -fy * p_cam[:, 1] * inv_z * inv_z
    u_mat = np.einsum("mij,jk->mik", jmat, rot_w)
    cov2d = np.einsum("mij,mjk,mlk->mil", u_mat, cov3d, u_mat)
    sa = cov2d[:, 0, 0] + settings.lowpass
    sb = cov2d[:, 0, 1]
    sc = cov2d[:, 1, 1] + settings.lowpass
    det = sa * sc - sb * sb
    conic = np.stack([sc / det, -sb / det, sa / det], axis=1)

    mid = 0.5 * (sa + sc)
    eig_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    if math.isinf(settings.bbox_sigma):
        radius = np.full(len(z), float(max(cam.width, cam.height)))
    else:
        radius = settings.bbox_sigma * np.sqrt(eig_max)
    x0 = np.maximum(np.floor(mu2d[:, 0] - radius), 0).astype(np.int64)
    x1 = np.minimum(np.ceil(mu2d[:, 0] + radius), cam.width - 1).astype(np.int64)
    y0 = np.maximum(np.floor(mu2d[:, 1] - radius), 0).astype(np.int64)
    y1 = np.minimum(np.ceil(mu2d[:, 1] + radius), cam.height - 1).astype(np.int64)
    on_image = (x0 <= x1) & (y0 <= y1) & (mu2d[:, 0] - radius < cam.width) & (mu2d[:, 0] + radius >= 0) \
        & (mu2d[:, 1] - radius < cam.height) & (mu2d[:, 1] + radius >= 0)
    if not np.any(on_image):
        return None
    keep = np.flatnonzero(on_image)
    bbox = np.stack([x0, x1, y0, y1], axis=1)[keep]
    idx = idx[keep]
    mu2d, conic, z, p_cam = mu2d[keep], conic[keep], z[keep], p_cam[keep]
    q_unit, q_norm, s_act = q_unit[keep], q_norm[keep], s_act[keep]
    rot_mats, m_mat, cov3d, u_mat = rot_mats[keep], m_mat[keep], cov3d[keep], u_mat[keep]
    mu_t = mu_t[keep]

    alpha = activate_opacity(cloud.opacity_raw[idx])
    degree = cloud.sh_degree
    sh = cloud.sh[idx]
    if degree == 0:
        dirs = None
        dir_norm = None
        sh_b = np.ones((len(idx), 1))
        sh_vals = sh[:, 0, :].copy()
    else:
        rel = mu_t - cam.center
        dir_norm = np.linalg.norm(rel, axis=1)
        dirs = rel / dir_norm[:, None]
        sh_b = sh_basis(dirs, degree)
        sh_vals = np.einsum("mc,mct->mt", sh_b, sh)
    color = np.maximum(sh_vals, 0.0)

    order = np.argsort(z, kind="stable")
    return _Prepared(
        idx=idx[order], mu2d=np.ascontiguousarray(mu2d[order]), conic=np.ascontiguousarray(conic[order]),
        alpha=np.ascontiguousarray(alpha[order]), color=np.ascontiguousarray(color[order]),
        z=np.ascontiguousarray(z[order]), bbox=np.ascontiguousarray(bbox[order]),
        p_cam=p_cam[order], s_act=s_act[order], rot_mats=rot_mats[order], m_mat=m_mat[order],
        cov3d=cov3d[order], u_mat=u_mat[order], q_unit=q_unit[order], q_norm=q_norm[order],
        sh_vals=sh_vals[order], sh_b=sh_b[order],
        dirs=None if dirs is None else dirs[order],
        dir_norm=None if dir_norm is None else dir_norm[order],
    )


def render_forward(cloud: GaussianCloud, cam: CameraFrame, background: np.ndarray | None = None,
                   settings: RasterSettings | None = None) -> RenderContext:
    settings = settings or RasterSettings()
    background = np.zeros(3) if background is None else np.asarray(background, dtype=np.float64)
    h, w = cam.height, cam.width
    prep = _prepare(cloud, cam, settings)
    if prep is None:
        image_raw = np.zeros((h, w, 3))
        dsum = np.zeros((h, w))
        trans = np.ones((h, w))
        last = np.full((h, w), -1, dtype=np.int64)
    else:
        kern = get_kernels(settings.backend)
        image_raw, dsum, trans, last = kern.blend_forward(
            prep.mu2d, prep.conic, prep.alpha, prep.color, prep.z, prep.bbox, h, w,
            settings.alpha_clamp, settings.alpha_skip, settings.stop_transmittance)
    accum = 1.0 - trans
    color = image_raw + background[None, None, :] * trans[:, :, None]
    depth = dsum / np.maximum(accum, settings.accum_eps)
    out = RenderOutput(color=color, depth=depth, accum_alpha=accum)
    return RenderContext(cloud=cloud, cam=cam, settings=settings, background=background,
                         prep=prep, image_raw=image_raw, dsum=dsum, trans=trans,
                         last_contrib=last, output=out)


def render(cloud: GaussianCloud, cam: CameraFrame, background: np.ndarray | None = None,
           settings: RasterSettings | None = None) -> RenderOutput:
    """Pose the cloud at cam.t, splat, and alpha-blend color and depth."""
    return render_forward(cloud, cam, background, settings).output


def render_backward(cloud: GaussianCloud, cam: CameraFrame, grad_color: np.ndarray,
                    grad_depth: np.ndarray, background: np.ndarray | None = None,
                    settings: RasterSettings | None = None) -> ParamGrads:
    """Gradients of sum(grad_color * color) + sum(grad_depth * depth).

    Recomputes the forward pass; use render_forward + backward_from_context to
    reuse one.
    """
    ctx = render_forward(cloud, cam, background, settings)
    return backward_from_context(ctx, grad_color, grad_depth)


def backward_from_context(ctx: RenderContext, grad_color: np.ndarray,
                          grad_depth: np.ndarray) -> ParamGrads:
    cloud, cam, settings = ctx.cloud, ctx.cam, ctx.settings
    grad_color = np.ascontiguousarray(grad_color, dtype=np.float64)
    grad_depth = np.ascontiguousarray(grad_depth, dtype=np.float64)
    if grad_color.shape != (cam.height, cam.width, 3):
        raise InvalidParameterError(f"grad_color has shape {grad_color.shape}, "
                                    f"expected {(cam.height, cam.width, 3)}")
    if grad_depth.shape != (cam.height, cam.width):
        raise InvalidParameterError(f"grad_depth has shape {grad_depth.shape}, "
                                    f"expected {(cam.height, cam.width)}")
    grads = ParamGrads.zeros_like(cloud)
    prep = ctx.prep
    if prep is None:
        return grads

    # Per-pixel upstream terms. depth = dsum / max(accum, eps) and the final
    # color adds background * T_final, so dL/dT_final collects both paths.
    accum = 1.0 - ctx.trans
    denom = np.maximum(accum, settings.accum_eps)
    gdsum = grad_depth / denom
    gaccum = np.where(accum > settings.accum_eps, -grad_depth * ctx.dsum / (denom * denom), 0.0)
    coef_t = (gaccum - grad_color @ ctx.background) * ctx.trans

    kern = get_kernels(settings.backend)
    g_mu2d, g_conic, g_alpha_act, g_color_act, g_z = kern.blend_backward(
        prep.mu2d, prep.conic, prep.alpha, prep.color, prep.z, prep.bbox,
        cam.height, cam.width, ctx.trans, ctx.last_contrib,
        grad_color, gdsum, coef_t, settings.alpha_clamp, settings.alpha_skip)

    # conic -> packed 2D covariance (full-matrix convention throughout)
    la, lb, lc = prep.conic[:, 0], prep.conic[:, 1], prep.conic[:, 2]
    lam = np.empty((len(la), 2, 2))
    lam[:, 0, 0] = la
    lam[:, 0, 1] = lb
    lam[:, 1, 0] = lb
    lam[:, 1, 1] = lc
    g_lam = np.empty_like(lam)
    g_lam[:, 0, 0] = g_conic[:, 0]
    g_lam[:, 0, 1] = 0.5 * g_conic[:, 1]
    g_lam[:, 1, 0] = 0.5 * g_conic[:, 1]
    g_lam[:, 1, 1] = g_conic[:, 2]
    g_cov2d = -np.einsum("mij,mjk,mkl->mil", lam, g_lam, lam)

    # cov2d = U cov3d U^T + lowpass I
    g_u = 2.0 * np.einsum("mij,mjk,mkl->mil", g_cov2d, prep.u_mat, prep.cov3d)
    g_cov3d = np.einsum("mji,mjk,mkl->mil", prep.u_mat, g_cov2d, prep.u_mat)
    rot_w = cam.rotation
    g_j = np.einsum("mij,kj->mik", g_u, rot_w)

    fx, fy = cam.fx, cam.fy
    px, py, z = prep.p_cam[:, 0], prep.p_cam[:, 1], prep.p_cam[:, 2]
    inv_z = 1.0 / z
    inv_z2 = inv_z * inv_z
    g_p = np.zeros((len(z), 3))
    g_p[:, 0] = g_j[:, 0, 2] * (-fx * inv_z2)
    g_p[:, 1] = g_j[:, 1, 2] * (-fy * inv_z2)
    g_p[:, 2] = (g_j[:, 0, 0] * (-fx * inv_z2) + g_j[:, 0, 2] * (2.0 * fx * px * inv_z2 * inv_z)
                 + g_j[:, 1, 1] * (-fy * inv_z2) + g_j[:, 1, 2] * (2.0 * fy * py * inv_z2 * inv_z))
    g_p[:, 0] += g_mu2d[:, 0] * fx * inv_z
    g_p[:, 1] += g_mu2d[:, 1] * fy * inv_z
    g_p[:, 2] += -g_mu2d[:, 0] * fx * px * inv_z2 - g_mu2d[:, 1] * fy * py * inv_z2
    g_p[:, 2] += g_z
    g_mu_world = g_p @ rot_w

    # cov3d = M M^T with M = R diag(s)
    g_m = 2.0 * np.einsum("mij,mjk->mik", g_cov3d, prep.m_mat)
    g_rot = g_m * prep.s_act[:, None, :]
    g_s = np.einsum("mik,mik->mk", g_m, prep.rot_mats)
    g_scales_raw = g_s * prep.s_act

    parts = rotation_partials(prep.q_unit)
    g_q_unit = np.einsum("mqij,mij->mq", parts, g_rot)
    g_q_raw = (g_q_unit - prep.q_unit * np.sum(prep.q_unit * g_q_unit, axis=1, keepdims=True)) \
        / prep.q_norm[:, None]

    g_opacity_raw = g_alpha_act * prep.alpha * (1.0 - prep.alpha)

    gate = prep.sh_vals > 0.0
    g_vals = np.where(gate, g_color_act, 0.0)
    g_sh = prep.sh_b[:, :, None] * g_vals[:, None, :]
    if prep.dirs is not None:
        degree = cloud.sh_degree
        db = sh_basis_partials(prep.dirs, degree)
        sh_sel = cloud.sh[prep.idx]
        g_dirs = np.einsum("mt,mct,mck->mk", g_vals, sh_sel, db)
        g_rel = (g_dirs - prep.dirs * np.sum(prep.dirs * g_dirs, axis=1, keepdims=True)) \
            / prep.dir_norm[:, None]
        g_mu_world = g_mu_world + g_rel

    # Scatter to full-size arrays and chain through the deformation offsets.
    grad_offsets = np.zeros((len(cloud), _deform.N_CHANNELS))
    np.add.at(grad_offsets[:, _deform.POS_CHANNELS], prep.idx, g_mu_world)
    np.add.at(grad_offsets[:, _deform.ROT_CHANNELS], prep.idx, g_q_raw)
    np.add.at(grad_offsets[:, _deform.SCL_CHANNELS], prep.idx, g_scales_raw)
    grads.positions[:] = grad_offsets[:, _deform.POS_CHANNELS]
    grads.rotations_raw[:] = grad_offsets[:, _deform.ROT_CHANNELS]
    grads.scales_raw[:] = grad_offsets[:, _deform.SCL_CHANNELS]
    np.add.at(grads.opacity_raw, prep.idx, g_opacity_raw)
    np.add.at(grads.sh, prep.idx, g_sh)
    g_omega, g_centers, g_widths = _deform.curves_backward(cloud.deform, cam.t, grad_offsets)
    grads.omega[:] = g_omega
    grads.centers[:] = g_centers
    grads.widths[:] = g_widths
    np.add.at(grads.screen_grad_norm, prep.idx, np.linalg.norm(g_mu2d, axis=1))
    grads.visible[prep.idx] = True
    return grads
