"""Per-Gaussian temporal deformation curves.

Each deformed attribute channel carries a curve psi(t) = sum_j w_j b_j(t).
The default basis is a Gaussian bump with learnable center and width, so a
weight only influences times near its center; the alternative basis is a
fixed Fourier + polynomial family where only the weights are learnable.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np

from .errors import InvalidParameterError

if TYPE_CHECKING:
    from .core import GaussianCloud

WIDTH_FLOOR = 1e-3

# Channel layout of the (N, 10, B) parameter arrays.
N_CHANNELS = 10
POS_CHANNELS = slice(0, 3)   # position xyz
ROT_CHANNELS = slice(3, 7)   # quaternion wxyz
SCL_CHANNELS = slice(7, 10)  # log-scale xyz


class BasisKind(str, Enum):
    GAUSSIAN = "gaussian"
    FOURIER_POLY = "fourier-poly"


@dataclass
class DeformParams:
    """Curve parameters for every Gaussian and channel, shape (N, 10, B).

    centers/widths are in normalized time units. For the FOURIER_POLY basis
    they are carried but inert: the basis is fixed and only omega learns.
    """

    kind: BasisKind
    omega: np.ndarray
    centers: np.ndarray
    widths: np.ndarray

    @property
    def n(self) -> int:
        return self.omega.shape[0]

    @property
    def n_bases(self) -> int:
        return self.omega.shape[2]

    def copy(self) -> "DeformParams":
        return DeformParams(self.kind, self.omega.copy(), self.centers.copy(), self.widths.copy())

    def take(self, indices) -> "DeformParams":
        return DeformParams(
            self.kind, self.omega[indices].copy(), self.centers[indices].copy(), self.widths[indices].copy()
        )

    @staticmethod
    def concat(parts: list["DeformParams"]) -> "DeformParams":
        kind = parts[0].kind
        return DeformParams(
            kind,
            np.concatenate([p.omega for p in parts], axis=0),
            np.concatenate([p.centers for p in parts], axis=0),
            np.concatenate([p.widths for p in parts], axis=0),
        )


@dataclass
class DeformedAttributes:
    positions: np.ndarray
    rotations_raw: np.ndarray
    scales_raw: np.ndarray


def init_deform(n: int, n_bases: int = 17, kind: BasisKind = BasisKind.GAUSSIAN) -> DeformParams:
    """Zero-weight curves: centers uniform on [0, 1], widths = spacing.

    All weights start at zero so the initial deformation is identically zero.
    """
    if n_bases < 1:
        raise InvalidParameterError(f"need at least one basis function, got {n_bases}")
    centers = (np.arange(n_bases) + 0.5) / n_bases
    widths = np.full(n_bases, 1.0 / n_bases)
    return DeformParams(
        kind=BasisKind(kind),
        omega=np.zeros((n, N_CHANNELS, n_bases)),
        centers=np.broadcast_to(centers, (n, N_CHANNELS, n_bases)).copy(),
        widths=np.broadcast_to(widths, (n, N_CHANNELS, n_bases)).copy(),
    )


def basis_eval(t, center, width):
    """Gaussian bump exp(-(t - center)^2 / (2 width^2)), width floored."""
    w = np.maximum(np.asarray(width, dtype=np.float64), WIDTH_FLOOR)
    d = np.asarray(t, dtype=np.float64) - np.asarray(center, dtype=np.float64)
    return np.exp(-0.5 * (d / w) ** 2)


def gaussian_basis_with_partials(t: float, centers, widths):
    """Basis values plus d/dcenter and d/dwidth, width-floor gated."""
    w_eff = np.maximum(widths, WIDTH_FLOOR)
    d = t - centers
    b = np.exp(-0.5 * (d / w_eff) ** 2)
    db_dcenter = b * d / (w_eff * w_eff)
    db_dwidth = b * d * d / (w_eff * w_eff * w_eff)
    db_dwidth = np.where(widths > WIDTH_FLOOR, db_dwidth, 0.0)
    return b, db_dcenter, db_dwidth


def fourier_poly_basis(t, n_bases: int) -> np.ndarray:
    """Fixed basis values, shape t.shape + (B,).

    Slots pair sin/cos at integer frequencies 1..B//2; any leftover slots are
    monomials t^0, t^1, ...
    """
    t = np.asarray(t, dtype=np.float64)
    out = np.empty(t.shape + (n_bases,))
    k_max = n_bases // 2
    for k in range(1, k_max + 1):
        out[..., 2 * (k - 1)] = np.sin(2 * np.pi * k * t)
        out[..., 2 * k - 1] = np.cos(2 * np.pi * k * t)
    for d, j in enumerate(range(2 * k_max, n_bases)):
        out[..., j] = t**d
    return out


def fourier_poly_basis_eval(t, index: int, n_bases: int) -> float:
    if not 0 <= index < n_bases:
        raise InvalidParameterError(f"basis index {index} out of range for B={n_bases}")
    return float(fourier_poly_basis(float(t), n_bases)[index])


def curve_eval(t, omega, centers=None, widths=None, kind: BasisKind = BasisKind.GAUSSIAN):
    """Evaluate one channel's curve sum_j omega_j b_j(t); linear in omega."""
    omega = np.asarray(omega, dtype=np.float64)
    if kind == BasisKind.GAUSSIAN:
        b = basis_eval(np.asarray(t)[..., None], centers, widths)
    else:
        b = fourier_poly_basis(t, omega.shape[-1])
    return np.sum(omega * b, axis=-1)


def evaluate_curves(params: DeformParams, t: float, with_basis: bool = False):
    """Offsets (N, 10) for all channels at time t; optionally the basis values."""
    if params.kind == BasisKind.GAUSSIAN:
        b = basis_eval(t, params.centers, params.widths)  # (N, 10, B)
    else:
        b = np.broadcast_to(fourier_poly_basis(float(t), params.n_bases), params.omega.shape)
    offsets = np.einsum("ncb,ncb->nc", params.omega, b)
    if with_basis:
        return offsets, b
    return offsets


def deform_cloud(cloud: "GaussianCloud", t: float) -> DeformedAttributes:
    """Attributes posed at time t; canonical arrays are left untouched.

    Offsets are additive on the raw parameterization: positions in world
    units, quaternions before normalization, scales in log-space.
    """
    if not np.isfinite(t):
        raise InvalidParameterError(f"timestamp {t} is not finite")
    offsets = evaluate_curves(cloud.deform, float(t))
    return DeformedAttributes(
        positions=cloud.positions + offsets[:, POS_CHANNELS],
        rotations_raw=cloud.rotations_raw + offsets[:, ROT_CHANNELS],
        scales_raw=cloud.scales_raw + offsets[:, SCL_CHANNELS],
    )


def curves_backward(params: DeformParams, t: float, grad_offsets: np.ndarray):
    """Chain per-channel offset gradients (N, 10) into (omega, centers, widths)."""
    if params.kind == BasisKind.GAUSSIAN:
        b, db_dc, db_dw = gaussian_basis_with_partials(float(t), params.centers, params.widths)
        g_omega = grad_offsets[:, :, None] * b
        g_centers = grad_offsets[:, :, None] * params.omega * db_dc
        g_widths = grad_offsets[:, :, None] * params.omega * db_dw
    else:
        b = fourier_poly_basis(float(t), params.n_bases)
        g_omega = grad_offsets[:, :, None] * b
        g_centers = np.zeros_like(params.centers)
        g_widths = np.zeros_like(params.widths)
    return g_omega, g_centers, g_widths
