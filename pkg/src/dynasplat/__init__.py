"""dynasplat: CPU differentiable Gaussian splatting for deforming RGB-D scenes."""

from ._backend import active_backend, available_backends
from .camera import CameraFrame, make_camera
from .core import GaussianCloud, build_covariance, gaussian_density, quat_to_rotation
from .deform import BasisKind, DeformParams, basis_eval, curve_eval, deform_cloud, init_deform
from .rasterizer import ParamGrads, RasterSettings, RenderOutput, render, render_backward

__version__ = "0.1.0"

__all__ = [
    "BasisKind",
    "CameraFrame",
    "DeformParams",
    "GaussianCloud",
    "ParamGrads",
    "RasterSettings",
    "RenderOutput",
    "active_backend",
    "available_backends",
    "basis_eval",
    "build_covariance",
    "curve_eval",
    "deform_cloud",
    "gaussian_density",
    "init_deform",
    "make_camera",
    "quat_to_rotation",
    "render",
    "render_backward",
]
