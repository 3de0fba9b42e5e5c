"""ReLU-polynomial splat kernels, analytic culling bounds and a reference tile rasterizer."""

from polysplat.kernels import (
    CullingBound,
    CullingMode,
    FitConfig,
    FitResult,
    KernelKind,
    KernelSpec,
    culling_radius,
    eval_kernel,
    extended_fit_range_xmax,
    first_positive_root,
    fit_polynomial,
)
from polysplat.projection import Camera, GaussianCloud, ProjectedSplat, Splat3D
from polysplat.raster import Framebuffer, PerfCounters, RasterConfig, count_pairs, render

__all__ = [
    "Camera",
    "CullingBound",
    "CullingMode",
    "FitConfig",
    "FitResult",
    "Framebuffer",
    "GaussianCloud",
    "KernelKind",
    "KernelSpec",
    "PerfCounters",
    "ProjectedSplat",
    "RasterConfig",
    "Splat3D",
    "count_pairs",
    "culling_radius",
    "eval_kernel",
    "extended_fit_range_xmax",
    "first_positive_root",
    "fit_polynomial",
    "render",
]
