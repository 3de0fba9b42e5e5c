"""Camera model, splat containers, EWA projection and spherical-harmonics color."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from polysplat.errors import DegenerateCovariance, FullyCulled
from polysplat.kernels import (
    DEFAULT_EPSILON,
    CullingBound,
    CullingMode,
    KernelKind,
    KernelSpec,
    eval_kernel,
    mode_radius,
)

NEAR_PLANE = 0.2
DEFAULT_DILATION = 0.3

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792, 0.5462742152960396)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)


@dataclass
class Camera:
    """Pinhole camera; ``rotation``/``translation`` map world to camera space."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    id: int = 0

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.width <= 0 or self.height <= 0:
            raise ValueError("camera width and height must be positive")

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def is_orthonormal(self, tol: float = 1e-6) -> bool:
        r = self.rotation
        return bool(np.allclose(r @ r.T, np.eye(3), atol=tol) and abs(np.linalg.det(r) - 1.0) < tol)

    @classmethod
    def look_at(cls, eye, target, width, height, fx, fy=None, up=(0.0, -1.0, 0.0), id=0) -> "Camera":
        """Camera at ``eye`` looking at ``target`` (+z forward, +y down in the image)."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(up, fwd)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd])
        return cls(width, height, fx, fy if fy is not None else fx, width / 2.0, height / 2.0, rot, -rot @ eye, id)


@dataclass
class Splat3D:
    mean: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray  # unit quaternion (w, x, y, z)
    opacity: float
    sh: np.ndarray = field(default_factory=lambda: np.zeros((16, 3)))

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(3)
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(3)
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        self.rotation = q / np.linalg.norm(q)
        sh = np.zeros((16, 3))
        given = np.asarray(self.sh, dtype=np.float64).reshape(-1, 3)
        sh[: len(given)] = given
        self.sh = sh
        self.opacity = float(self.opacity)


@dataclass
class GaussianCloud:
    """Struct-of-arrays view of a splat set; what the rasterizer consumes."""

    means: np.ndarray
    scales: np.ndarray
    quats: np.ndarray
    opacities: np.ndarray
    sh: np.ndarray
    sh_degree: int = 3

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64).reshape(-1, 3)
        n = len(self.means)
        self.scales = np.asarray(self.scales, dtype=np.float64).reshape(n, 3)
        q = np.asarray(self.quats, dtype=np.float64).reshape(n, 4)
        self.quats = q / np.linalg.norm(q, axis=1, keepdims=True) if n else q
        self.opacities = np.asarray(self.opacities, dtype=np.float64).reshape(n)
        sh = np.asarray(self.sh, dtype=np.float64).reshape(n, -1, 3) if n else np.zeros((0, 16, 3))
        if sh.shape[1] < 16:
            sh = np.concatenate([sh, np.zeros((n, 16 - sh.shape[1], 3))], axis=1)
        self.sh = sh

    def __len__(self) -> int:
        return len(self.means)

    @classmethod
    def from_splats(cls, splats: Sequence[Splat3D], sh_degree: int = 3) -> "GaussianCloud":
        if not splats:
            return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros((0, 16, 3)), sh_degree)
        return cls(
            np.stack([s.mean for s in splats]),
            np.stack([s.scale for s in splats]),
            np.stack([s.rotation for s in splats]),
            np.array([s.opacity for s in splats]),
            np.stack([s.sh for s in splats]),
            sh_degree,
        )

    def splats(self) -> list[Splat3D]:
        return [
            Splat3D(self.means[i], self.scales[i], self.quats[i], self.opacities[i], self.sh[i])
            for i in range(len(self))
        ]


def as_cloud(splats) -> GaussianCloud:
    if isinstance(splats, GaussianCloud):
        return splats
    if hasattr(splats, "cloud"):
        return splats.cloud
    return GaussianCloud.from_splats(list(splats))


# ---------------------------------------------------------------------------
# covariance


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """(..., 4) quaternions (w, x, y, z) to (..., 3, 3) rotation matrices."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        -2,
    )


def covariances3d(scales: np.ndarray, quats: np.ndarray) -> np.ndarray:
    m = quat_to_rotmat(quats) * np.asarray(scales)[..., None, :]
    return m @ np.swapaxes(m, -1, -2)


def build_covariance3d(scale, rotation) -> np.ndarray:
    """Sigma = R S S^T R^T for one splat."""
    return covariances3d(np.asarray(scale, dtype=np.float64), np.asarray(rotation, dtype=np.float64))


# ---------------------------------------------------------------------------
# spherical harmonics


def eval_sh_color(sh, view_dir, degree: int = 3) -> np.ndarray:
    """RGB from SH coefficients ``(..., 16, 3)`` and unit view directions ``(..., 3)``.

    Adds the usual +0.5 offset and clamps below at zero only; values above one
    are kept.
    """
    sh = np.asarray(sh, dtype=np.float64)
    d = np.asarray(view_dir, dtype=np.float64)
    x, y, z = d[..., 0:1], d[..., 1:2], d[..., 2:3]
    res = SH_C0 * sh[..., 0, :]
    if degree > 0:
        res = res - SH_C1 * y * sh[..., 1, :] + SH_C1 * z * sh[..., 2, :] - SH_C1 * x * sh[..., 3, :]
        if degree > 1:
            xx, yy, zz = x * x, y * y, z * z
            xy, yz, xz = x * y, y * z, x * z
            res = (
                res
                + SH_C2[0] * xy * sh[..., 4, :]
                + SH_C2[1] * yz * sh[..., 5, :]
                + SH_C2[2] * (2.0 * zz - xx - yy) * sh[..., 6, :]
                + SH_C2[3] * xz * sh[..., 7, :]
                + SH_C2[4] * (xx - yy) * sh[..., 8, :]
            )
            if degree > 2:
                res = (
                    res
                    + SH_C3[0] * y * (3.0 * xx - yy) * sh[..., 9, :]
                    + SH_C3[1] * xy * z * sh[..., 10, :]
                    + SH_C3[2] * y * (4.0 * zz - xx - yy) * sh[..., 11, :]
                    + SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * sh[..., 12, :]
                    + SH_C3[4] * x * (4.0 * zz - xx - yy) * sh[..., 13, :]
                    + SH_C3[5] * z * (xx - yy) * sh[..., 14, :]
                    + SH_C3[6] * x * (xx - 3.0 * yy) * sh[..., 15, :]
                )
    return np.maximum(res + 0.5, 0.0)


# ---------------------------------------------------------------------------
# projection


@dataclass
class ProjectedSplat:
    mean2d: np.ndarray
    conic: tuple[float, float, float]  # (a, b, c) of the inverse dilated covariance
    depth: float
    opacity_eff: float
    color: np.ndarray
    cov2d: np.ndarray  # dilated 2x2 covariance
    opacity: float = 1.0
    bound: CullingBound | None = None

    def quadric(self, px, py):
        a, b, c = self.conic
        dx = np.asarray(px, dtype=np.float64) - self.mean2d[0]
        dy = np.asarray(py, dtype=np.float64) - self.mean2d[1]
        return a * dx * dx + 2.0 * b * dx * dy + c * dy * dy


@dataclass
class ProjectedBatch:
    """Projection of a whole cloud; rows with ``valid == False`` are behind the near plane."""

    valid: np.ndarray
    means2d: np.ndarray
    cov2d_raw: np.ndarray
    cov2d: np.ndarray
    conics: np.ndarray  # (N, 3): a, b, c
    depths: np.ndarray
    opacities: np.ndarray
    opacity_eff: np.ndarray
    colors: np.ndarray

    def __len__(self) -> int:
        return len(self.valid)

    def splat(self, i: int) -> ProjectedSplat:
        a, b, c = (float(v) for v in self.conics[i])
        return ProjectedSplat(
            self.means2d[i].copy(), (a, b, c), float(self.depths[i]), float(self.opacity_eff[i]),
            self.colors[i].copy(), self.cov2d[i].copy(), float(self.opacities[i]),
        )


def project_cloud(
    cloud: GaussianCloud, cam: Camera, v_dilation: float = DEFAULT_DILATION, sh_degree: int | None = None
) -> ProjectedBatch:
    """Project every splat with the local affine (EWA) approximation.

    Anti-aliasing adds ``v_dilation`` to the 2D covariance diagonal and scales
    opacity by ``sqrt(det Sigma' / det Sigma'_aa)``.
    """
    if v_dilation < 0:
        raise ValueError("v_dilation must be >= 0")
    n = len(cloud)
    w = cam.rotation
    t_cam = cloud.means @ w.T + cam.translation
    x, y, z = t_cam[:, 0], t_cam[:, 1], t_cam[:, 2]
    valid = z > NEAR_PLANE
    zs = np.where(valid, z, 1.0)

    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = cam.fx / zs
    jac[:, 0, 2] = -cam.fx * x / (zs * zs)
    jac[:, 1, 1] = cam.fy / zs
    jac[:, 1, 2] = -cam.fy * y / (zs * zs)
    tmat = jac @ w
    cov3 = covariances3d(cloud.scales, cloud.quats)
    cov2 = tmat @ cov3 @ np.swapaxes(tmat, 1, 2)
    cov2 = 0.5 * (cov2 + np.swapaxes(cov2, 1, 2))

    cov_aa = cov2 + v_dilation * np.eye(2)
    det_raw = cov2[:, 0, 0] * cov2[:, 1, 1] - cov2[:, 0, 1] ** 2
    det_aa = cov_aa[:, 0, 0] * cov_aa[:, 1, 1] - cov_aa[:, 0, 1] ** 2
    if np.any(valid & (det_aa <= 1e-12)):
        bad = int(np.flatnonzero(valid & (det_aa <= 1e-12))[0])
        raise DegenerateCovariance(f"splat {bad}: dilated 2D covariance determinant {det_aa[bad]:.3g}")
    det_safe = np.where(det_aa > 0, det_aa, 1.0)
    ratio = np.sqrt(np.clip(det_raw, 0.0, None) / det_safe)
    conics = np.stack([cov_aa[:, 1, 1] / det_safe, -cov_aa[:, 0, 1] / det_safe, cov_aa[:, 0, 0] / det_safe], -1)

    means2d = np.stack([cam.fx * x / zs + cam.cx, cam.fy * y / zs + cam.cy], -1)
    dirs = cloud.means - cam.center
    dirs = dirs / np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
    deg = cloud.sh_degree if sh_degree is None else min(sh_degree, cloud.sh_degree)
    colors = eval_sh_color(cloud.sh, dirs, deg) if n else np.zeros((0, 3))

    return ProjectedBatch(
        valid, means2d, cov2, cov_aa, conics, z, cloud.opacities.copy(), cloud.opacities * ratio, colors
    )


def project_splat(
    s: Splat3D,
    cam: Camera,
    v_dilation: float = DEFAULT_DILATION,
    kernel: KernelSpec | None = None,
    culling: CullingMode = CullingMode.STOPTHEPOP,
    epsilon: float = DEFAULT_EPSILON,
) -> ProjectedSplat | None:
    """Project one splat; ``None`` means culled.

    Without a kernel only the near plane culls. With one, the culling bound is
    attached and splats whose bounding box misses the image are culled too.
    """
    batch = project_cloud(GaussianCloud.from_splats([s]), cam, v_dilation)
    if not batch.valid[0]:
        return None
    p = batch.splat(0)
    if kernel is None:
        return p
    try:
        p.bound = mode_radius(kernel, culling, p.opacity_eff, epsilon)
    except FullyCulled:
        return None
    r = p.bound.radius_sigma
    hx, hy = r * math.sqrt(p.cov2d[0, 0]), r * math.sqrt(p.cov2d[1, 1])
    mx, my = p.mean2d
    if mx + hx < 0 or my + hy < 0 or mx - hx > cam.width - 1 or my - hy > cam.height - 1:
        return None
    return p


# ---------------------------------------------------------------------------
# normalization


def kernel_support(spec: KernelSpec) -> float:
    """Quadric beyond which the kernel is treated as zero for integration."""
    if spec.kind is KernelKind.EXPONENTIAL:
        return -2.0 * math.log(1e-7)
    return spec.first_root


def normalization_integral(
    spec: KernelSpec, cov2d, n_angle: int = 64, n_radial: int = 64, rtol: float = 1e-10, max_angle: int = 1 << 16
) -> float:
    """Integral of ``k(Q(v))`` over the image plane for a 2D covariance.

    Polar quadrature around the mean directly in pixel space: along direction
    ``u`` the quadric is ``r^2 u^T Sigma^-1 u``, so each ray is integrated up
    to where the quadric reaches the kernel support. The angular trapezoid
    rule is refined by doubling until it settles, which keeps very elongated
    covariances accurate. The determinant is never used, which lets tests
    check the sqrt(det) scaling independently.
    """
    cov = np.asarray(cov2d, dtype=np.float64)
    inv = np.linalg.inv(cov)
    support = kernel_support(spec)
    nodes, weights = np.polynomial.legendre.leggauss(n_radial)
    # r = r_max * s, s in [0, 1]
    s = 0.5 * (nodes + 1.0)
    ws = 0.5 * weights

    def rays(theta):
        u = np.stack([np.cos(theta), np.sin(theta)], -1)
        qdir = np.einsum("ti,ij,tj->t", u, inv, u)
        r_max = np.sqrt(support / qdir)
        r = r_max[:, None] * s[None, :]
        k = eval_kernel(spec, r * r * qdir[:, None])
        return np.sum(k * r * ws[None, :], axis=1) * r_max

    n = n_angle
    total = float(np.sum(rays(2.0 * math.pi * np.arange(n) / n)))
    estimate = total * 2.0 * math.pi / n
    # periodic integrand: the trapezoid rule converges fast once the angles resolve it
    while n < max_angle:
        total += float(np.sum(rays(2.0 * math.pi * (np.arange(n) + 0.5) / n)))
        n *= 2
        prev, estimate = estimate, total * 2.0 * math.pi / n
        if abs(estimate - prev) <= rtol * abs(estimate):
            break
    return estimate
