"""Splat kernel functions, polynomial fitting and analytic culling radii.

Kernels map the quadric ``x = (v - mu)^T Sigma^-1 (v - mu)`` of a pixel to the
unweighted contribution of a splat. The reference kernel is ``exp(-x / 2)``;
the polynomial kernels are low-order fits of it that reach zero at a finite
quadric value, which is what makes tight culling possible.

Coefficients are stored constant term first: ``coeffs[i]`` multiplies ``x**i``.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from polysplat.errors import (
    ConfigError,
    EpsilonZeroUnbounded,
    FitDiverged,
    FullyCulled,
    NoPositiveRoot,
)

DEFAULT_EPSILON = 1.0 / 255.0


class KernelKind(str, enum.Enum):
    EXPONENTIAL = "exponential"
    POLYNOMIAL_RELU = "polynomial_relu"
    POLYNOMIAL_PIECEWISE = "polynomial_piecewise"


class CullingMode(str, enum.Enum):
    """Which radius decides the screen-space support of a splat."""

    STOPTHEPOP = "stp"  # exponential bound sqrt(2 ln(o / eps)) regardless of kernel
    ZERO_CROSSING = "zero"  # first root of the polynomial, same for every splat
    OPACITY_AWARE = "opacity"  # where o * k(x) drops to eps for this kernel


def horner(coeffs: Sequence[float], x):
    """Evaluate ``sum(coeffs[i] * x**i)``; works on scalars and arrays."""
    acc = np.full(x.shape, float(coeffs[-1])) if isinstance(x, np.ndarray) else float(coeffs[-1])
    for c in reversed(coeffs[:-1]):
        acc = acc * x + c
    return acc


def _horner_deriv(coeffs: Sequence[float], x: float) -> float:
    n = len(coeffs) - 1
    if n == 0:
        return 0.0
    return horner([i * coeffs[i] for i in range(1, n + 1)], x)


@dataclass(frozen=True)
class KernelSpec:
    """A kernel choice plus its polynomial coefficients.

    Use :meth:`exponential` and :meth:`polynomial` rather than the raw
    constructor; the latter computes and checks ``first_root``.
    """

    kind: KernelKind
    order: int = 0
    coeffs: tuple[float, ...] = ()
    first_root: float = math.inf

    def __post_init__(self):
        if self.kind is KernelKind.EXPONENTIAL:
            return
        if self.order not in (1, 2, 3) or len(self.coeffs) != self.order + 1:
            raise ConfigError(f"polynomial kernel needs order 1..3 and order+1 coeffs, got {self.coeffs}")
        if not self.coeffs[0] > 0:
            raise ConfigError("polynomial kernel must be positive at the splat center")
        if self.order == 1 and not self.coeffs[1] < 0:
            raise ConfigError("order-1 kernel must decay (negative slope)")
        if not (math.isfinite(self.first_root) and self.first_root > 0):
            raise ConfigError("polynomial kernel needs a finite positive first root")
        if abs(horner(self.coeffs, self.first_root)) >= 1e-9:
            raise ConfigError(f"first_root {self.first_root!r} is not a root of {self.coeffs}")

    @classmethod
    def exponential(cls) -> "KernelSpec":
        return cls(KernelKind.EXPONENTIAL)

    @classmethod
    def polynomial(cls, coeffs: Sequence[float], piecewise: bool = False) -> "KernelSpec":
        coeffs = tuple(float(c) for c in coeffs)
        kind = KernelKind.POLYNOMIAL_PIECEWISE if piecewise else KernelKind.POLYNOMIAL_RELU
        if not 2 <= len(coeffs) <= 4:
            raise ConfigError(f"polynomial kernel needs 2..4 coefficients, got {len(coeffs)}")
        if not coeffs[0] > 0:
            raise ConfigError("polynomial kernel must be positive at the splat center")
        if len(coeffs) == 2 and not coeffs[1] < 0:
            raise ConfigError("order-1 kernel must decay (negative slope)")
        return cls(kind, len(coeffs) - 1, coeffs, first_positive_root(coeffs))

    @property
    def is_polynomial(self) -> bool:
        return self.kind is not KernelKind.EXPONENTIAL

    @property
    def peak(self) -> float:
        """Kernel value at the splat center."""
        return 1.0 if self.kind is KernelKind.EXPONENTIAL else self.coeffs[0]

    def as_piecewise(self) -> "KernelSpec":
        return replace(self, kind=KernelKind.POLYNOMIAL_PIECEWISE)

    def as_relu(self) -> "KernelSpec":
        return replace(self, kind=KernelKind.POLYNOMIAL_RELU)

    @property
    def label(self) -> str:
        if self.kind is KernelKind.EXPONENTIAL:
            return "g"
        return f"f{self.order}'" if self.kind is KernelKind.POLYNOMIAL_PIECEWISE else f"f{self.order}"


def eval_kernel(spec: KernelSpec, x):
    """Kernel value at quadric ``x`` (scalar or array, ``x >= 0``)."""
    if spec.kind is KernelKind.EXPONENTIAL:
        return np.exp(-0.5 * x)
    p = horner(spec.coeffs, x)
    if spec.kind is KernelKind.POLYNOMIAL_RELU:
        return np.maximum(p, 0.0)
    return np.where(x < spec.first_root, np.maximum(p, 0.0), 0.0) if isinstance(x, np.ndarray) else (
        max(p, 0.0) if x < spec.first_root else 0.0
    )


# ---------------------------------------------------------------------------
# roots


def _real_roots_quadratic(c0: float, c1: float, c2: float) -> list[float]:
    disc = c1 * c1 - 4.0 * c2 * c0
    if disc < 0:
        return []
    # q-form avoids cancellation between -c1 and sqrt(disc)
    q = -0.5 * (c1 + math.copysign(math.sqrt(disc), c1))
    roots = []
    if q != 0:
        roots += [q / c2, c0 / q]
    else:
        roots.append(-c1 / (2.0 * c2))
    return roots


def _real_roots_cubic(c0: float, c1: float, c2: float, c3: float) -> list[float]:
    d0 = c2 * c2 - 3.0 * c3 * c1
    d1 = 2.0 * c2**3 - 9.0 * c3 * c2 * c1 + 27.0 * c3 * c3 * c0
    disc = d1 * d1 - 4.0 * d0**3
    if disc < 0:
        # three distinct real roots: the principal cube root would be complex
        phi = math.acos(max(-1.0, min(1.0, d1 / (2.0 * d0**1.5))))
        m = 2.0 * math.sqrt(d0)
        return [-(c2 + m * math.cos((phi + 2.0 * math.pi * k) / 3.0)) / (3.0 * c3) for k in range(3)]
    sq = math.sqrt(disc)
    # pick the sign that keeps |C| away from zero
    num = 0.5 * (d1 + sq) if d1 >= 0 else 0.5 * (d1 - sq)
    cc = float(np.cbrt(num))
    if cc == 0.0:
        return [-c2 / (3.0 * c3)]
    roots = [-(c2 + cc + d0 / cc) / (3.0 * c3)]
    if disc == 0.0 and d0 != 0.0:
        roots.append((9.0 * c3 * c0 - c2 * c1) / (2.0 * d0))
    return roots


def _polish(coeffs: Sequence[float], x: float, steps: int = 3) -> float:
    for _ in range(steps):
        px = horner(coeffs, x)
        dp = _horner_deriv(coeffs, x)
        if px == 0.0 or dp == 0.0:
            break
        cand = x - px / dp
        if abs(cand - x) > 1e-6 * max(1.0, abs(x)) or abs(horner(coeffs, cand)) >= abs(px):
            break
        x = cand
    return x


def first_positive_root(coeffs: Sequence[float]) -> float:
    """Smallest ``x > 0`` with ``sum(coeffs[i] * x**i) == 0`` for order <= 3.

    Closed forms per order; the cubic uses the Delta0/Delta1 formula with a
    trigonometric branch when all three roots are real. The result gets a few
    guarded Newton steps to remove cancellation error.
    """
    c = [float(v) for v in coeffs]
    if len(c) < 2 or len(c) > 4:
        raise ValueError(f"order must be 1..3, got coefficients {coeffs!r}")
    if not c[0] > 0:
        raise ValueError("polynomial must be positive at x = 0")
    if len(c) == 4 and abs(c[3]) < 1e-15:
        c = c[:3]
    if len(c) == 3 and abs(c[2]) < 1e-12:
        c = c[:2]

    if len(c) == 2:
        roots = [-c[0] / c[1]] if c[1] != 0 else []
    elif len(c) == 3:
        roots = _real_roots_quadratic(*c)
    else:
        roots = _real_roots_cubic(*c)

    positive = [r for r in roots if r > 0 and math.isfinite(r)]
    if not positive:
        raise NoPositiveRoot(f"no positive real root for coefficients {tuple(coeffs)}")
    root = min(positive)
    return _polish([float(v) for v in coeffs], root) if len(c) > 2 else root


# ---------------------------------------------------------------------------
# culling


@dataclass(frozen=True)
class CullingBound:
    """Support radius in standard deviations along each principal axis."""

    radius_sigma: float
    quadric_root: float
    opacity_aware: bool

    @classmethod
    def from_quadric(cls, x: float, opacity_aware: bool) -> "CullingBound":
        r = math.sqrt(x)
        return cls(r, r * r, opacity_aware)


def culling_radius(spec: KernelSpec, opacity: float, epsilon: float = DEFAULT_EPSILON) -> CullingBound:
    """Radius at which ``opacity * kernel`` falls to ``epsilon``.

    ``epsilon == 0`` gives the opacity-independent zero crossing of a
    polynomial kernel.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if spec.kind is KernelKind.EXPONENTIAL:
        if epsilon == 0:
            raise EpsilonZeroUnbounded("the exponential kernel has no zero crossing")
        if opacity <= epsilon:
            raise FullyCulled(f"opacity {opacity} never exceeds epsilon {epsilon}")
        return CullingBound.from_quadric(2.0 * math.log(opacity / epsilon), True)

    if opacity * spec.coeffs[0] <= epsilon:
        raise FullyCulled(f"peak contribution {opacity * spec.coeffs[0]} <= epsilon {epsilon}")
    if epsilon == 0:
        return CullingBound.from_quadric(spec.first_root, False)
    shifted = (spec.coeffs[0] - epsilon / opacity,) + spec.coeffs[1:]
    return CullingBound.from_quadric(first_positive_root(shifted), True)


def mode_radius(
    kernel: KernelSpec, mode: CullingMode, opacity: float, epsilon: float = DEFAULT_EPSILON
) -> CullingBound:
    """Culling radius for one splat under a rasterizer culling mode."""
    mode = CullingMode(mode)
    if mode is CullingMode.STOPTHEPOP:
        return culling_radius(KernelSpec.exponential(), opacity, epsilon)
    if mode is CullingMode.ZERO_CROSSING:
        if not kernel.is_polynomial:
            raise ConfigError("zero-crossing culling needs a polynomial kernel")
        return culling_radius(kernel, opacity, 0.0)
    return culling_radius(kernel, opacity, epsilon)


def extended_fit_range_xmax(tile_size_px: float, s_min: float, epsilon: float = DEFAULT_EPSILON) -> float:
    """Largest quadric a tile-culled splat is still evaluated at.

    Worst case: the splat's smallest axis points along a tile diagonal and
    barely touches the tile corner, so pixels up to the opposite corner are
    shaded.
    """
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if tile_size_px < 0 or not s_min > 0:
        raise ValueError("tile size must be >= 0 and s_min > 0")
    return (math.sqrt(2.0) * tile_size_px / s_min + math.sqrt(-2.0 * math.log(epsilon))) ** 2


# ---------------------------------------------------------------------------
# fitting


@dataclass(frozen=True)
class FitConfig:
    order: int = 1
    epsilon: float = DEFAULT_EPSILON
    sample_count: int = 4096
    iterations: int = 20000
    step_size: float = 0.01
    seed: int = 0  # only used when sampling == "random"
    x_max_override: float | None = None
    sampling: str = "grid"

    def __post_init__(self):
        if self.order not in (1, 2, 3):
            raise ConfigError(f"unsupported order {self.order}; orders 1..3 only")
        if not 0 < self.epsilon < 1:
            raise ConfigError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.sample_count < 2 or self.iterations < 1 or not self.step_size > 0:
            raise ConfigError("sample_count >= 2, iterations >= 1 and step_size > 0 required")
        if self.x_max_override is not None and not self.x_max_override > 0:
            raise ConfigError("x_max_override must be positive")
        if self.sampling not in ("grid", "random"):
            raise ConfigError(f"unknown sampling {self.sampling!r}")

    @property
    def fit_range(self) -> float:
        if self.x_max_override is not None:
            return float(self.x_max_override)
        return -2.0 * math.log(self.epsilon)


@dataclass(frozen=True)
class FitResult:
    kernel: KernelSpec
    final_l1_loss: float
    loss_history: tuple[float, ...] = field(repr=False)
    fit_range: float = 0.0
    epsilon: float = DEFAULT_EPSILON


def _samples(cfg: FitConfig) -> np.ndarray:
    r = cfg.fit_range
    if cfg.sampling == "grid":
        return np.linspace(0.0, r, cfg.sample_count)
    return np.sort(np.random.default_rng(cfg.seed).uniform(0.0, r, cfg.sample_count))


def l1_loss(coeffs: Sequence[float], x: np.ndarray) -> float:
    """Mean absolute error of ReLU(p) against exp(-x/2) on the samples."""
    return float(np.mean(np.abs(np.maximum(horner(list(coeffs), x), 0.0) - np.exp(-0.5 * x))))


def _adam_l1(design: np.ndarray, target: np.ndarray, d0: np.ndarray, cfg: FitConfig):
    """Subgradient Adam on the normalized coefficients.

    The first quarter of the run takes every step; afterwards a step is only
    accepted when it does not increase the loss (a rejected step halves the
    step scale and clears the first moment). Returns the best iterate seen.
    """
    beta1, beta2, tiny = 0.9, 0.999, 1e-12
    n = design.shape[0]

    def loss_grad(d):
        p = design @ d
        r = np.maximum(p, 0.0) - target
        return float(np.mean(np.abs(r))), design.T @ (np.sign(r) * (p > 0)) / n

    d = d0.copy()
    m = np.zeros_like(d)
    v = np.zeros_like(d)
    loss, grad = loss_grad(d)
    history = [loss]
    best_loss, best_d = loss, d.copy()
    warmup = cfg.iterations // 4
    scale = 1.0
    for k in range(cfg.iterations):
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad * grad
        m_hat = m / (1 - beta1 ** (k + 1))
        v_hat = v / (1 - beta2 ** (k + 1))
        lr = cfg.step_size * scale * 0.5 * (1.0 + math.cos(math.pi * k / cfg.iterations))
        cand = d - lr * m_hat / (np.sqrt(v_hat) + tiny)
        cand_loss, cand_grad = loss_grad(cand)
        if k < warmup or cand_loss <= loss:
            d, loss, grad = cand, cand_loss, cand_grad
            scale = min(1.0, scale * 1.05)
        else:
            scale *= 0.5
            m[:] = 0.0
        history.append(loss)
        if loss < best_loss:
            best_loss, best_d = loss, d.copy()
    return best_d, history


@functools.lru_cache(maxsize=64)
def fit_polynomial(cfg: FitConfig) -> FitResult:
    """Fit ReLU(p) to exp(-x/2) under an L1 loss on ``[0, cfg.fit_range]``.

    Order N starts from the order N-1 solution with a zero leading term, so
    the loss never gets worse as the order grows. Results are cached per
    config.
    """
    r = cfg.fit_range
    x = _samples(cfg)
    t = x / r  # unit interval keeps the coefficient scales comparable
    target = np.exp(-0.5 * x)
    design = np.vander(t, cfg.order + 1, increasing=True)
    powers = r ** np.arange(cfg.order + 1)

    if cfg.order == 1:
        # least-squares line over the base range only; on an extended range the
        # target is ~0 almost everywhere and the line would start fully clamped
        base = x <= -2.0 * math.log(cfg.epsilon)
        slope, intercept = np.polyfit(t[base], target[base], 1)
        d0 = np.array([intercept, slope])
    else:
        prev = fit_polynomial(replace(cfg, order=cfg.order - 1))
        d0 = np.append(np.asarray(prev.kernel.coeffs) * powers[:-1], 0.0)

    initial = l1_loss(d0 / powers, x)
    d, history = _adam_l1(design, target, d0, cfg)
    coeffs = d / powers
    final = l1_loss(coeffs, x)
    if not final <= initial:
        raise FitDiverged(f"loss went from {initial} to {final}")
    try:
        kernel = KernelSpec.polynomial(coeffs)
    except (NoPositiveRoot, ConfigError) as exc:
        raise NoPositiveRoot(f"fitted polynomial {tuple(coeffs)} has no usable root") from exc
    if kernel.first_root > 4.0 * r:
        raise NoPositiveRoot(f"first root {kernel.first_root} lies beyond 4x the fit range")
    return FitResult(kernel, final, tuple(history), r, cfg.epsilon)


def fitted_kernel(order: int, piecewise: bool = False, **cfg) -> KernelSpec:
    """Convenience: default fit of the given order."""
    k = fit_polynomial(FitConfig(order=order, **cfg)).kernel
    return k.as_piecewise() if piecewise else k


# ---------------------------------------------------------------------------
# kernel files


def dump_kernel(spec: KernelSpec, epsilon: float | None = None, fit_range: float | None = None) -> str:
    lines = [f"kind = {spec.kind.value}"]
    if spec.is_polynomial:
        lines.append(f"order = {spec.order}")
        lines.append("coeffs = " + ", ".join(format(c, ".17g") for c in spec.coeffs))
        lines.append(f"first_root = {spec.first_root:.17g}")
    if epsilon is not None:
        lines.append(f"epsilon = {epsilon:.17g}")
    if fit_range is not None:
        lines.append(f"fit_range = {fit_range:.17g}")
    return "\n".join(lines) + "\n"


def parse_kernel(text: str) -> tuple[KernelSpec, dict[str, float]]:
    """Parse a kernel document; returns the spec and any extra numeric metadata."""
    fields: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"kernel file line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        fields[key] = value
    try:
        kind = KernelKind(fields.pop("kind"))
    except (KeyError, ValueError) as exc:
        raise ConfigError("kernel file needs a valid 'kind'") from exc
    meta = {k: float(fields[k]) for k in ("epsilon", "fit_range") if k in fields}
    if kind is KernelKind.EXPONENTIAL:
        return KernelSpec.exponential(), meta
    try:
        coeffs = tuple(float(c) for c in fields["coeffs"].split(","))
        order = int(fields.get("order", len(coeffs) - 1))
    except (KeyError, ValueError) as exc:
        raise ConfigError("polynomial kernel file needs 'coeffs'") from exc
    if order != len(coeffs) - 1:
        raise ConfigError(f"order {order} does not match {len(coeffs)} coefficients")
    spec = KernelSpec.polynomial(coeffs, piecewise=kind is KernelKind.POLYNOMIAL_PIECEWISE)
    return spec, meta


def save_kernel(path, spec: KernelSpec, epsilon: float | None = None, fit_range: float | None = None) -> None:
    Path(path).write_text(dump_kernel(spec, epsilon, fit_range))


def load_kernel(path) -> KernelSpec:
    return parse_kernel(Path(path).read_text())[0]
