"""Order-1 kernel evaluation as a pixel-vector x splat-vector product with a ReLU epilogue.

The quadric expands to ``a x^2 + 2b xy + c y^2 - 2(a mx + b my) x
- 2(b mx + c my) y + (a mx^2 + 2b mx my + c my^2)``, so with the pixel vector
``u = (x^2, xy, y^2, x, y, 1)`` it is a dot product ``u . q``. Scaling ``q``
by ``o * c1`` and adding ``o * c0`` to the constant slot gives
``o * (c0 + c1 Q)``; the opacity is positive, so it commutes with the ReLU.
"""

from __future__ import annotations

from math import comb

import numpy as np

from polysplat.errors import WrongOrder
from polysplat.kernels import KernelSpec
from polysplat.projection import ProjectedSplat

BLOCK = 16


def vector_dimension(order: int) -> int:
    """Components of the pixel/splat vectors for a polynomial of this order."""
    if order < 1:
        raise ValueError("order must be >= 1")
    return comb(2 * (order + 1), 2)


def pixel_vectors(px, py, origin=(0.0, 0.0)) -> np.ndarray:
    """``(P, 6)`` pixel vectors; ``origin`` shifts to tile-local coordinates."""
    x = np.asarray(px, dtype=np.float64).reshape(-1) - origin[0]
    y = np.asarray(py, dtype=np.float64).reshape(-1) - origin[1]
    return np.stack([x * x, x * y, y * y, x, y, np.ones_like(x)], -1)


def build_splat_vector(p: ProjectedSplat, kernel: KernelSpec, origin=(0.0, 0.0)) -> np.ndarray:
    if not kernel.is_polynomial or kernel.order != 1:
        raise WrongOrder(f"the dot-product form needs an order-1 polynomial kernel, got {kernel.label}")
    a, b, c = p.conic
    mx = p.mean2d[0] - origin[0]
    my = p.mean2d[1] - origin[1]
    q = np.array(
        [a, 2.0 * b, c, -2.0 * (a * mx + b * my), -2.0 * (b * mx + c * my), a * mx * mx + 2.0 * b * mx * my + c * my * my]
    )
    o = p.opacity_eff
    s = o * kernel.coeffs[1] * q
    s[5] += o * kernel.coeffs[0]
    return s


def _dot6(u: np.ndarray, s: np.ndarray) -> np.ndarray:
    # fixed left-to-right summation so blocked and elementwise paths agree bit for bit
    acc = u[..., 0] * s[..., 0]
    for k in range(1, u.shape[-1]):
        acc = acc + u[..., k] * s[..., k]
    return acc


def eval_pair(u: np.ndarray, s: np.ndarray) -> float:
    return float(max(_dot6(np.asarray(u), np.asarray(s)), 0.0))


def batch_eval(pixels, splats) -> np.ndarray:
    """``(P, S)`` contributions ``ReLU(u_i . s_j)``, computed in 16x16 output blocks."""
    u = np.asarray(pixels, dtype=np.float64)
    s = np.asarray(splats, dtype=np.float64)
    if u.ndim != 2 or s.ndim != 2 or len(u) == 0 or len(s) == 0:
        raise ValueError("need non-empty (P, n) pixel and (S, n) splat arrays")
    out = np.empty((len(u), len(s)))
    for i in range(0, len(u), BLOCK):
        ub = u[i : i + BLOCK, None, :]
        for j in range(0, len(s), BLOCK):
            out[i : i + BLOCK, j : j + BLOCK] = np.maximum(_dot6(ub, s[None, j : j + BLOCK, :]), 0.0)
    return out
