"""Tile-based software rasterizer with per-mode culling and perf counters.

Pixel centers sit at integer coordinates. A tile ``(tx, ty)`` owns pixels
``tx*T .. tx*T+T-1`` (clipped to the image). Splats are binned to tiles by
the axis-aligned box of their culling ellipse, filtered by an exact
tile test, then blended front to back in global depth order.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from polysplat.errors import ConfigError, EmptyBounds, FullyCulled
from polysplat.kernels import (
    DEFAULT_EPSILON,
    CullingMode,
    KernelSpec,
    eval_kernel,
    mode_radius,
)
from polysplat.projection import (
    DEFAULT_DILATION,
    Camera,
    ProjectedBatch,
    ProjectedSplat,
    as_cloud,
    project_cloud,
)

BLEND_CHUNK = 32


@dataclass(frozen=True)
class RasterConfig:
    kernel: KernelSpec = field(default_factory=KernelSpec.exponential)
    culling: CullingMode = CullingMode.STOPTHEPOP
    tile_size: int = 16
    epsilon: float = DEFAULT_EPSILON
    transmittance_floor: float = 1e-4
    threads: int | None = None
    v_dilation: float = DEFAULT_DILATION
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)
    alpha_max: float = 0.999
    clamp_before_blend: bool = False
    # Kernel that decides the culling radii; None means the rendered kernel.
    # Setting it apart from `kernel` reproduces culling-too-tight artifacts.
    bound_kernel: KernelSpec | None = None
    sh_degree: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "culling", CullingMode(self.culling))
        if self.tile_size < 1:
            raise ConfigError("tile_size must be >= 1")
        if not 0 < self.epsilon < 1:
            raise ConfigError("epsilon must lie in (0, 1)")
        if self.culling is CullingMode.ZERO_CROSSING and not self.culling_kernel.is_polynomial:
            raise ConfigError("zero-crossing culling is only defined for polynomial kernels")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads must be >= 1")

    @property
    def culling_kernel(self) -> KernelSpec:
        return self.kernel if self.bound_kernel is None else self.bound_kernel

    def worker_count(self) -> int:
        if self.threads is not None:
            return self.threads
        env = os.environ.get("POLYSPLAT_THREADS")
        if env:
            return max(1, int(env))
        return os.cpu_count() or 1


@dataclass
class PerfCounters:
    splats_submitted: int = 0
    splats_frustum_culled: int = 0
    tile_pairs_coarse: int = 0
    tile_pairs_after_tight_test: int = 0
    kernel_evaluations: int = 0
    fragments_blended: int = 0

    def __add__(self, other: "PerfCounters") -> "PerfCounters":
        return PerfCounters(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))

    def as_dict(self) -> dict[str, int]:
        return asdict(self)


@dataclass
class Framebuffer:
    """Premultiplied color accumulated over splats plus remaining transmittance."""

    width: int
    height: int
    rgb: np.ndarray
    transmittance: np.ndarray

    @classmethod
    def empty(cls, width: int, height: int) -> "Framebuffer":
        return cls(width, height, np.zeros((height, width, 3)), np.ones((height, width)))

    def composite(self, background=(1.0, 1.0, 1.0)) -> np.ndarray:
        return self.rgb + self.transmittance[..., None] * np.asarray(background, dtype=np.float64)


@dataclass(frozen=True)
class TileRect:
    """Inclusive tile index range plus the half extents of the culling box in pixels."""

    x0: int
    x1: int
    y0: int
    y1: int
    half_x: float = 0.0
    half_y: float = 0.0

    @property
    def empty(self) -> bool:
        return self.x1 < self.x0 or self.y1 < self.y0

    @property
    def count(self) -> int:
        return 0 if self.empty else (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)


def _tile_span(center, half, tile, n_tiles):
    # tiles whose pixel-center range [t*T, t*T+T-1] meets [center-half, center+half]
    lo = np.ceil((center - half - (tile - 1)) / tile)
    hi = np.floor((center + half) / tile)
    if n_tiles is not None:
        lo = np.maximum(lo, 0)
        hi = np.minimum(hi, n_tiles - 1)
    return lo.astype(np.int64), hi.astype(np.int64)


def screen_bounds(p: ProjectedSplat, cfg: RasterConfig, cam: Camera | None = None) -> TileRect:
    """Tile rectangle covering ``{v : Q(v) <= radius^2}`` for one splat.

    The radius comes from the culling mode evaluated at ``p.opacity_eff``.
    With a camera the rectangle is clipped to the image's tiles.
    """
    try:
        bound = mode_radius(cfg.culling_kernel, cfg.culling, p.opacity_eff, cfg.epsilon)
    except FullyCulled as exc:
        raise EmptyBounds(str(exc)) from exc
    p.bound = bound
    hx = bound.radius_sigma * math.sqrt(p.cov2d[0, 0])
    hy = bound.radius_sigma * math.sqrt(p.cov2d[1, 1])
    t = cfg.tile_size
    ntx = None if cam is None else -(-cam.width // t)
    nty = None if cam is None else -(-cam.height // t)
    x0, x1 = _tile_span(np.array(p.mean2d[0]), np.array(hx), t, ntx)
    y0, y1 = _tile_span(np.array(p.mean2d[1]), np.array(hy), t, nty)
    return TileRect(int(x0), int(x1), int(y0), int(y1), hx, hy)


def box_min_quadric(mx, my, a, b, c, x0, x1, y0, y1):
    """Exact minimum of ``Q`` over the boxes ``[x0, x1] x [y0, y1]`` (vectorized).

    Zero when the mean is inside; otherwise the minimum lies on an edge, where
    ``Q`` is a 1D convex quadratic minimized by clamping its vertex.
    """
    mx, my, a, b, c, x0, x1, y0, y1 = np.broadcast_arrays(
        *(np.asarray(v, dtype=np.float64) for v in (mx, my, a, b, c, x0, x1, y0, y1))
    )

    def vertical(xe):
        dx = xe - mx
        dy = np.clip(-b * dx / c, y0 - my, y1 - my)
        return a * dx * dx + 2.0 * b * dx * dy + c * dy * dy

    def horizontal(ye):
        dy = ye - my
        dx = np.clip(-b * dy / a, x0 - mx, x1 - mx)
        return a * dx * dx + 2.0 * b * dx * dy + c * dy * dy

    edge = np.minimum(np.minimum(vertical(x0), vertical(x1)), np.minimum(horizontal(y0), horizontal(y1)))
    inside = (mx >= x0) & (mx <= x1) & (my >= y0) & (my <= y1)
    return np.where(inside, 0.0, edge)


def tight_tile_test(p: ProjectedSplat, box: tuple[float, float, float, float], cfg: RasterConfig) -> bool:
    """Whether the splat reaches its culling level set inside the pixel-center box ``(x0, x1, y0, y1)``."""
    bound = p.bound or mode_radius(cfg.culling_kernel, cfg.culling, p.opacity_eff, cfg.epsilon)
    a, b, c = p.conic
    q = box_min_quadric(p.mean2d[0], p.mean2d[1], a, b, c, *box)
    return bool(q <= bound.quadric_root)


# ---------------------------------------------------------------------------
# binning


@dataclass
class _Binning:
    batch: ProjectedBatch
    n_tiles_x: int
    n_tiles_y: int
    pair_splat: np.ndarray  # splat index per surviving pair, grouped by tile then depth rank
    tile_starts: np.ndarray  # offsets into pair_splat for each tile id (len n_tiles + 1)
    counters: PerfCounters


def _quadric_roots(batch: ProjectedBatch, cfg: RasterConfig) -> np.ndarray:
    roots = np.full(len(batch), -1.0)
    kernel = cfg.culling_kernel
    cache: dict[float, float] = {}
    for i in np.flatnonzero(batch.valid):
        o = float(batch.opacity_eff[i])
        if o not in cache:
            try:
                cache[o] = mode_radius(kernel, cfg.culling, o, cfg.epsilon).quadric_root
            except FullyCulled:
                cache[o] = -1.0
        roots[i] = cache[o]
    return roots


def _bin(splats, cam: Camera, cfg: RasterConfig) -> _Binning:
    cloud = as_cloud(splats)
    t = cfg.tile_size
    ntx, nty = -(-cam.width // t), -(-cam.height // t)
    batch = project_cloud(cloud, cam, cfg.v_dilation, cfg.sh_degree)
    n = len(cloud)

    roots = _quadric_roots(batch, cfg)
    alive = batch.valid & (roots >= 0)
    radius = np.sqrt(np.where(alive, roots, 0.0))
    hx = radius * np.sqrt(batch.cov2d[:, 0, 0])
    hy = radius * np.sqrt(batch.cov2d[:, 1, 1])
    x0, x1 = _tile_span(batch.means2d[:, 0], hx, t, ntx)
    y0, y1 = _tile_span(batch.means2d[:, 1], hy, t, nty)
    alive &= (x1 >= x0) & (y1 >= y0)

    idx = np.flatnonzero(alive)
    wx = x1[idx] - x0[idx] + 1
    wy = y1[idx] - y0[idx] + 1
    counts = wx * wy
    coarse = int(counts.sum())

    # expand each splat's rectangle into (splat, tile) pairs
    ps = np.repeat(idx, counts)
    local = np.arange(coarse) - np.repeat(np.cumsum(counts) - counts, counts)
    pwx = np.repeat(wx, counts)
    ptx = np.repeat(x0[idx], counts) + local % pwx
    pty = np.repeat(y0[idx], counts) + local // pwx

    bx0 = (ptx * t).astype(np.float64)
    bx1 = np.minimum(ptx * t + t - 1, cam.width - 1).astype(np.float64)
    by0 = (pty * t).astype(np.float64)
    by1 = np.minimum(pty * t + t - 1, cam.height - 1).astype(np.float64)
    con = batch.conics[ps]
    qmin = box_min_quadric(
        batch.means2d[ps, 0], batch.means2d[ps, 1], con[:, 0], con[:, 1], con[:, 2], bx0, bx1, by0, by1
    )
    keep = qmin <= roots[ps]
    ps, tile_id = ps[keep], (pty * ntx + ptx)[keep]

    # global depth order, ties by splat index
    rank = np.empty(n, dtype=np.int64)
    rank[np.lexsort((np.arange(n), batch.depths))] = np.arange(n)
    order = np.lexsort((rank[ps], tile_id))
    ps, tile_id = ps[order], tile_id[order]
    starts = np.searchsorted(tile_id, np.arange(ntx * nty + 1))

    counters = PerfCounters(
        splats_submitted=n,
        splats_frustum_culled=int(n - alive.sum()),
        tile_pairs_coarse=coarse,
        tile_pairs_after_tight_test=int(len(ps)),
    )
    return _Binning(batch, ntx, nty, ps, starts, counters)


# ---------------------------------------------------------------------------
# blending


def _blend_tile(tile_id: int, binning: _Binning, cam: Camera, cfg: RasterConfig):
    t = cfg.tile_size
    tx, ty = tile_id % binning.n_tiles_x, tile_id // binning.n_tiles_x
    xs = np.arange(tx * t, min(tx * t + t, cam.width))
    ys = np.arange(ty * t, min(ty * t + t, cam.height))
    px = np.tile(xs, len(ys)).astype(np.float64)
    py = np.repeat(ys, len(xs)).astype(np.float64)
    npx = len(px)

    sel = binning.pair_splat[binning.tile_starts[tile_id] : binning.tile_starts[tile_id + 1]]
    rgb = np.zeros((npx, 3))
    trans = np.ones(npx)
    evals = blended = 0
    done = np.zeros(npx, dtype=bool)
    batch = binning.batch

    # Chunks carry the running T and color as their first row so the
    # accumulate order is identical to one pass over the whole list.
    for start in range(0, len(sel), BLEND_CHUNK):
        idx = sel[start : start + BLEND_CHUNK]
        mu = batch.means2d[idx]
        con = batch.conics[idx]
        dx = px[None, :] - mu[:, 0:1]
        dy = py[None, :] - mu[:, 1:2]
        q = con[:, 0:1] * dx * dx + 2.0 * con[:, 1:2] * dx * dy + con[:, 2:3] * dy * dy
        alpha = np.minimum(cfg.alpha_max, batch.opacity_eff[idx, None] * eval_kernel(cfg.kernel, q))
        alpha = np.where(alpha < cfg.epsilon, 0.0, alpha)

        t_after = np.multiply.accumulate(np.vstack([trans[None, :], 1.0 - alpha]), axis=0)
        t_before, t_after = t_after[:-1], t_after[1:]
        live = (t_after >= cfg.transmittance_floor) & ~done[None, :]
        stop = (~live).any(axis=0) & ~done
        evals += int(live.sum()) + int(stop.sum())
        blended += int((live & (alpha > 0)).sum())

        col = batch.colors[idx]
        if cfg.clamp_before_blend:
            col = np.clip(col, 0.0, 1.0)
        w = alpha * t_before * live
        contrib = w[:, :, None] * col[:, None, :]
        rgb = np.add.accumulate(np.concatenate([rgb[None], contrib]), axis=0)[-1]
        # T never increases down a column, so the last live row is the minimum
        trans = np.where(live.any(axis=0), np.where(live, t_after, np.inf).min(axis=0), trans)
        done |= stop
        if done.all():
            break

    return tx, ty, len(xs), len(ys), rgb, trans, evals, blended


def render(splats, cam: Camera, cfg: RasterConfig | None = None) -> tuple[Framebuffer, PerfCounters]:
    """Rasterize a splat set. Output bits do not depend on the thread count."""
    cfg = cfg or RasterConfig()
    fb = Framebuffer.empty(cam.width, cam.height)
    cloud = as_cloud(splats)
    if len(cloud) == 0:
        return fb, PerfCounters()
    binning = _bin(cloud, cam, cfg)
    tiles = [i for i in range(binning.n_tiles_x * binning.n_tiles_y) if binning.tile_starts[i + 1] > binning.tile_starts[i]]
    t = cfg.tile_size

    def work(tile_id):
        return _blend_tile(tile_id, binning, cam, cfg)

    workers = cfg.worker_count()
    if workers == 1:
        results = list(map(work, tiles))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, tiles))
    counters = binning.counters
    evals = blended = 0
    for tx, ty, w, h, rgb, trans, e, b in results:
        fb.rgb[ty * t : ty * t + h, tx * t : tx * t + w] = rgb.reshape(h, w, 3)
        fb.transmittance[ty * t : ty * t + h, tx * t : tx * t + w] = trans.reshape(h, w)
        evals += e
        blended += b
    counters.kernel_evaluations = evals
    counters.fragments_blended = blended
    return fb, counters


def render_image(splats, cam: Camera, cfg: RasterConfig | None = None) -> tuple[np.ndarray, PerfCounters]:
    """Render and composite against ``cfg.background``."""
    cfg = cfg or RasterConfig()
    fb, counters = render(splats, cam, cfg)
    return fb.composite(cfg.background), counters


def count_pairs(splats, cam: Camera, cfg: RasterConfig | None = None) -> PerfCounters:
    """Binning and tight tests only; blending counters stay zero."""
    cfg = cfg or RasterConfig()
    if len(as_cloud(splats)) == 0:
        return PerfCounters()
    return _bin(splats, cam, cfg).counters
