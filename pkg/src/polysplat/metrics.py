"""Image-quality metrics and render comparisons."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from polysplat.errors import DimensionMismatch, TooSmall
from polysplat.kernels import CullingMode, KernelSpec, fitted_kernel
from polysplat.raster import PerfCounters, RasterConfig, render

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """PSNR in dB for peak value 1; ``inf`` for identical images."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    return math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable filter, no padding
    rows = sliding_window_view(img, len(g), axis=0) @ g
    return sliding_window_view(rows, len(g), axis=1) @ g


def ssim(a, b) -> float:
    """Mean SSIM: 11x11 Gaussian window (sigma 1.5), data range 1, averaged over channels."""
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise TooSmall(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {a.shape[:2]}")
    g = gaussian_window()
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = _filter_valid(x, g), _filter_valid(y, g)
        vx = _filter_valid(x * x, g) - mx * mx
        vy = _filter_valid(y * y, g) - my * my
        cxy = _filter_valid(x * y, g) - mx * my
        num = (2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2)
        den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)
        vals.append(float(np.mean(num / den)))
    return float(np.mean(vals))


@dataclass
class CompareReport:
    psnr_db: float
    ssim: float
    max_abs_diff: float
    counters_a: PerfCounters
    counters_b: PerfCounters
    pair_ratio: float
    label_a: str = "a"
    label_b: str = "b"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["psnr_db"] = None if math.isinf(self.psnr_db) else self.psnr_db
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        p = "inf" if math.isinf(self.psnr_db) else f"{self.psnr_db:.3f}"
        rows = [
            ("reference", self.label_a),
            ("candidate", self.label_b),
            ("PSNR [dB]", p),
            ("SSIM", f"{self.ssim:.5f}"),
            ("max |diff|", f"{self.max_abs_diff:.5f}"),
            ("tile pairs a", str(self.counters_a.tile_pairs_after_tight_test)),
            ("tile pairs b", str(self.counters_b.tile_pairs_after_tight_test)),
            ("pair ratio b/a", f"{self.pair_ratio:.4f}"),
        ]
        w = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{w}}  {v}" for k, v in rows)


def _ratio(num: int, den: int) -> float:
    if den == 0:
        return 1.0 if num == 0 else math.inf
    return num / den


def cfg_label(cfg: RasterConfig) -> str:
    label = f"{cfg.kernel.label}/{cfg.culling.value}"
    if cfg.bound_kernel is not None:
        label += f"[{cfg.bound_kernel.label} bounds]"
    return label


def compare(scene, cam, cfg_a: RasterConfig, cfg_b: RasterConfig) -> CompareReport:
    """Render both configs; ``cfg_a`` is the reference image."""
    fb_a, ca = render(scene, cam, cfg_a)
    fb_b, cb = render(scene, cam, cfg_b)
    img_a = fb_a.composite(cfg_a.background)
    img_b = fb_b.composite(cfg_b.background)
    return CompareReport(
        psnr(img_a, img_b),
        ssim(img_a, img_b),
        float(np.max(np.abs(img_a - img_b))) if img_a.size else 0.0,
        ca,
        cb,
        _ratio(cb.tile_pairs_after_tight_test, ca.tile_pairs_after_tight_test),
        cfg_label(cfg_a),
        cfg_label(cfg_b),
    )


# ---------------------------------------------------------------------------
# ablation grid (kernel x culling)

ABLATION_CELLS = (
    ("g", "stp"),
    ("f1", "stp"),
    ("f1", "zero"),
    ("f1", "opacity"),
    ("f2p", "opacity"),
    ("f3", "stp"),
    ("f3", "opacity"),
)


def named_kernel(name: str) -> KernelSpec:
    """Built-in kernels: ``exp``/``g``, ``f1``, ``f2``, ``f2p`` (piecewise), ``f3``."""
    name = name.strip().lower()
    if name in ("exp", "g"):
        return KernelSpec.exponential()
    if name in ("f1", "f2", "f3"):
        return fitted_kernel(int(name[1]))
    if name in ("f2p", "f2'"):
        return fitted_kernel(2, piecewise=True)
    raise KeyError(name)


@dataclass
class AblationRow:
    kernel: str
    culling: str
    ssim: float
    psnr_db: float
    max_abs_diff: float
    tile_pairs: int
    kernel_evaluations: int
    fragments_blended: int
    pair_ratio: float

    @classmethod
    def from_strings(cls, d: dict) -> "AblationRow":
        kw = {}
        for f in cls.__dataclass_fields__.values():
            v = d[f.name]
            kw[f.name] = int(v) if f.type == "int" else float(v) if f.type == "float" else v
        return cls(**kw)


def ablation(scene, cam, base: RasterConfig | None = None, cells=ABLATION_CELLS) -> list[AblationRow]:
    """One row per (kernel, culling) cell; the first cell is the quality and pair-count reference."""
    base = base or RasterConfig()
    reference = None
    rows = []
    for kname, mode in cells:
        cfg = replace(base, kernel=named_kernel(kname), culling=CullingMode(mode), bound_kernel=None)
        if reference is None:
            reference = cfg
        rep = compare(scene, cam, reference, cfg)
        c = rep.counters_b
        rows.append(
            AblationRow(
                kname, mode, rep.ssim, rep.psnr_db, rep.max_abs_diff,
                c.tile_pairs_after_tight_test, c.kernel_evaluations, c.fragments_blended, rep.pair_ratio,
            )
        )
    return rows


def rows_to_csv(rows: list[AblationRow]) -> str:
    buf = io.StringIO()
    names = list(AblationRow.__dataclass_fields__)
    w = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in asdict(r).items()})
    return buf.getvalue()


def rows_from_csv(text: str) -> list[AblationRow]:
    return [AblationRow.from_strings(d) for d in csv.DictReader(io.StringIO(text))]
