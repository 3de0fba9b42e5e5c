"""Fit the polynomial kernels and write them as kernel files.

Usage: python3 scripts/fit_kernels.py --out-dir kernels/
"""

import argparse
import math
from pathlib import Path

from polysplat.kernels import DEFAULT_EPSILON, FitConfig, extended_fit_range_xmax, fit_polynomial, save_kernel


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", type=Path, default=Path("kernels"))
    ap.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    ap.add_argument("--extended-range", action="store_true")
    ap.add_argument("--tile-size", type=float, default=16.0)
    ap.add_argument("--s-min", type=float, default=math.sqrt(0.3))
    args = ap.parse_args()

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for order in (1, 2, 3):
        x_max = extended_fit_range_xmax(args.tile_size, args.s_min, args.epsilon) if args.extended_range else None
        cfg = FitConfig(order=order, epsilon=args.epsilon, x_max_override=x_max)
        res = fit_polynomial(cfg)
        for piecewise in (False, True) if order == 2 else (False,):
            spec = res.kernel.as_piecewise() if piecewise else res.kernel
            name = f"f{order}{'p' if piecewise else ''}.txt"
            save_kernel(args.out_dir / name, spec, args.epsilon, cfg.fit_range)
        coeffs = ", ".join(f"{c:+.6f}" for c in res.kernel.coeffs)
        print(f"order {order}: [{coeffs}] root {res.kernel.first_root:.4f} "
              f"radius {math.sqrt(res.kernel.first_root):.4f} loss {res.final_l1_loss:.5f}")


if __name__ == "__main__":
    main()
