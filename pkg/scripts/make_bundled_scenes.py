"""Write the synthetic scenes and their cameras as PLY/JSON files.

Usage: python3 scripts/make_bundled_scenes.py --out-dir scenes/
"""

import argparse
from pathlib import Path

from polysplat.scene_io import SCENE_KINDS, generate_synthetic_scene, save_cameras, synthetic_cameras, write_ply


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", type=Path, default=Path("scenes"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--cameras", type=int, default=4)
    args = ap.parse_args()

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for kind in SCENE_KINDS:
        scene = generate_synthetic_scene(kind, args.seed)
        write_ply(scene, args.out_dir / f"{kind}.ply")
        save_cameras(synthetic_cameras(kind, args.cameras), args.out_dir / f"{kind}_cameras.json")
        print(f"{kind}: {len(scene)} splats")


if __name__ == "__main__":
    main()
