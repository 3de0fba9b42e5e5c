import hashlib
import json
import math

import numpy as np
import pytest

import polysplat.cli as cli
from polysplat.cli import main
from polysplat.errors import FitDiverged
from polysplat.kernels import load_kernel
from polysplat.metrics import rows_from_csv
from polysplat.scene_io import generate_synthetic_scene, read_png, save_cameras, synthetic_cameras, write_ply

# sha256 of the decoded RGB pixels of `render --scene synthetic:grid --kernel exp`, camera 0
GRID_EXP_GOLDEN = "5e1fe22aaa3f2a3717ff456e847af9310ed2e9ffa89c04328a3ec7bc9187d2f0"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def grid_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("grid")
    write_ply(generate_synthetic_scene("grid", 0), d / "grid.ply")
    save_cameras(synthetic_cameras("grid"), d / "cams.json")
    return d / "grid.ply", d / "cams.json"


def test_fit_order1(tmp_path, capsys):
    code, out, _ = run(capsys, "fit", "--order", 1, "--epsilon", "1/255", "--out", tmp_path / "k.txt")
    assert code == 0
    k = load_kernel(tmp_path / "k.txt")
    assert k.coeffs[0] == pytest.approx(0.773, abs=0.02)
    assert k.coeffs[1] == pytest.approx(-0.176, abs=0.01)
    assert "first root" in out and "L1 loss" in out


def test_fit_extended_range(tmp_path, capsys):
    code, out, _ = run(
        capsys, "fit", "--order", 2, "--extended-range", "--tile-size", 16, "--s-min", 0.5477, "--out", tmp_path / "k2.txt"
    )
    assert code == 0
    fit_range = float(next(l for l in (tmp_path / "k2.txt").read_text().splitlines() if l.startswith("fit_range")).split("=")[1])
    assert fit_range == pytest.approx(1992.9, abs=0.5)


@pytest.mark.parametrize(
    "argv",
    [
        ["fit", "--order", "9"],
        ["fit", "--order", "1", "--epsilon", "2"],
        ["fit", "--order", "1", "--epsilon", "abc"],
        ["fit"],
        ["nonsense"],
    ],
)
def test_usage_errors(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2


def test_fit_diverged_exit_1(capsys, monkeypatch):
    def boom(cfg):
        raise FitDiverged("loss went up")

    monkeypatch.setattr(cli, "fit_polynomial", boom)
    code, _, err = run(capsys, "fit", "--order", 1)
    assert code == 1 and "FitDiverged" in err


def test_render_golden(grid_files, tmp_path, capsys):
    ply, cams = grid_files
    code, out, _ = run(
        capsys, "render", "--scene", ply, "--cameras", cams, "--camera-id", 0, "--kernel", "exp",
        "--culling", "stp", "--out", tmp_path / "g.png", "--counters", tmp_path / "c.json",
    )
    assert code == 0
    # PLY stores float32, so the golden comes from the in-memory scene instead
    code, _, _ = run(capsys, "render", "--scene", "synthetic:grid", "--kernel", "exp", "--out", tmp_path / "s.png")
    assert hashlib.sha256(read_png(tmp_path / "s.png").tobytes()).hexdigest() == GRID_EXP_GOLDEN
    counters = json.loads((tmp_path / "c.json").read_text())
    assert counters["splats_submitted"] == 100
    assert json.loads(out) == counters


def test_render_threads_do_not_change_bytes(grid_files, tmp_path, capsys, monkeypatch):
    ply, cams = grid_files
    blobs = []
    for threads in (1, 2, 8):
        out = tmp_path / f"t{threads}.png"
        assert run(capsys, "render", "--scene", ply, "--cameras", cams, "--kernel", "f3", "--culling", "opacity",
                   "--threads", threads, "--out", out)[0] == 0
        blobs.append(out.read_bytes())
    monkeypatch.setenv("POLYSPLAT_THREADS", "3")
    out = tmp_path / "env.png"
    assert run(capsys, "render", "--scene", ply, "--cameras", cams, "--kernel", "f3", "--culling", "opacity", "--out", out)[0] == 0
    blobs.append(out.read_bytes())
    assert len(set(blobs)) == 1


def test_render_kernel_file(grid_files, tmp_path, capsys):
    ply, cams = grid_files
    run(capsys, "fit", "--order", 1, "--out", tmp_path / "k.txt")
    code, _, _ = run(capsys, "render", "--scene", ply, "--cameras", cams, "--kernel", tmp_path / "k.txt",
                     "--culling", "zero", "--out", tmp_path / "z.png")
    assert code == 0
    code, _, _ = run(capsys, "render", "--scene", ply, "--cameras", cams, "--kernel", "f1",
                     "--culling", "zero", "--out", tmp_path / "z2.png")
    assert (tmp_path / "z.png").read_bytes() == (tmp_path / "z2.png").read_bytes()


def test_render_zero_with_exp_is_usage_error(grid_files, tmp_path, capsys):
    ply, cams = grid_files
    code, _, err = run(capsys, "render", "--scene", ply, "--cameras", cams, "--kernel", "exp",
                       "--culling", "zero", "--out", tmp_path / "x.png")
    assert code == 2 and "polynomial" in err


def test_render_io_errors(grid_files, tmp_path, capsys):
    ply, cams = grid_files
    code, _, err = run(capsys, "render", "--scene", tmp_path / "none.ply", "--cameras", cams, "--out", tmp_path / "x.png")
    assert code == 1 and "IoError" in err
    (tmp_path / "bad.ply").write_bytes(b"ply\nformat ascii 1.0\nend_header\n")
    code, _, err = run(capsys, "render", "--scene", tmp_path / "bad.ply", "--cameras", cams, "--out", tmp_path / "x.png")
    assert code == 1 and "UnsupportedFormat" in err
    (tmp_path / "bad.json").write_text("[{")
    code, _, err = run(capsys, "render", "--scene", ply, "--cameras", tmp_path / "bad.json", "--out", tmp_path / "x.png")
    assert code == 1 and "ParseError" in err
    code, _, _ = run(capsys, "render", "--scene", ply, "--cameras", cams, "--kernel", tmp_path / "missing.txt",
                     "--out", tmp_path / "x.png")
    assert code == 1
    code, _, _ = run(capsys, "render", "--scene", ply, "--cameras", cams, "--camera-id", 42, "--out", tmp_path / "x.png")
    assert code == 2


def test_clamp_before_blend_changes_image(tmp_path, capsys):
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    run(capsys, "render", "--scene", "synthetic:overexposed-sky", "--out", a)
    run(capsys, "render", "--scene", "synthetic:overexposed-sky", "--clamp-before-blend", "--out", b)
    assert hashlib.sha256(a.read_bytes()).digest() != hashlib.sha256(b.read_bytes()).digest()


def test_compare_identical(grid_files, tmp_path, capsys):
    ply, cams = grid_files
    code, out, _ = run(capsys, "compare", "--scene", ply, "--cameras", cams, "--a", "f1,opacity", "--b", "f1,opacity",
                       "--json", tmp_path / "r.json", "--csv", tmp_path / "r.csv")
    assert code == 0 and "inf" in out
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["ssim"] == 1.0 and rep["psnr_db"] is None and rep["pair_ratio"] == 1.0
    assert "ssim" in (tmp_path / "r.csv").read_text().splitlines()[0]


def test_compare_ablate(grid_files, tmp_path, capsys):
    ply, cams = grid_files
    code, out, _ = run(capsys, "compare", "--scene", ply, "--cameras", cams, "--ablate", "--csv", tmp_path / "ab.csv")
    assert code == 0
    rows = rows_from_csv((tmp_path / "ab.csv").read_text())
    assert [(r.kernel, r.culling) for r in rows] == [
        ("g", "stp"), ("f1", "stp"), ("f1", "zero"), ("f1", "opacity"), ("f2p", "opacity"), ("f3", "stp"), ("f3", "opacity")
    ]
    assert math.isinf(rows[0].psnr_db)
    assert rows_from_csv(out) == rows


def test_compare_bad_cell(grid_files, capsys):
    ply, cams = grid_files
    assert run(capsys, "compare", "--scene", ply, "--cameras", cams, "--a", "f1", "--b", "f1,stp")[0] == 2
    assert run(capsys, "compare", "--scene", ply, "--cameras", cams, "--a", "f1,fast", "--b", "f1,stp")[0] == 2
    assert run(capsys, "compare", "--scene", ply, "--cameras", cams)[0] == 2


def test_bench(grid_files, tmp_path, capsys):
    ply, cams = grid_files
    code, out, _ = run(capsys, "bench", "--scene", ply, "--cameras", cams, "--kernel", "f1", "--culling", "opacity",
                       "--vs", "exp,stp", "--json", tmp_path / "b.json")
    assert code == 0
    doc = json.loads((tmp_path / "b.json").read_text())
    assert len(doc["rows"]) == 4
    s = doc["summary"]
    assert s["tile_pairs_min"] <= s["tile_pairs_mean"] <= s["tile_pairs_max"]
    assert 0 < s["aggregate_pair_ratio"] < 1
    assert "aggregate_pair_ratio" in out


def test_bench_no_cameras(grid_files, tmp_path, capsys):
    ply, _ = grid_files
    (tmp_path / "empty.json").write_text("[]")
    assert run(capsys, "bench", "--scene", ply, "--cameras", tmp_path / "empty.json")[0] == 2


def test_synth_round_trip(tmp_path, capsys):
    code, _, _ = run(capsys, "synth", "--kind", "overexposed-sky", "--out-scene", tmp_path / "s.ply",
                     "--out-cameras", tmp_path / "s.json", "--count", 2)
    assert code == 0
    code, out, _ = run(capsys, "render", "--scene", tmp_path / "s.ply", "--cameras", tmp_path / "s.json",
                       "--camera-id", 1, "--out", tmp_path / "s.png")
    assert code == 0
    assert read_png(tmp_path / "s.png").shape == (128, 128, 3)
    assert np.any(read_png(tmp_path / "s.png") < 255)
