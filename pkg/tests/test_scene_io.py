import json

import numpy as np
import pytest

from polysplat.errors import (
    IoError,
    MalformedHeader,
    MissingProperty,
    NonOrthonormalRotation,
    ParseError,
    SceneIOError,
    TruncatedData,
    UnsupportedFormat,
)
from polysplat.kernels import KernelSpec
from polysplat.metrics import compare
from polysplat.projection import Camera
from polysplat.raster import Framebuffer, RasterConfig
from polysplat.scene_io import (
    generate_synthetic_scene,
    load_cameras,
    load_ply,
    quantize,
    read_png,
    save_cameras,
    synthetic_cameras,
    write_ply,
    write_png,
)

CORE = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
TAIL = ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]


def write_raw_ply(path, names, rows, fmt="binary_little_endian", extra_header=(), body=None, dtype="<f4"):
    header = ["ply", f"format {fmt} 1.0", *extra_header, f"element vertex {len(rows)}"]
    header += [f"property float {n}" for n in names]
    header.append("end_header")
    data = np.array(rows, dtype=dtype)
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode())
        f.write(data.tobytes() if body is None else body)


def base_row(**over):
    vals = dict.fromkeys(CORE + TAIL, 0.0)
    vals["rot_0"] = 1.0
    vals.update(over)
    return vals


def test_activations(tmp_path):
    names = CORE + TAIL
    row = base_row(opacity=0.0, rot_0=2.0)
    write_raw_ply(tmp_path / "a.ply", names, [[row[n] for n in names]])
    scene = load_ply(tmp_path / "a.ply")
    s = scene.splats[0]
    assert s.opacity == pytest.approx(0.5)
    assert np.allclose(s.scale, 1.0)
    assert np.allclose(s.rotation, (1, 0, 0, 0))
    assert scene.sh_degree == 0


def test_activation_closed_forms(tmp_path, rng):
    names = CORE + TAIL
    rows = []
    for _ in range(10):
        r = base_row()
        r.update(zip(TAIL, rng.normal(size=8)))
        rows.append([r[n] for n in names])
    write_raw_ply(tmp_path / "b.ply", names, rows)
    cloud = load_ply(tmp_path / "b.ply").cloud
    raw = np.array(rows, dtype=np.float32).astype(np.float64)
    assert np.allclose(cloud.opacities, 1 / (1 + np.exp(-raw[:, 9])), rtol=1e-12)
    assert np.allclose(cloud.scales, np.exp(raw[:, 10:13]), rtol=1e-12)
    q = raw[:, 13:17]
    assert np.allclose(cloud.quats, q / np.linalg.norm(q, axis=1, keepdims=True), rtol=1e-12)


def test_extra_properties_skipped_and_channel_major(tmp_path):
    rest = [f"f_rest_{i}" for i in range(45)]
    names = ["x", "y", "z", "custom_a", "f_dc_0", "f_dc_1", "f_dc_2", *rest, *TAIL, "custom_b"]
    row = base_row(x=1.5, custom_a=99.0, custom_b=-7.0)
    row.update({n: float(i) for i, n in enumerate(rest)})
    write_raw_ply(tmp_path / "c.ply", names, [[row[n] for n in names]], extra_header=["comment made by hand"])
    scene = load_ply(tmp_path / "c.ply")
    sh = scene.cloud.sh[0]
    assert scene.sh_degree == 3
    assert scene.cloud.means[0, 0] == 1.5
    # coefficient k of channel ch is stored at f_rest_{ch * 15 + k}
    assert sh[1, 0] == 0.0 and sh[1, 1] == 15.0 and sh[1, 2] == 30.0
    assert sh[15, 0] == 14.0 and sh[15, 2] == 44.0


@pytest.mark.parametrize("kind", ["grid", "random", "overexposed-sky"])
def test_round_trip(tmp_path, kind):
    scene = generate_synthetic_scene(kind, 4)
    write_ply(scene, tmp_path / "s.ply")
    back = load_ply(tmp_path / "s.ply")
    a, b = scene.cloud, back.cloud
    assert back.sh_degree == scene.sh_degree
    for name in ("means", "scales", "quats", "opacities", "sh"):
        assert np.allclose(getattr(a, name), getattr(b, name), rtol=1e-6, atol=1e-6), name


def test_ply_errors(tmp_path):
    names = CORE + TAIL
    row = [base_row()[n] for n in names]
    p = tmp_path / "bad.ply"

    p.write_bytes(b"plx\nformat binary_little_endian 1.0\nend_header\n")
    with pytest.raises(MalformedHeader):
        load_ply(p)
    p.write_bytes(b"ply\nformat binary_little_endian 1.0\nelement vertex 1\n")
    with pytest.raises(MalformedHeader):
        load_ply(p)
    p.write_bytes(b"ply\nformat binary_little_endian 1.0\nelement vertex x\nend_header\n")
    with pytest.raises(MalformedHeader):
        load_ply(p)

    write_raw_ply(p, names, [row], fmt="ascii")
    with pytest.raises(UnsupportedFormat):
        load_ply(p)
    write_raw_ply(p, names, [row], fmt="binary_big_endian")
    with pytest.raises(UnsupportedFormat):
        load_ply(p)

    write_raw_ply(p, [n for n in names if n != "scale_1"], [row[:-1]])
    with pytest.raises(MissingProperty, match="scale_1"):
        load_ply(p)

    write_raw_ply(p, names, [row, row], body=np.array([row], dtype="<f4").tobytes())
    with pytest.raises(TruncatedData):
        load_ply(p)

    with pytest.raises(IoError):
        load_ply(tmp_path / "missing.ply")


def test_ply_fuzz_never_untyped(tmp_path, rng):
    scene = generate_synthetic_scene("grid", 0)
    write_ply(scene, tmp_path / "g.ply")
    blob = (tmp_path / "g.ply").read_bytes()
    for i in range(200):
        b = bytearray(blob[: rng.integers(0, len(blob))])
        for _ in range(rng.integers(0, 4)):
            if b:
                b[rng.integers(0, len(b))] = rng.integers(0, 256)
        (tmp_path / "f.ply").write_bytes(bytes(b))
        try:
            load_ply(tmp_path / "f.ply")
        except SceneIOError:
            pass


# --- cameras ------------------------------------------------------------------


def test_camera_identity(tmp_path):
    doc = [dict(id=3, width=8, height=6, fx=5, fy=5, cx=4, cy=3, rotation=np.eye(3).ravel().tolist(), translation=[0, 0, 0])]
    (tmp_path / "c.json").write_text(json.dumps(doc))
    (cam,) = load_cameras(tmp_path / "c.json")
    assert cam.id == 3
    assert np.allclose(cam.center, 0)
    assert np.allclose(cam.rotation.T @ (0, 0, 1), (0, 0, 1))


def test_camera_errors(tmp_path):
    p = tmp_path / "c.json"
    good = dict(id=0, width=8, height=6, fx=5, fy=5, cx=4, cy=3, rotation=np.eye(3).ravel().tolist(), translation=[0, 0, 0])
    flip = dict(good, rotation=np.diag([1.0, 1.0, -1.0]).ravel().tolist())
    p.write_text(json.dumps([flip]))
    with pytest.raises(NonOrthonormalRotation):
        load_cameras(p)
    p.write_text(json.dumps([dict(good, rotation=[2, 0, 0, 0, 1, 0, 0, 0, 1])]))
    with pytest.raises(NonOrthonormalRotation):
        load_cameras(p)
    p.write_text("{not json")
    with pytest.raises(ParseError):
        load_cameras(p)
    p.write_text(json.dumps([{k: v for k, v in good.items() if k != "fx"}]))
    with pytest.raises(ParseError):
        load_cameras(p)
    p.write_text(json.dumps([dict(good, translation=[1, 2])]))
    with pytest.raises(ParseError):
        load_cameras(p)
    p.write_text(json.dumps(good))
    with pytest.raises(ParseError):
        load_cameras(p)
    with pytest.raises(IoError):
        load_cameras(tmp_path / "nope.json")


def test_camera_round_trip(tmp_path):
    cams = synthetic_cameras("random")
    save_cameras(cams, tmp_path / "c.json")
    back = load_cameras(tmp_path / "c.json")
    assert len(back) == len(cams)
    for a, b in zip(cams, back):
        assert (a.id, a.width, a.height, a.fx, a.fy, a.cx, a.cy) == (b.id, b.width, b.height, b.fx, b.fy, b.cx, b.cy)
        assert np.array_equal(a.rotation, b.rotation) and np.array_equal(a.translation, b.translation)


# --- PNG ------------------------------------------------------------------------


def test_png_examples(tmp_path):
    fb = Framebuffer.empty(5, 4)
    px = write_png(fb, tmp_path / "w.png", (1, 1, 1))
    assert np.all(px == 255)
    fb = Framebuffer(5, 4, np.full((4, 5, 3), 0.5), np.zeros((4, 5)))
    px = write_png(fb, tmp_path / "h.png")
    assert np.all(px == 128)


def test_png_round_trip(tmp_path, rng):
    fb = Framebuffer(33, 17, rng.uniform(-0.2, 1.5, (17, 33, 3)), rng.uniform(0, 1, (17, 33)))
    write_png(fb, tmp_path / "r.png", (0.2, 0.4, 0.9))
    assert np.array_equal(read_png(tmp_path / "r.png"), quantize(fb.composite((0.2, 0.4, 0.9))))


def test_png_io_error(tmp_path):
    with pytest.raises(IoError):
        write_png(Framebuffer.empty(2, 2), tmp_path / "no" / "dir" / "x.png")


# --- synthetic scenes ---------------------------------------------------------------


@pytest.mark.parametrize("kind", ["grid", "random", "overexposed-sky"])
def test_synthetic_deterministic(kind):
    a = generate_synthetic_scene(kind, 1).cloud
    b = generate_synthetic_scene(kind, 1).cloud
    c = generate_synthetic_scene(kind, 2).cloud
    assert all(np.array_equal(getattr(a, n), getattr(b, n)) for n in ("means", "scales", "quats", "opacities", "sh"))
    assert not np.array_equal(a.opacities, c.opacities)


def test_synthetic_invariants(random_scene, grid_scene, sky_scene):
    c = random_scene.cloud
    assert len(c) == 5000
    assert np.all(c.scales > 0)
    assert np.allclose(np.linalg.norm(c.quats, axis=1), 1, atol=1e-6)
    assert np.all((c.opacities >= 0.05) & (c.opacities <= 1.0))
    assert np.all(np.abs(c.means) <= 0.5)
    assert len(grid_scene) == 100
    assert np.allclose(grid_scene.cloud.scales, grid_scene.cloud.scales[:, :1])
    # sky splats are overexposed
    dc_color = 0.5 + 0.28209479177387814 * sky_scene.cloud.sh[:, 0, :]
    assert np.sum(dc_color.min(axis=1) > 2.5) >= 49


def test_unknown_scene_kind():
    with pytest.raises(ValueError):
        generate_synthetic_scene("desk", 0)


def test_sky_artifact_stronger_than_grid(grid_scene, sky_scene, f1):
    ref = RasterConfig(kernel=KernelSpec.exponential())
    cand = RasterConfig(kernel=f1, culling="opacity")
    grid = compare(grid_scene, synthetic_cameras("grid")[0], ref, cand).psnr_db
    sky = compare(sky_scene, synthetic_cameras("overexposed-sky")[0], ref, cand).psnr_db
    assert sky < grid


def test_camera_validation():
    with pytest.raises(ValueError):
        Camera(0, 10, 1, 1, 0, 0)
