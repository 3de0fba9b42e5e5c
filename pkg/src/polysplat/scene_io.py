"""3DGS PLY checkpoints, camera JSON, PNG output and bundled synthetic scenes."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from polysplat.errors import (
    IoError,
    MalformedHeader,
    MissingProperty,
    NonOrthonormalRotation,
    ParseError,
    TruncatedData,
    UnsupportedFormat,
)
from polysplat.projection import SH_C0, Camera, GaussianCloud, Splat3D
from polysplat.raster import Framebuffer

PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}
CORE_PROPERTIES = (
    ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)
SCENE_KINDS = ("grid", "random", "overexposed-sky")


@dataclass
class SceneFile:
    cloud: GaussianCloud
    source_path: str | None = None
    sh_degree: int = 3

    @property
    def splats(self) -> list[Splat3D]:
        return self.cloud.splats()

    def __len__(self) -> int:
        return len(self.cloud)


# ---------------------------------------------------------------------------
# PLY


def _read_header(f):
    first = f.readline()
    if first.strip() != b"ply":
        raise MalformedHeader("missing 'ply' magic")
    fmt = None
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    while True:
        raw = f.readline()
        if not raw:
            raise MalformedHeader("header ended before 'end_header'")
        try:
            line = raw.decode("ascii").strip()
        except UnicodeDecodeError as exc:
            raise MalformedHeader("non-ASCII header line") from exc
        if line == "end_header":
            break
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            if len(parts) != 3:
                raise MalformedHeader(f"bad format line {line!r}")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3 or not parts[2].isdigit():
                raise MalformedHeader(f"bad element line {line!r}")
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise MalformedHeader("property before any element")
            if len(parts) >= 2 and parts[1] == "list":
                elements[-1][2].append(("list", parts[-1]))
                continue
            if len(parts) != 3 or parts[1] not in PLY_TYPES:
                raise MalformedHeader(f"bad property line {line!r}")
            elements[-1][2].append((PLY_TYPES[parts[1]], parts[2]))
        else:
            raise MalformedHeader(f"unexpected header line {line!r}")
    if fmt is None:
        raise MalformedHeader("missing format line")
    if fmt != "binary_little_endian":
        raise UnsupportedFormat(f"only binary_little_endian PLY is supported, got {fmt}")
    return elements


def load_ply(path) -> SceneFile:
    """Load a standard 3DGS checkpoint and apply the storage activations."""
    path = Path(path)
    try:
        with open(path, "rb") as f:
            elements = _read_header(f)
            body = f.read()
    except OSError as exc:
        raise IoError(str(exc)) from exc

    offset = 0
    vertex = None
    for name, count, props in elements:
        if any(t == "list" for t, _ in props):
            raise UnsupportedFormat(f"list properties in element {name!r} are not supported")
        dtype = np.dtype([(p, "<" + t) for t, p in props])
        if name == "vertex":
            need = dtype.itemsize * count
            if len(body) - offset < need:
                raise TruncatedData(f"vertex data needs {need} bytes, file has {len(body) - offset}")
            vertex = np.frombuffer(body, dtype=dtype, count=count, offset=offset)
            break
        offset += dtype.itemsize * count
    if vertex is None:
        raise MissingProperty("no 'vertex' element")

    names = set(vertex.dtype.names or ())
    missing = [p for p in CORE_PROPERTIES if p not in names]
    if missing:
        raise MissingProperty(f"missing required properties: {', '.join(missing)}")

    def col(name):
        return vertex[name].astype(np.float64)

    n_rest = 0
    while f"f_rest_{n_rest}" in names:
        n_rest += 1
    degree = 0
    for d in (1, 2, 3):
        if n_rest >= 3 * ((d + 1) ** 2 - 1):
            degree = d
    per_channel = (degree + 1) ** 2 - 1
    n = len(vertex)
    sh = np.zeros((n, 16, 3))
    sh[:, 0, :] = np.stack([col(f"f_dc_{i}") for i in range(3)], -1)
    if per_channel:
        # stored channel-major: all R coefficients, then G, then B
        rest = np.stack([col(f"f_rest_{i}") for i in range(3 * per_channel)], -1).reshape(n, 3, per_channel)
        sh[:, 1 : 1 + per_channel, :] = np.swapaxes(rest, 1, 2)

    means = np.stack([col("x"), col("y"), col("z")], -1)
    scales = np.exp(np.stack([col(f"scale_{i}") for i in range(3)], -1))
    quats = np.stack([col(f"rot_{i}") for i in range(4)], -1)
    norms = np.linalg.norm(quats, axis=1, keepdims=True)
    quats = np.where(norms > 0, quats / np.where(norms > 0, norms, 1.0), np.array([1.0, 0, 0, 0]))
    opacities = 1.0 / (1.0 + np.exp(-col("opacity")))
    cloud = GaussianCloud(means, scales, quats, opacities, sh, degree)
    return SceneFile(cloud, str(path), degree)


def write_ply(scene, path, sh_degree: int | None = None) -> None:
    """Write a cloud in the standard layout (inverse activations applied)."""
    cloud = scene.cloud if isinstance(scene, SceneFile) else scene
    degree = cloud.sh_degree if sh_degree is None else sh_degree
    per_channel = (degree + 1) ** 2 - 1
    n = len(cloud)
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(3 * per_channel)]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    data = np.zeros(n, dtype=[(k, "<f4") for k in names])
    for i, k in enumerate("xyz"):
        data[k] = cloud.means[:, i]
    for i in range(3):
        data[f"f_dc_{i}"] = cloud.sh[:, 0, i]
    rest = np.swapaxes(cloud.sh[:, 1 : 1 + per_channel, :], 1, 2).reshape(n, -1)
    for i in range(3 * per_channel):
        data[f"f_rest_{i}"] = rest[:, i]
    o = np.clip(cloud.opacities, 1e-7, 1 - 1e-7)
    data["opacity"] = np.log(o / (1 - o))
    for i in range(3):
        data[f"scale_{i}"] = np.log(cloud.scales[:, i])
    for i in range(4):
        data[f"rot_{i}"] = cloud.quats[:, i]
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {k}" for k in names]
    header.append("end_header")
    try:
        with open(path, "wb") as f:
            f.write(("\n".join(header) + "\n").encode("ascii"))
            f.write(data.tobytes())
    except OSError as exc:
        raise IoError(str(exc)) from exc


# ---------------------------------------------------------------------------
# cameras


def camera_to_dict(cam: Camera) -> dict:
    return {
        "id": int(cam.id),
        "width": int(cam.width),
        "height": int(cam.height),
        "fx": float(cam.fx),
        "fy": float(cam.fy),
        "cx": float(cam.cx),
        "cy": float(cam.cy),
        "rotation": [float(v) for v in cam.rotation.reshape(-1)],
        "translation": [float(v) for v in cam.translation],
    }


def camera_from_dict(d: dict) -> Camera:
    try:
        rot = np.asarray(d["rotation"], dtype=np.float64)
        trans = np.asarray(d["translation"], dtype=np.float64)
        if rot.size != 9 or trans.size != 3:
            raise ParseError("rotation needs 9 entries and translation 3")
        cam = Camera(
            int(d["width"]), int(d["height"]), float(d["fx"]), float(d["fy"]),
            float(d["cx"]), float(d["cy"]), rot.reshape(3, 3), trans, int(d.get("id", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"bad camera entry: {exc}") from exc
    if not cam.is_orthonormal(1e-3):
        raise NonOrthonormalRotation(f"camera {cam.id}: rotation is not a proper orthonormal matrix")
    return cam


def load_cameras(path) -> list[Camera]:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoError(str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(doc, list):
        raise ParseError("camera file must hold a JSON array")
    return [camera_from_dict(d) for d in doc]


def save_cameras(cams, path) -> None:
    try:
        Path(path).write_text(json.dumps([camera_to_dict(c) for c in cams], indent=2))
    except OSError as exc:
        raise IoError(str(exc)) from exc


# ---------------------------------------------------------------------------
# PNG


def quantize(image: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and round half up to 8 bits."""
    return np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_png(fb, path, background=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Composite against ``background`` and save as 8-bit RGB; returns the written pixels."""
    from PIL import Image

    image = fb.composite(background) if isinstance(fb, Framebuffer) else np.asarray(fb)
    pixels = quantize(image)
    try:
        Image.fromarray(pixels, "RGB").save(path, format="PNG")
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return pixels


def read_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


# ---------------------------------------------------------------------------
# synthetic scenes


def _dc_for_color(rgb: np.ndarray) -> np.ndarray:
    return (np.asarray(rgb) - 0.5) / SH_C0


def _random_quats(rng, n):
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def generate_synthetic_scene(kind: str = "grid", seed: int = 0) -> SceneFile:
    """Deterministic test scenes.

    ``grid``: 10x10 isotropic splats on the z = 0 plane.
    ``random``: 5000 anisotropic splats in the unit cube, opacity in [0.05, 1].
    ``overexposed-sky``: a backdrop of large, faint splats whose color sits
    near 3.0, in front of a white background, plus a few dark occluders.
    """
    rng = np.random.default_rng(seed)
    if kind == "grid":
        g = np.linspace(-0.9, 0.9, 10)
        xx, yy = np.meshgrid(g, g)
        n = xx.size
        means = np.stack([xx.ravel(), yy.ravel(), np.zeros(n)], -1)
        scales = np.full((n, 3), 0.07)
        quats = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
        opacities = rng.uniform(0.6, 0.95, n)
        sh = np.zeros((n, 16, 3))
        sh[:, 0, :] = _dc_for_color(rng.uniform(0.1, 0.9, (n, 3)))
        return SceneFile(GaussianCloud(means, scales, quats, opacities, sh, 0), None, 0)

    if kind == "random":
        n = 5000
        means = rng.uniform(-0.5, 0.5, (n, 3))
        scales = np.exp(rng.uniform(math.log(0.015), math.log(0.05), (n, 3)))
        quats = _random_quats(rng, n)
        opacities = rng.uniform(0.05, 1.0, n)
        sh = np.zeros((n, 16, 3))
        sh[:, 0, :] = _dc_for_color(rng.uniform(0.0, 1.0, (n, 3)))
        sh[:, 1:, :] = rng.normal(0.0, 0.05, (n, 15, 3))
        return SceneFile(GaussianCloud(means, scales, quats, opacities, sh, 3), None, 3)

    if kind == "overexposed-sky":
        g = np.linspace(-1.2, 1.2, 7)
        xx, yy = np.meshgrid(g, g)
        layer = np.stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)], -1)
        # two staggered layers so faint tails overlap everywhere
        sky = np.concatenate([layer + (0.0, 0.0, 0.5), layer + (0.2, 0.2, 0.7)])
        m = len(sky)
        sky = sky + rng.normal(0, 0.05, (m, 3))
        sky_scales = np.exp(rng.uniform(math.log(0.2), math.log(0.35), (m, 3)))
        sky_sh = np.zeros((m, 16, 3))
        sky_sh[:, 0, :] = _dc_for_color(rng.uniform(2.8, 3.2, (m, 3)))
        k = 12
        occ = np.stack([rng.uniform(-0.8, 0.8, k), rng.uniform(0.2, 0.9, k), np.zeros(k)], -1)
        occ_scales = np.exp(rng.uniform(math.log(0.04), math.log(0.1), (k, 3)))
        occ_sh = np.zeros((k, 16, 3))
        occ_sh[:, 0, :] = _dc_for_color(rng.uniform(0.05, 0.3, (k, 3)))
        means = np.concatenate([sky, occ])
        scales = np.concatenate([sky_scales, occ_scales])
        quats = _random_quats(rng, m + k)
        opacities = np.concatenate([rng.uniform(0.04, 0.12, m), rng.uniform(0.7, 0.95, k)])
        sh = np.concatenate([sky_sh, occ_sh])
        return SceneFile(GaussianCloud(means, scales, quats, opacities, sh, 0), None, 0)

    raise ValueError(f"unknown synthetic scene {kind!r}; expected one of {SCENE_KINDS}")


def synthetic_cameras(kind: str = "grid", count: int = 4, size: int | None = None) -> list[Camera]:
    """Cameras on a small arc in front of a bundled scene, all looking at the origin."""
    if size is None:
        size = 256 if kind == "random" else 128
    dist = {"grid": 2.5, "random": 2.2, "overexposed-sky": 2.5}[kind]
    cams = []
    for i in range(count):
        ang = math.radians(-15.0 + 30.0 * i / max(count - 1, 1))
        eye = (dist * math.sin(ang), 0.15 * i, -dist * math.cos(ang))
        cams.append(Camera.look_at(eye, (0.0, 0.0, 0.0), size, size, fx=size, id=i))
    return cams
