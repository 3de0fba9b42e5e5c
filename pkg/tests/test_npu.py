import numpy as np
import pytest

from polysplat.errors import WrongOrder
from polysplat.kernels import KernelSpec, eval_kernel
from polysplat.npu import batch_eval, build_splat_vector, eval_pair, pixel_vectors, vector_dimension
from polysplat.projection import ProjectedSplat

REF_F1 = KernelSpec.polynomial((0.773, -0.176))


def random_splat(rng):
    a = rng.normal(size=(2, 3))
    cov = a @ a.T * rng.uniform(0.5, 20) + 0.3 * np.eye(2)
    inv = np.linalg.inv(cov)
    o = rng.uniform(0.05, 1.0)
    return ProjectedSplat(rng.uniform(0, 256, 2), (inv[0, 0], inv[0, 1], inv[1, 1]), 1.0, o, np.ones(3), cov, o)


def test_vector_dimension():
    assert [vector_dimension(n) for n in (1, 2, 3)] == [6, 15, 28]
    with pytest.raises(ValueError):
        vector_dimension(0)


def test_splat_vector_example():
    p = ProjectedSplat(np.zeros(2), (1.0, 0.0, 1.0), 1.0, 1.0, np.ones(3), np.eye(2), 1.0)
    s = build_splat_vector(p, REF_F1)
    assert np.allclose(s, [-0.176, 0, -0.176, 0, 0, 0.773], atol=1e-15)


def test_pixel_vector_layout(rng):
    u = pixel_vectors(rng.uniform(0, 100, 50), rng.uniform(0, 100, 50))
    assert u.shape == (50, 6)
    assert np.all(u[:, 5] == 1)
    assert np.allclose(u[:, 0], u[:, 3] ** 2) and np.allclose(u[:, 2], u[:, 4] ** 2)
    assert np.allclose(u[:, 1], u[:, 3] * u[:, 4])


def test_pixel_at_mean(rng, f1):
    for _ in range(20):
        p = random_splat(rng)
        u = pixel_vectors(*p.mean2d)[0]
        assert eval_pair(u, build_splat_vector(p, f1)) == pytest.approx(p.opacity_eff * f1.coeffs[0], rel=1e-9)


def test_wrong_order(rng, f3, gauss):
    p = random_splat(rng)
    with pytest.raises(WrongOrder):
        build_splat_vector(p, f3)
    with pytest.raises(WrongOrder):
        build_splat_vector(p, gauss)


def test_pairs_match_direct(rng, f1):
    worst = 0.0
    for _ in range(10_000):
        p = random_splat(rng)
        x, y = p.mean2d + rng.normal(0, 4, 2)
        direct = p.opacity_eff * eval_kernel(f1, float(p.quadric(x, y)))
        got = eval_pair(pixel_vectors(x, y)[0], build_splat_vector(p, f1))
        worst = max(worst, abs(got - direct))
    assert worst <= 1e-5


def test_batch_equals_elementwise(rng, f1):
    splats = [random_splat(rng) for _ in range(37)]
    s = np.stack([build_splat_vector(p, f1) for p in splats])
    u = pixel_vectors(rng.uniform(0, 256, 45), rng.uniform(0, 256, 45))
    out = batch_eval(u, s)
    loop = np.array([[eval_pair(ui, sj) for sj in s] for ui in u])
    assert np.array_equal(out, loop)
    assert np.all(out >= 0)


def test_batch_matches_raster_path(rng, f1):
    splats = [random_splat(rng) for _ in range(256)]
    centers = np.array([p.mean2d for p in splats])
    pix = centers[rng.integers(0, 256, 256)] + rng.normal(0, 5, (256, 2))
    s = np.stack([build_splat_vector(p, f1) for p in splats])
    out = batch_eval(pixel_vectors(pix[:, 0], pix[:, 1]), s)
    ref = np.array([[p.opacity_eff * eval_kernel(f1, float(p.quadric(x, y))) for p in splats] for x, y in pix])
    assert np.max(np.abs(out - ref)) <= 1e-5
    assert np.count_nonzero(ref) > 100


def test_tile_local_origin(rng, f1):
    p = random_splat(rng)
    px, py = rng.uniform(0, 256, 30), rng.uniform(0, 256, 30)
    org = (np.floor(p.mean2d[0] / 16) * 16, np.floor(p.mean2d[1] / 16) * 16)
    a = batch_eval(pixel_vectors(px, py), build_splat_vector(p, f1)[None])
    b = batch_eval(pixel_vectors(px, py, org), build_splat_vector(p, f1, org)[None])
    assert np.allclose(a, b, atol=1e-9)


def test_batch_rejects_empty():
    with pytest.raises(ValueError):
        batch_eval(np.zeros((0, 6)), np.zeros((3, 6)))
