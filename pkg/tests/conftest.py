import numpy as np
import pytest
from hypothesis import settings

from polysplat.kernels import KernelSpec, fitted_kernel
from polysplat.scene_io import generate_synthetic_scene, synthetic_cameras

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def f1():
    return fitted_kernel(1)


@pytest.fixture(scope="session")
def f2():
    return fitted_kernel(2)


@pytest.fixture(scope="session")
def f2p():
    return fitted_kernel(2, piecewise=True)


@pytest.fixture(scope="session")
def f3():
    return fitted_kernel(3)


@pytest.fixture(scope="session")
def gauss():
    return KernelSpec.exponential()


@pytest.fixture(scope="session")
def grid_scene():
    return generate_synthetic_scene("grid", 0)


@pytest.fixture(scope="session")
def random_scene():
    return generate_synthetic_scene("random", 0)


@pytest.fixture(scope="session")
def sky_scene():
    return generate_synthetic_scene("overexposed-sky", 0)


@pytest.fixture(scope="session")
def grid_cams():
    return synthetic_cameras("grid")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one (number, name, passed, detail) entry per acceptance criterion
ACCEPTANCE_LOG: list[tuple[int, str, bool, str]] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LOG


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LOG:
        return
    terminalreporter.section("acceptance criteria")
    for num, name, ok, detail in sorted(ACCEPTANCE_LOG):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:2d} {name}: {detail}")
