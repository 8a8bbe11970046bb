import time
from contextlib import contextmanager

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from planekit import CameraIntrinsics, RoomSpec, generate_scene

settings.register_profile("planekit", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("planekit")


@pytest.fixture
def cam():
    return CameraIntrinsics.centered(64, 48)


@pytest.fixture(scope="session")
def room():
    """Noiseless 64x48 room with two slabs and no sphere."""
    return generate_scene(RoomSpec(extra_planes=2, rng_seed=3))


@pytest.fixture(scope="session")
def room_with_sphere():
    return generate_scene(RoomSpec(extra_planes=1, sphere=True, rng_seed=5))


def random_unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def plane_points(normal, offset, n, rng, spread=1.0):
    """n points on n.P = offset scattered around its closest point to the origin."""
    normal = np.asarray(normal, dtype=np.float64)
    a = np.cross(normal, [1.0, 0.0, 0.0] if abs(normal[0]) < 0.9 else [0.0, 1.0, 0.0])
    a /= np.linalg.norm(a)
    b = np.cross(normal, a)
    st = rng.uniform(-spread, spread, size=(n, 2))
    return offset * normal + st[:, :1] * a + st[:, 1:] * b


# -- acceptance bookkeeping ----------------------------------------------------------

ACCEPTANCE_LINES = {}


@pytest.fixture
def criterion():
    """Context manager timing one acceptance criterion and recording PASS/FAIL."""
    @contextmanager
    def run(number, title, limit):
        start = time.perf_counter()
        ok = False
        try:
            yield
            ok = True
        finally:
            elapsed = time.perf_counter() - start
            status = "PASS" if ok and elapsed < limit else "FAIL"
            line = f"{status} criterion {number:2d}: {title} ({elapsed:.2f} s, limit {limit:g} s)"
            ACCEPTANCE_LINES[number] = line
            print(line)
        assert elapsed < limit, f"criterion {number} took {elapsed:.2f} s, limit {limit} s"
    return run


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
