import numpy as np
import pytest

from aaastrain import _backend
from aaastrain.phantoms import FieldSpec, PhantomSpec, make_field, make_phantom_cloud
from aaastrain.surface import estimate_all_frames

BACKENDS = ["numba", "numpy"] if _backend.HAS_NUMBA else ["numpy"]


@pytest.fixture(params=BACKENDS)
def backend(request):
    previous = _backend.set_backend(request.param)
    yield request.param
    _backend.set_backend(previous)


@pytest.fixture(scope="session")
def sphere_spec():
    return PhantomSpec(kind="sphere", radius_mm=25.0, n_points=20000)


@pytest.fixture(scope="session")
def sphere_cloud(sphere_spec):
    return make_phantom_cloud(sphere_spec)


@pytest.fixture(scope="session")
def sphere_frames(sphere_cloud):
    return estimate_all_frames(sphere_cloud)


@pytest.fixture(scope="session")
def small_sphere():
    """2000-point R=25 sphere with frames, cheap enough for property tests."""
    spec = PhantomSpec(radius_mm=25.0, n_points=2000)
    cloud = make_phantom_cloud(spec)
    return spec, cloud, estimate_all_frames(cloud)


@pytest.fixture(scope="session")
def quadratic_field(sphere_spec):
    spec = FieldSpec("quadratic_radial", 0.5, anisotropy=0.4, curvature=0.005).with_grid_for(sphere_spec, 1.0)
    return make_field(spec, sphere_spec)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def ellipsoid_points(n, axes=(30.0, 25.0, 20.0), center=(1.0, -2.0, 3.0)):
    """Fibonacci samples pushed onto an ellipsoid (non-symmetric test surface)."""
    i = np.arange(n) + 0.5
    h = 1.0 - 2.0 * i / n
    rho = np.sqrt(1.0 - h * h)
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    unit = np.stack([rho * np.cos(phi), rho * np.sin(phi), h], axis=1)
    return unit * np.asarray(axes) + np.asarray(center)


# acceptance reporting ------------------------------------------------------

_criteria = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _criteria.append((marker.args[0], marker.args[1], rep.outcome, item.name))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, outcome, name in sorted(_criteria, key=lambda c: (c[0], c[3])):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {title} ({name})")
