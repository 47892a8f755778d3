import warnings

import numpy as np
import pytest

from geotensor.geometry import MetricField, shoot_from_boundary
from geotensor.jacobi import build_conjugate_datum
from geotensor.tensorfield import Grid
from geotensor.xray import FanSpec, XRay

warnings.filterwarnings("ignore", message=".*TBB.*")


@pytest.fixture(scope="session")
def euclid():
    return MetricField.euclidean(1.0)


@pytest.fixture(scope="session")
def sphere_cap():
    return MetricField.constant_curvature(1.0, 1.5)


@pytest.fixture(scope="session")
def hyperbolic():
    return MetricField.constant_curvature(-0.5, 1.0)


@pytest.fixture(scope="session")
def bump():
    return MetricField.gaussian_bump(0.4, (0.1, -0.05), 0.4, 1.0)


@pytest.fixture(scope="session")
def all_metrics(euclid, hyperbolic, bump):
    return {"euclidean": euclid, "constant_curvature": hyperbolic, "gaussian_bump": bump}


@pytest.fixture(scope="session")
def diameter_pair(sphere_cap):
    """x0 = (-1, 0), y0 = (1, 0) on the sphere cap: antipodal, f = -1."""
    p = shoot_from_boundary(sphere_cap, sphere_cap.boundary.z_of_theta(np.pi), 0.0)
    return build_conjugate_datum(p, p.tau_plus / 2 - np.pi / 2, p.tau_plus / 2 + np.pi / 2)


@pytest.fixture(scope="session")
def small_xray(euclid):
    return XRay(euclid, Grid(65, 1.0), FanSpec(96, 95))


@pytest.fixture(scope="session")
def small_xray_bump(bump):
    return XRay(bump, Grid(65, 1.0), FanSpec(96, 95))


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[k])
