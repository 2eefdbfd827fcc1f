import numpy as np
import pytest

import geocrit as gc


@pytest.fixture(scope="session")
def round2():
    return gc.RoundSphere(dim=2)


@pytest.fixture(scope="session")
def round3():
    return gc.RoundSphere(dim=3)


@pytest.fixture(scope="session")
def ellipsoid():
    return gc.Ellipsoid(axes=[1.0, 1.1, 1.2])


@pytest.fixture(scope="session")
def zoll():
    return gc.RevolutionZoll(amplitude=0.2)


@pytest.fixture(scope="session")
def round2_params(round2):
    return gc.LoopParams(round2, 0.1, 8)


@pytest.fixture(scope="session")
def great_circle_cp(round2, round2_params):
    """Refined prime great circle through e0 in the e0-e1 plane."""
    cfg = gc.sample_closed_geodesic(
        round2, round2_params, np.array([1.0, 0.0, 0.0]),
        np.array([0.0, 1.0, 0.0]), 2 * np.pi,
    )
    return gc.refine(cfg, gc.SearchConfig())


def principal_ellipse(model, i, j, t_max=9.0):
    """Closed geodesic in the coordinate plane (i, j) of an ellipsoid model,
    found by shooting along the symmetry plane: (point, direction, length)."""
    d = model.ambient
    q = np.zeros(d)
    q[i] = 1.0
    u = np.zeros(d)
    u[j] = 1.0
    u = u / float(model.gnorm(q, u))
    period = gc.detect_closure(model, q, u, t_max)
    assert period is not None
    return q, u, period
