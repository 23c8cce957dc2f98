import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uwnet.approxfit import PUBLISHED_COEFFS, ModelCoeffs, eval_power_model
from uwnet.convexity import (
    Q,
    SignConditionError,
    check_approx_convexity,
    convex_distance_bound,
    min_convex_distance,
    param_derivatives,
    power_model_derivatives,
    report_from_surface,
    verify_complete_model_convexity,
)

P1 = PUBLISHED_COEFFS[("1", "power")]


def _convex_surface():
    l = np.array([0.5, 1.0, 2.0])
    C = np.linspace(0.1, 2.0, 12)
    return l, C, np.outer(l, C**2 + C)


def test_clean_surface_passes():
    l, C, P = _convex_surface()
    rep = report_from_surface(l, C, P)
    assert rep.passed and not rep.holes
    assert rep.min_second_diff > 0


def test_single_dent_gives_one_violation():
    l, C, P = _convex_surface()
    P[1, 6] *= 1.1
    rep = report_from_surface(l, C, P)
    assert len(rep.violations) == 1
    v = rep.violations[0]
    assert v["kind"] == "second" and v["l"] == 1.0 and v["C"] == C[6]


def test_degenerate_grids_rejected():
    with pytest.raises(ValueError):
        report_from_surface([1.0], [1.0], np.ones((1, 1)))
    with pytest.raises(ValueError):
        verify_complete_model_convexity([1.0], [0.5])
    with pytest.raises(ValueError):
        report_from_surface([2.0, 1.0], [0.1, 0.2, 0.3], np.ones((2, 3)))


def test_complete_model_small_grid():
    rep = verify_complete_model_convexity([0.1, 1.0, 10.0], np.linspace(0.05, 2.0, 12))
    assert rep.passed, rep.violations
    assert '"pass": true' in rep.to_json()


def test_far_link_increasing_and_convex():
    for z in np.linspace(0.01, 2.0, 25):
        r = check_approx_convexity(1.0, float(z), P1)
        assert r.increasing and r.convex and not r.sign_warning


@pytest.mark.parametrize("z", [0.3, 0.4, 0.5])
def test_one_metre_link_not_convex(z):
    assert not check_approx_convexity(1e-3, z, P1).convex


@given(st.floats(0.005, 20), st.floats(0.05, 1.9))
def test_analytic_derivatives_match_differences(l, z):
    P, dP, d2P = power_model_derivatives(l, z, P1)
    h = 1e-5 * z
    f = lambda c: eval_power_model(l, c, P1)  # noqa: E731
    assert dP == pytest.approx((f(z + h) - f(z - h)) / (2 * h), rel=1e-6)
    hp = 1e-3 * z
    fd2 = (f(z + hp) - 2 * f(z) + f(z - hp)) / hp**2
    assert d2P == pytest.approx(fd2, rel=1e-4, abs=1e-6 * abs(P) / z**2)


def test_published_threshold_in_range():
    d = min_convex_distance((1e-3, 2.0), P1)
    assert 5.0 <= d <= 30.0


def test_bound_without_curvature():
    assert convex_distance_bound(2.0, 0.0, 4.0, 0.0) == pytest.approx(-Q * 2.0)


@given(st.floats(0.1, 5), st.floats(0.1, 5))
def test_bound_monotone_in_ratio(r1, r2):
    b1 = convex_distance_bound(1.0, 0.0, r1, 0.0)
    b2 = convex_distance_bound(1.0, 0.0, r2, 0.0)
    assert (b1 - b2) * (r1 - r2) <= 0


def test_sign_violation_raises():
    bad = ModelCoeffs("power", (0.01, 0.01, 2.0), (0.01, 1.0, 70.0))
    with pytest.raises(SignConditionError):
        min_convex_distance((1e-3, 2.0), bad)


def test_bound_is_where_constraints_switch():
    z = 1.0
    ln_l = convex_distance_bound(*(float(v) for v in param_derivatives(z, P1)))
    above = check_approx_convexity(math.exp(ln_l) * 1.01, z, P1)
    assert above.increasing and above.convex
