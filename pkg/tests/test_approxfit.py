import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uwnet.approxfit import (
    PUBLISHED_COEFFS,
    PUBLISHED_WIND_COEFFS,
    ModelCoeffs,
    case_grid,
    eval_band_model,
    eval_fend_model,
    eval_power_model,
    eval_power_model_db,
    eval_wind_model,
    fit_models,
    fit_wind_model,
    parameter_curves,
)
from uwnet.waterfill import sweep_surface

P1 = PUBLISHED_COEFFS[("1", "power")]


def test_published_case1_values():
    assert P1.alpha == (-0.00235, 0.01565, 2.1329)
    assert P1.beta == (0.014798, 1.0148, 74.175)
    assert PUBLISHED_COEFFS[("1", "fend")].alpha == (4.795e-5, 0.00246, -0.44149)
    assert PUBLISHED_COEFFS[("1", "band")].beta == (-5.163e-6, 0.33427, 9.6752)


def test_power_model_hand_value():
    a2 = 74.175 + 0.014798 * (10 * math.log10(2)) ** 2
    assert P1.a2(1.0) == pytest.approx(74.309, abs=5e-4)
    assert eval_power_model(1.0, 1.0, P1) == pytest.approx(10 ** (a2 / 10), rel=1e-12)
    assert eval_power_model_db(1.0, 1.0, P1) == pytest.approx(a2, abs=1e-12)


def test_power_model_vanishes_at_zero_rate():
    assert eval_power_model(2.0, 0.0, P1) == 0.0
    vals = [eval_power_model(2.0, C, P1) for C in (1e-3, 1e-6, 1e-9, 1e-12)]
    assert all(a > b for a, b in zip(vals, vals[1:])) and vals[-1] < 1e-4


def test_sign_pattern_of_published_case1():
    a1, a2, _ = P1.alpha
    b1, b2, _ = P1.beta
    assert a1 < 0 < a2 and b1 > 0 and b2 > 0


def test_fend_above_band_on_case1_grid():
    l, C = np.meshgrid(*case_grid("1"))
    assert np.all(eval_fend_model(l, C, PUBLISHED_COEFFS[("1", "fend")]) > eval_band_model(l, C, PUBLISHED_COEFFS[("1", "band")]))


def test_bad_inputs():
    with pytest.raises(ValueError):
        eval_power_model(0.0, 1.0, P1)
    with pytest.raises(ValueError):
        eval_fend_model(1.0, 0.0, PUBLISHED_COEFFS[("1", "fend")])
    with pytest.raises(ValueError):
        ModelCoeffs("power", (1.0, 2.0), (1.0, 2.0, 3.0))


def test_json_roundtrip():
    assert ModelCoeffs.from_json(P1.to_json()) == P1
    assert json.loads(P1.to_json())["template"] == "power"


def _synthetic_rows(fn):
    return [{"l_km": l, "C_kbps": C, "P_dB": fn(l, C)}
            for C in np.linspace(0.1, 2, 12) for l in np.geomspace(0.05, 10, 9)]


def test_exact_surface_recovered():
    rows = _synthetic_rows(lambda l, C: 20 * math.log10(l) + 70.0)
    c = fit_models(rows, "power")
    C = np.linspace(0.1, 2, 12)
    assert np.allclose(c.a1(C), 2.0, atol=1e-9) and np.allclose(c.a2(C), 70.0, atol=1e-9)
    assert c.mse_a1 < 1e-20 and c.mse_a2 < 1e-20


@given(st.floats(-1e-3, 1e-3), st.floats(0.0, 0.05), st.floats(1.5, 3.0), st.floats(0.0, 0.05),
       st.floats(0.5, 1.5), st.floats(50, 90))
def test_fit_inverts_model_in_class(a1, a2, a3, b1, b2, b3):
    truth = ModelCoeffs("power", (a1, a2, a3), (b1, b2, b3))
    rows = _synthetic_rows(lambda l, C: float(eval_power_model_db(l, C, truth)))
    c = fit_models(rows, "power")
    assert np.allclose(c.alpha, truth.alpha, atol=1e-7)
    assert np.allclose(c.beta, truth.beta, atol=1e-6)


def test_fit_rejects_degenerate_grids():
    rows = [{"l_km": 1.0, "C_kbps": C, "P_dB": 70.0} for C in (0.5, 1.0, 1.5, 2.0)]
    with pytest.raises(ValueError):
        fit_models(rows, "power")
    rows = _synthetic_rows(lambda l, C: 70.0)[:-1]
    with pytest.raises(ValueError):
        fit_models(rows, "power")


def test_case1_parameter_curve_mse(case1_surface):
    c = fit_models(case1_surface, "power", case="1")
    assert c.mse_a1 <= 10 * P1.mse_a1
    assert c.mse_a2 <= 10 * P1.mse_a2
    # slopes agree closely with the published set
    assert c.alpha[2] == pytest.approx(P1.alpha[2], abs=0.01)
    assert c.beta[1] == pytest.approx(P1.beta[1], abs=0.01)
    curves = parameter_curves(case1_surface, "power")
    assert np.all(np.diff(curves.a1) > 0)


def test_case1_fend_and_band_fits(case1_surface):
    for template in ("fend", "band"):
        c = fit_models(case1_surface, template)
        assert c.mse_a1 <= 10 * PUBLISHED_COEFFS[("1", template)].mse_a1
        assert c.mse_a2 <= 10 * PUBLISHED_COEFFS[("1", template)].mse_a2


def test_case2_shape():
    l, C = case_grid("2", 12, 12)
    c = fit_models(sweep_surface(l, C, f_range=(1e-5, 1000.0)), "power", case="2")
    # distance exponent grows with rate and stays between spherical-ish and cylindrical-ish spreading
    assert 2.0 < c.alpha[2] < 3.0
    assert np.all(np.diff(c.a1(C)) > 0)


def test_wind_model_published_values():
    base = eval_wind_model(0.0, PUBLISHED_WIND_COEFFS)
    assert base.alpha[2] == 2.4586 and base.beta[2] == 73.144
    for name, val in zip(("alpha1", "alpha2", "alpha3", "beta1", "beta2", "beta3"), base.alpha + base.beta):
        assert val == PUBLISHED_WIND_COEFFS.gammas[name][2]
    assert eval_wind_model(9.0, PUBLISHED_WIND_COEFFS).alpha[0] == pytest.approx(-0.00562, abs=5e-5)


def test_wind_fit_roundtrip():
    per_w = [(w, eval_wind_model(w, PUBLISHED_WIND_COEFFS)) for w in (0, 2, 5, 9, 14)]
    fit = fit_wind_model(per_w)
    for name in PUBLISHED_WIND_COEFFS.gammas:
        assert np.allclose(fit.gammas[name], PUBLISHED_WIND_COEFFS.gammas[name], rtol=1e-6, atol=1e-10)
    with pytest.raises(ValueError):
        fit_wind_model(per_w[:2])
