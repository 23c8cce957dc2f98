import csv
import math

import numpy as np
import pytest

from uwnet.interference import (
    NO_INTERFERENCE,
    ActiveLink,
    RateResult,
    Scenario,
    band_overlap,
    severe_interference_rate,
    sir_db,
    write_sweep_csv,
)
from uwnet.waterfill import Band, solve_capacity_point


def link(tx, rx, txy, rxy, C=0.5):
    d = math.dist(txy, rxy)
    return ActiveLink(tx, rx, txy, rxy, solve_capacity_point(d, C))


def test_band_overlap_cases():
    a = Band(((1.0, 2.0),))
    assert band_overlap(a, Band(((3.0, 4.0),))).is_empty
    assert band_overlap(a, a) == a
    short = solve_capacity_point(0.2, 0.01).band
    longer = solve_capacity_point(0.31, 0.01).band
    assert band_overlap(short, longer).is_empty


def test_sir_sentinels_and_exclusions():
    v = link("a", "b", (0.0, 0.0), (1.0, 0.0))
    assert sir_db(v, []) == NO_INTERFERENCE
    twin = ActiveLink("c", "d", (0.0, 0.0), (5.0, 5.0), v.point)
    assert sir_db(v, [twin]) == pytest.approx(0.0, abs=1e-9)
    # the victim's own receiver or transmitter never counts
    own = ActiveLink("b", "a", (1.0, 0.0), (0.0, 0.0), v.point)
    assert sir_db(v, [own]) == NO_INTERFERENCE
    far_band = link("e", "f", (0.5, 0.5), (0.52, 0.5), C=0.01)
    assert band_overlap(v.band, far_band.band).is_empty
    assert sir_db(v, [far_band]) == NO_INTERFERENCE


def test_sir_drops_with_closer_interferer():
    v = link("a", "b", (0.0, 0.0), (1.0, 0.0))
    far = ActiveLink("c", "d", (4.0, 0.0), (5.0, 0.0), v.point)
    near = ActiveLink("c", "d", (2.0, 0.0), (3.0, 0.0), v.point)
    assert sir_db(v, [near]) < sir_db(v, [far])


def test_scenario_validation():
    with pytest.raises(ValueError):
        Scenario(scheme=4)
    with pytest.raises(ValueError):
        Scenario(scheme=3)
    with pytest.raises(ValueError):
        Scenario(scheme=1, theta=0.5)


def test_low_snr_is_interference_free():
    r = severe_interference_rate(Scenario(3, 5, snr_db=-20.0), 40, seed=1)
    assert r.failed == 0 and r.percent <= 5.0


def test_rate_is_deterministic_and_parallel_safe():
    sc = Scenario(1, 5)
    a = severe_interference_rate(sc, 24, seed=3)
    b = severe_interference_rate(sc, 24, seed=3, workers=2)
    assert a == b


def test_rate_result_ci():
    r = RateResult(1, 1.0, 5, 200, 10, 0)
    lo, hi = r.ci
    assert r.percent == 5.0 and lo < 5.0 < hi
    assert math.isnan(RateResult(1, 1.0, 5, 0, 0, 3).percent)


def test_sweep_csv(tmp_path):
    write_sweep_csv(tmp_path / "s.csv", [RateResult(2, 0.1, 4, 50, 2, 1)])
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert rows[0]["scheme"] == "2" and float(rows[0]["severe_percent"]) == 4.0
