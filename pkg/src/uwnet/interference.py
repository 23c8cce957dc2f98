"""Signal-to-interference analysis of solved subgraphs in random deployments.

Each trial deploys nodes uniformly in a square, picks a source and a sink,
solves the minimum-power subgraph and checks every receiving link for SIR
below 3 dB. Interference is counted only over the spectral overlap of the
victim's band with each interferer's band (ideal receive filtering).
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import binomtest

from .channel import EnvironmentParams, path_loss
from .netopt import (
    CompleteCost,
    InfeasibleError,
    MulticastRequest,
    SolverParams,
    build_hypergraph,
    random_deployment,
    solve_min_power_multicast,
)
from .tables import WIDE_RANGE
from .waterfill import Band, LinkOperatingPoint, integrate, solve_capacity_point, solve_snr_point

SEVERE_SIR_DB = 3.0
NO_INTERFERENCE = math.inf


@dataclass(frozen=True)
class ActiveLink:
    tx: object                  # transmitter id
    rx: object                  # intended receiver id
    tx_xy: tuple[float, float]
    rx_xy: tuple[float, float]
    point: LinkOperatingPoint   # transmit psd and band
    theta: float = 1.0

    def __post_init__(self):
        if self.point.band.is_empty or not self.point.P > 0:
            raise ValueError("an active link needs a non-empty band and positive power")

    @property
    def band(self) -> Band:
        return self.point.band


def band_overlap(b1: Band, b2: Band) -> Band:
    return b1.intersect(b2)


def _distance(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def received_power(point: LinkOperatingPoint, band: Band, d: float, env: EnvironmentParams) -> float:
    """Power of ``point``'s transmit psd over ``band`` after propagating ``d`` km."""
    total = 0.0
    for lo, hi in band.intervals:
        total += integrate(lambda f: point.signal_psd(f) / path_loss(d, f, env), lo, hi, rtol=1e-8)
    return 1000.0 * total


def sir_db(victim: ActiveLink, interferers, env: EnvironmentParams = EnvironmentParams()) -> float:
    """SIR at the victim's receiver in dB; ``NO_INTERFERENCE`` if nothing overlaps.

    Interferers transmitting from the victim's receiver or its own
    transmitter are ignored.
    """
    d_sig = _distance(victim.tx_xy, victim.rx_xy)
    signal = received_power(victim.point, victim.band, d_sig, env)
    noise = 0.0
    for link in interferers:
        if link.tx in (victim.rx, victim.tx):
            continue
        ov = band_overlap(victim.band, link.band)
        if ov.is_empty:
            continue
        noise += received_power(link.point, ov, _distance(link.tx_xy, victim.rx_xy), env)
    if noise <= 0:
        return NO_INTERFERENCE
    return 10.0 * math.log10(signal / noise)


# -- deployment trials -------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    scheme: int = 1             # 1 capacity links, 2 duty cycled, 3 SNR target links
    n_nodes: int = 5
    side_km: float = 5.0
    rate: float = 0.1
    theta: float = 1.0
    snr_db: float | None = None
    epochs: int = 100
    min_sep_km: float = 0.01
    env: EnvironmentParams = EnvironmentParams()

    def __post_init__(self):
        if self.scheme not in (1, 2, 3):
            raise ValueError(f"unknown scheme {self.scheme}")
        if self.scheme == 3 and self.snr_db is None:
            raise ValueError("scheme 3 needs an SNR target")
        if self.scheme == 1 and self.theta != 1.0:
            raise ValueError("scheme 1 runs at full duty cycle")


def _links_for_trial(sc: Scenario, rng: np.random.Generator):
    dep = random_deployment(sc.n_nodes, sc.side_km, rng, sc.min_sep_km)
    src, dst = (int(v) for v in rng.choice(sc.n_nodes, size=2, replace=False))
    theta = sc.theta if sc.scheme == 2 else 1.0
    hg = build_hypergraph(dep)
    req = MulticastRequest(dep.ids[src], (dep.ids[dst],), sc.rate, theta)
    sol = solve_min_power_multicast(hg, req, CompleteCost(sc.env), SolverParams())
    points = {}
    for a, z in sol.z.items():
        l = hg.arcs[a].distance
        if sc.scheme == 3:
            points[a] = solve_snr_point(l, sc.snr_db, sc.env, f_range=WIDE_RANGE)
        else:
            points[a] = solve_capacity_point(l, z / theta, sc.env, f_range=WIDE_RANGE)
    links, owner = [], []
    for (_, a, j), flow in sorted(sol.x.items()):
        if flow <= 0:
            continue
        tail = hg.arcs[a].tail
        links.append(ActiveLink(dep.ids[tail], dep.ids[j], tuple(dep.xy[tail]), tuple(dep.xy[j]),
                                points[a], theta))
        owner.append(a)
    return links, owner, sorted(points), points, dep, hg


def _interference_matrix(links, owner, arcs, points, dep, hg, env):
    """Signal per link and interference from each transmitting hyperarc."""
    S = np.empty(len(links))
    I = np.zeros((len(links), len(arcs)))
    for v, link in enumerate(links):
        S[v] = received_power(link.point, link.band, _distance(link.tx_xy, link.rx_xy), env)
        for k, a in enumerate(arcs):
            tx = dep.ids[hg.arcs[a].tail]
            if tx in (link.rx, link.tx):
                continue
            ov = band_overlap(link.band, points[a].band)
            if ov.is_empty:
                continue
            I[v, k] = received_power(points[a], ov, _distance(tuple(dep.xy[hg.arcs[a].tail]), link.rx_xy), env)
    return S, I


def trial_is_severe(sc: Scenario, rng: np.random.Generator) -> bool:
    links, owner, arcs, points, dep, hg = _links_for_trial(sc, rng)
    if not links:
        return False
    S, I = _interference_matrix(links, owner, arcs, points, dep, hg, sc.env)
    col = np.array([arcs.index(a) for a in owner])
    thr = 10.0 ** (SEVERE_SIR_DB / 10.0)
    if sc.scheme != 2 or sc.theta >= 1.0:
        return bool(np.any(S < thr * I.sum(axis=1)))
    for _ in range(sc.epochs):
        active = rng.random(len(arcs)) < sc.theta
        victims = active[col]
        if not victims.any():
            continue
        noise = I[:, active].sum(axis=1)
        if np.any(victims & (S < thr * noise)):
            return True
    return False


def _run_trial(args):
    sc, seed, idx = args
    rng = np.random.default_rng([seed, idx])
    try:
        return trial_is_severe(sc, rng)
    except (InfeasibleError, ValueError, RuntimeError):
        return None


@dataclass(frozen=True)
class RateResult:
    scheme: int
    param: float
    n_nodes: int
    trials: int
    severe: int
    failed: int

    @property
    def percent(self) -> float:
        return 100.0 * self.severe / self.trials if self.trials else math.nan

    @property
    def ci(self) -> tuple[float, float]:
        if not self.trials:
            return (math.nan, math.nan)
        ci = binomtest(self.severe, self.trials).proportion_ci(0.95, method="wilson")
        return 100.0 * ci.low, 100.0 * ci.high


def severe_interference_rate(sc: Scenario, n_trials: int, seed: int, workers: int = 1) -> RateResult:
    """Fraction of deployments with at least one link below 3 dB SIR."""
    if n_trials < 1:
        raise ValueError("need at least one trial")
    jobs = [(sc, seed, i) for i in range(n_trials)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            out = list(ex.map(_run_trial, jobs, chunksize=16))
    else:
        out = [_run_trial(j) for j in jobs]
    done = [r for r in out if r is not None]
    param = sc.snr_db if sc.scheme == 3 else sc.theta
    return RateResult(sc.scheme, float(param), sc.n_nodes, len(done), int(sum(done)), len(out) - len(done))


SWEEP_COLUMNS = ["scheme", "theta_or_snr", "n_nodes", "trials", "severe_percent", "ci_low", "ci_high"]


def write_sweep_csv(path, results) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in results:
            lo, hi = r.ci
            w.writerow([r.scheme, repr(r.param), r.n_nodes, r.trials,
                        repr(r.percent), repr(lo), repr(hi)])
