"""Independent reference computations used only by the tests."""

from __future__ import annotations

import itertools
import math

import mpmath
import numpy as np
from scipy.optimize import linprog


def psk_bit_error(snr_linear: float) -> float:
    """Q(sqrt(2 snr)) through mpmath's erfc."""
    return float(mpmath.erfc(mpmath.sqrt(snr_linear)) / 2)


def thorp_db_per_km(f):
    f2 = f * f
    return 0.11 * f2 / (1 + f2) + 44 * f2 / (4100 + f2) + 2.75e-4 * f2 + 0.003


def noise_db(f, s=0.5, w=0.0):
    lf = np.log10(f)
    parts = [
        17 - 30 * lf,
        40 + 20 * (s - 0.5) + 26 * lf - 60 * np.log10(f + 0.03),
        50 + 7.5 * math.sqrt(w) + 20 * lf - 40 * np.log10(f + 0.4),
        -15 + 20 * lf,
    ]
    return 10 * np.log10(sum(10 ** (p / 10) for p in parts))


def dense_waterfill(l, K, k=1.5, s=0.5, w=0.0, f_lo=0.1, f_hi=200.0, n=400_001):
    """Capacity (kbps) and power at level K by brute-force trapezoid on a fine grid."""
    f = np.linspace(f_lo, f_hi, n)
    an_db = 10 * k * np.log10(l) + l * thorp_db_per_km(f) + noise_db(f, s, w)
    an = 10 ** (an_db / 10)
    cap = np.where(an < K, np.log2(K / an), 0.0)
    pw = np.where(an < K, K - an, 0.0)
    return float(np.trapezoid(cap, f)), float(1000 * np.trapezoid(pw, f))


def pwl_flow_lp(arcs, n, source, sinks, R, cost, steps):
    """Delta-discretised convex min-cost multicast as a linear program.

    ``arcs`` is a list of (tail, heads, distance); ``cost(l, z)`` the arc
    cost. Each arc rate is split into ``steps`` segments of width R/steps
    with slope equal to the chord of ``cost`` over that segment.
    """
    delta = R / steps
    na, T = len(arcs), len(sinks)
    seg0 = 0
    nseg = na * steps
    rx = [(a, j) for a, (_, heads, _) in enumerate(arcs) for j in heads]
    x0 = nseg
    nvar = nseg + T * len(rx)
    c = np.zeros(nvar)
    for a, (_, _, l) in enumerate(arcs):
        vals = [cost(l, k * delta) for k in range(steps + 1)]
        for k in range(steps):
            c[seg0 + a * steps + k] = (vals[k + 1] - vals[k]) / delta
    A_ub, b_ub, A_eq, b_eq = [], [], [], []
    for t_idx, t in enumerate(sinks):
        for a in range(na):
            row = np.zeros(nvar)
            for r, (aa, j) in enumerate(rx):
                if aa == a:
                    row[x0 + t_idx * len(rx) + r] = 1.0
            row[seg0 + a * steps: seg0 + (a + 1) * steps] = -1.0
            A_ub.append(row)
            b_ub.append(0.0)
        for i in range(n):
            if i == t:
                continue
            row = np.zeros(nvar)
            for r, (a, j) in enumerate(rx):
                if arcs[a][0] == i:
                    row[x0 + t_idx * len(rx) + r] += 1.0
                if j == i:
                    row[x0 + t_idx * len(rx) + r] -= 1.0
            A_eq.append(row)
            b_eq.append(R if i == source else 0.0)
    bounds = [(0, delta)] * nseg + [(0, None)] * (nvar - nseg)
    res = linprog(c, A_ub=np.array(A_ub), b_ub=b_ub, A_eq=np.array(A_eq), b_eq=b_eq,
                  bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(res.message)
    return float(res.fun)


def collinear_bruteforce(d, R, cost, step_frac=20):
    """Nodes at 0, d, 2d; enumerate the rate sent directly vs relayed.

    Relevant hyperarcs from the source are {1} (distance d) and {1, 2}
    (distance 2d); the relay forwards over distance d. Returns the minimum
    total power and the relayed share.
    """
    best = (math.inf, None)
    for k in range(step_frac + 1):
        relay = R * k / step_frac
        direct = R - relay
        # a direct broadcast also reaches the relay, so it can forward that too
        for m in range(k + 1):
            extra = R * m / step_frac
            z_far = direct + extra
            z_near = max(relay - extra, 0.0)
            p = 0.0
            if z_far > 0:
                p += cost(2 * d, z_far)
            if z_near > 0:
                p += cost(d, z_near)
            if relay > 0:
                p += cost(d, relay)
            if p < best[0]:
                best = (p, relay)
    return best
