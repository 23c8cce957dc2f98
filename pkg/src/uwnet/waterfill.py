"""Waterfilling evaluation of the point-to-point acoustic link.

For a distance ``l`` and a water level ``K`` the transmission band is the set
of frequencies where ``A(l, f) N(f) <= K``. Capacity, power and SNR follow by
integrating over that band. Frequencies are in kHz, capacities in kbps and
powers in uPa^2 (psd integrated over Hz).

Internally the level is handled as ``x = ln K`` and the noise floor as
``g(f) = ln A(l, f) N(f)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq

from . import constants as K_
from .channel import (
    EnvironmentParams,
    LN10_OVER_10,
    absorption_db_per_km,
    noise_psd,
    optimal_frequency,
)

LN2 = math.log(2.0)
HZ_PER_KHZ = 1000.0
K_CAP = 1e20
DEFAULT_ENV = EnvironmentParams()
DEFAULT_RANGE = (K_.F_MIN_KHZ, K_.F_MAX_KHZ)

_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)


class IntegrationError(RuntimeError):
    pass


class UnreachableTargetError(ValueError):
    pass


class BandTruncatedError(ValueError):
    """The band hits the edge of the frequency search range."""


def integrate(func, a: float, b: float, rtol: float = 1e-10, max_depth: int = 30) -> float:
    """Adaptive Gauss-Legendre quadrature of a vectorised ``func`` on [a, b]."""
    if b <= a:
        return 0.0

    def panel(lo, hi):
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        return half * float(np.dot(_GL_W, func(mid + half * _GL_X)))

    whole = panel(a, b)
    total = 0.0
    stack = [(a, b, whole, 0)]
    scale = abs(whole)
    while stack:
        lo, hi, est, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        left, right = panel(lo, mid), panel(mid, hi)
        if abs(left + right - est) <= rtol * max(scale, abs(left + right)) or (hi - lo) < 1e-14 * max(
            abs(a), abs(b), 1.0
        ):
            total += left + right
            continue
        if depth >= max_depth:
            raise IntegrationError(
                f"quadrature did not converge on [{lo:.6g}, {hi:.6g}] "
                f"(estimate {left + right:.6g}, previous {est:.6g})"
            )
        stack.append((mid, hi, right, depth + 1))
        stack.append((lo, mid, left, depth + 1))
    return total


@dataclass(frozen=True)
class Band:
    """Union of disjoint, ascending frequency intervals in kHz."""

    intervals: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        prev_end = -math.inf
        for lo, hi in self.intervals:
            if not (lo < hi < math.inf):
                raise ValueError(f"invalid interval ({lo}, {hi})")
            if lo <= prev_end:
                raise ValueError("band intervals must be disjoint and sorted")
            prev_end = hi

    @property
    def width(self) -> float:
        return sum(hi - lo for lo, hi in self.intervals)

    @property
    def is_empty(self) -> bool:
        return not self.intervals

    @property
    def f_ini(self) -> float:
        return self.intervals[0][0] if self.intervals else math.nan

    @property
    def f_end(self) -> float:
        return self.intervals[-1][1] if self.intervals else math.nan

    @property
    def edges(self) -> list[float]:
        return [e for iv in self.intervals for e in iv]

    def contains(self, f: float) -> bool:
        return any(lo <= f <= hi for lo, hi in self.intervals)

    def intersect(self, other: "Band") -> "Band":
        out = []
        i = j = 0
        a, b = self.intervals, other.intervals
        while i < len(a) and j < len(b):
            lo = max(a[i][0], b[j][0])
            hi = min(a[i][1], b[j][1])
            if lo < hi:
                out.append((lo, hi))
            if a[i][1] < b[j][1]:
                i += 1
            else:
                j += 1
        return Band(tuple(out))


class LinkProfile:
    """Noise floor ``g(f) = ln A(l, f) N(f)`` of one link, with band helpers."""

    def __init__(self, l: float, env: EnvironmentParams = DEFAULT_ENV,
                 f_range: tuple[float, float] = DEFAULT_RANGE, n_grid: int = 400):
        if not l > 0:
            raise ValueError(f"distance must be positive, got {l}")
        lo, hi = f_range
        if not (0 < lo < hi < math.inf):
            raise ValueError(f"bad frequency search range {f_range!r}")
        self.l = float(l)
        self.env = env
        self.f_range = (float(lo), float(hi))
        self.f0 = optimal_frequency(l, env, f_range)
        grid = np.geomspace(lo, hi, n_grid)
        self.grid = np.unique(np.append(grid, self.f0))
        self.g_grid = self.g(self.grid)
        self.g_min = float(self.g(self.f0))
        # grid minimum can undercut the refined minimum by rounding only
        self.g_min = min(self.g_min, float(self.g_grid.min()))

    # -- pointwise physics (natural-log domain) --
    def ln_loss(self, f, l=None):
        l = self.l if l is None else l
        f = np.asarray(f, dtype=float)
        return LN10_OVER_10 * (10.0 * self.env.k * math.log10(l / self.env.l_ref)
                               + l * absorption_db_per_km(f))

    def ln_noise(self, f):
        return np.log(noise_psd(np.asarray(f, dtype=float), self.env))

    def g(self, f, l=None):
        return self.ln_loss(f, l) + self.ln_noise(f)

    # -- band --
    def band(self, x: float, strict: bool = True) -> Band:
        """Band where g(f) <= x; ``strict`` rejects truncation by the range."""
        below = self.g_grid <= x
        if not below.any():
            return Band()
        idx = np.flatnonzero(below)
        runs = np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1)
        grid = self.grid
        h = lambda f: float(self.g(f)) - x  # noqa: E731
        out = []
        for run in runs:
            i, j = int(run[0]), int(run[-1])
            if i == 0 or j == len(grid) - 1:
                if strict:
                    raise BandTruncatedError(
                        f"band at l={self.l} km reaches the search range {self.f_range} kHz"
                    )
            lo = grid[0] if i == 0 else brentq(h, grid[i - 1], grid[i], xtol=1e-13, rtol=1e-13)
            hi = grid[-1] if j == len(grid) - 1 else brentq(h, grid[j], grid[j + 1], xtol=1e-13, rtol=1e-13)
            if hi > lo:
                out.append((float(lo), float(hi)))
        return Band(tuple(out))

    # -- integrals over a band --
    def capacity(self, x: float, band: Band | None = None) -> float:
        band = self.band(x) if band is None else band
        return sum(integrate(lambda f: (x - self.g(f)) / LN2, lo, hi) for lo, hi in band.intervals)

    def power(self, x: float, band: Band | None = None) -> float:
        band = self.band(x) if band is None else band
        K = math.exp(x)
        return HZ_PER_KHZ * sum(
            integrate(lambda f: K - np.exp(self.g(f)), lo, hi) for lo, hi in band.intervals
        )

    def snr(self, x: float, band: Band | None = None) -> float:
        band = self.band(x) if band is None else band
        if band.is_empty:
            return 0.0
        K = math.exp(x)
        num = sum(integrate(lambda f: K * np.exp(-self.ln_loss(f)) - np.exp(self.ln_noise(f)), lo, hi)
                  for lo, hi in band.intervals)
        den = sum(integrate(lambda f: np.exp(self.ln_noise(f)), lo, hi) for lo, hi in band.intervals)
        return num / den


@lru_cache(maxsize=8192)
def link_profile(l: float, env: EnvironmentParams = DEFAULT_ENV,
                 f_range: tuple[float, float] = DEFAULT_RANGE) -> LinkProfile:
    return LinkProfile(float(l), env, f_range)


@dataclass(frozen=True)
class LinkOperatingPoint:
    l: float
    C: float
    K: float
    band: Band
    P: float
    snr: float
    env: EnvironmentParams = field(default=DEFAULT_ENV, compare=False)

    @property
    def P_db(self) -> float:
        return 10.0 * math.log10(self.P) if self.P > 0 else -math.inf

    @property
    def K_db(self) -> float:
        return 10.0 * math.log10(self.K)

    @property
    def snr_db(self) -> float:
        return 10.0 * math.log10(self.snr) if self.snr > 0 else -math.inf

    def signal_psd(self, f):
        """S(f) = K - A N inside the band, zero outside."""
        f = np.asarray(f, dtype=float)
        prof = link_profile(self.l, self.env)
        s = self.K - np.exp(prof.g(f))
        inside = np.zeros(f.shape, dtype=bool)
        for lo, hi in self.band.intervals:
            inside |= (f >= lo) & (f <= hi)
        return np.where(inside, np.maximum(s, 0.0), 0.0)


def _point(prof: LinkProfile, x: float, C: float | None = None) -> LinkOperatingPoint:
    band = prof.band(x)
    cap = prof.capacity(x, band) if C is None else C
    return LinkOperatingPoint(
        l=prof.l, C=cap, K=math.exp(x), band=band,
        P=prof.power(x, band), snr=prof.snr(x, band), env=prof.env,
    )


def band_at_level(l: float, K: float, env: EnvironmentParams = DEFAULT_ENV,
                  f_range: tuple[float, float] = DEFAULT_RANGE) -> Band:
    """Frequencies (kHz) where A(l, f) N(f) <= K."""
    if not K > 0:
        return Band()
    return link_profile(l, env, f_range).band(math.log(K))


def capacity_given_level(l: float, K: float, env: EnvironmentParams = DEFAULT_ENV) -> float:
    if not K > 0:
        return 0.0
    return link_profile(l, env).capacity(math.log(K))


def power_given_level(l: float, K: float, env: EnvironmentParams = DEFAULT_ENV) -> float:
    if not K > 0:
        return 0.0
    return link_profile(l, env).power(math.log(K))


def snr_given_level(l: float, K: float, env: EnvironmentParams = DEFAULT_ENV) -> float:
    if not K > 0:
        return 0.0
    return link_profile(l, env).snr(math.log(K))


def _expand_upper(prof: LinkProfile, fn, target: float) -> float:
    """Smallest tried level with ``fn >= target``; backs off when the band truncates."""
    x_cap = math.log(K_CAP)
    good, dx = prof.g_min, 1e-3
    while True:
        x = prof.g_min + dx
        if x > x_cap:
            raise UnreachableTargetError(
                f"target {target:g} not reached at l={prof.l} km below the water-level cap {K_CAP:g}"
            )
        try:
            if fn(x) >= target:
                return x
        except BandTruncatedError:
            break
        good, dx = x, dx * 4.0
    bad = x
    for _ in range(60):
        mid = 0.5 * (good + bad)
        try:
            if fn(mid) >= target:
                return mid
            good = mid
        except BandTruncatedError:
            bad = mid
    raise BandTruncatedError(
        f"target {target:g} at l={prof.l} km needs a band wider than {prof.f_range} kHz"
    )


def solve_capacity_point(l: float, C_target: float, env: EnvironmentParams = DEFAULT_ENV,
                         rtol: float = 1e-10, method: str = "newton",
                         sweep_step: float = 1e-4,
                         f_range: tuple[float, float] = DEFAULT_RANGE) -> LinkOperatingPoint:
    """Water level, band, power and SNR achieving capacity ``C_target`` (kbps).

    ``method="sweep"`` raises ``ln K`` in fixed steps of ``sweep_step`` until
    the target is met; it is slow and only meant for debugging.
    """
    if not C_target >= 0:
        raise ValueError(f"capacity must be non-negative, got {C_target}")
    prof = link_profile(l, env, tuple(f_range))
    if C_target == 0:
        return LinkOperatingPoint(l=prof.l, C=0.0, K=math.exp(prof.g_min), band=Band(),
                                  P=0.0, snr=0.0, env=env)
    if method == "sweep":
        x = prof.g_min
        while prof.capacity(x) < C_target:
            x += sweep_step
            if x > math.log(K_CAP):
                raise UnreachableTargetError(f"capacity {C_target} kbps unreachable at l={l} km")
        return _point(prof, x)
    if method != "newton":
        raise ValueError(f"unknown method {method!r}")

    lo, hi = prof.g_min, _expand_upper(prof, prof.capacity, C_target)
    x = hi
    for _ in range(200):
        band = prof.band(x)
        c = prof.capacity(x, band)
        err = c - C_target
        if abs(err) <= rtol * C_target:
            break
        if err > 0:
            hi = x
        else:
            lo = x
        step = err * LN2 / band.width if band.width > 0 else math.inf
        x_new = x - step
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if x_new == x:
            break
        x = x_new
    else:
        raise IntegrationError(f"water-level search did not converge for l={l}, C={C_target}")
    # report the requested rate (met to rtol) so grids keep exact keys
    return _point(prof, x, C=float(C_target))


def solve_snr_point(l: float, snr_target_db: float, env: EnvironmentParams = DEFAULT_ENV,
                    xtol: float = 1e-13,
                    f_range: tuple[float, float] = DEFAULT_RANGE) -> LinkOperatingPoint:
    """Operating point whose SNR equals ``snr_target_db``."""
    prof = link_profile(l, env, tuple(f_range))
    target = 10.0 ** (snr_target_db / 10.0)
    hi = _expand_upper(prof, prof.snr, target)
    x = brentq(lambda x: prof.snr(x) - target, prof.g_min, hi, xtol=xtol, rtol=4 * np.finfo(float).eps)
    return _point(prof, x)


def rescale_spreading(point: LinkOperatingPoint, k_old: float, k_new: float) -> LinkOperatingPoint:
    """Move a solved point to another spreading factor; the band is unchanged."""
    env_new = point.env.replace(k=k_new)
    factor = (point.l / point.env.l_ref) ** (k_new - k_old)
    return LinkOperatingPoint(l=point.l, C=point.C, K=point.K * factor, band=point.band,
                              P=point.P * factor, snr=point.snr, env=env_new)


def capacity_cross_distance(l_prime: float, donor: LinkOperatingPoint,
                            env: EnvironmentParams | None = None) -> float:
    """Rate (kbps) decodable at distance ``l_prime`` using the donor's band and psd."""
    if not l_prime > 0:
        raise ValueError(f"distance must be positive, got {l_prime}")
    env = donor.env if env is None else env
    prof = link_profile(donor.l, env)
    K = donor.K

    def integrand(f):
        s = K - np.exp(prof.g(f))
        return np.log2(1.0 + np.maximum(s, 0.0) / np.exp(prof.g(f, l_prime)))

    return sum(integrate(integrand, lo, hi) for lo, hi in donor.band.intervals)


# -- grid sweeps ------------------------------------------------------------

SURFACE_COLUMNS = ["l_km", "C_kbps", "interval", "P_dB", "f_ini_khz", "f_end_khz",
                   "B_khz", "K_dB", "SNR_dB"]


def sweep_surface(l_grid: Iterable[float], C_grid: Iterable[float],
                  env: EnvironmentParams = DEFAULT_ENV,
                  f_range: tuple[float, float] = DEFAULT_RANGE) -> list[LinkOperatingPoint]:
    l_grid, C_grid = list(l_grid), list(C_grid)
    if not l_grid or not C_grid:
        raise ValueError("sweep grids must be non-empty")
    return [solve_capacity_point(l, C, env, f_range=f_range) for C in C_grid for l in l_grid]


def surface_rows(points: Sequence[LinkOperatingPoint]) -> list[dict]:
    rows = []
    for p in points:
        intervals = p.band.intervals or ((math.nan, math.nan),)
        for i, (lo, hi) in enumerate(intervals):
            rows.append({
                "l_km": p.l, "C_kbps": p.C, "interval": i, "P_dB": p.P_db,
                "f_ini_khz": lo, "f_end_khz": hi, "B_khz": hi - lo,
                "K_dB": p.K_db, "SNR_dB": p.snr_db,
            })
    return rows


def write_surface_csv(path, points: Sequence[LinkOperatingPoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SURFACE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in surface_rows(points):
            w.writerow({k: repr(float(v)) if k != "interval" else v for k, v in row.items()})


def read_surface_csv(path) -> list[dict]:
    """Rows grouped per (l, C): P_dB, f_ini/f_end of the outermost edges, total B."""
    grouped: dict[tuple[float, float], dict] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (float(row["l_km"]), float(row["C_kbps"]))
            g = grouped.setdefault(key, {"l_km": key[0], "C_kbps": key[1],
                                         "P_dB": float(row["P_dB"]), "K_dB": float(row["K_dB"]),
                                         "SNR_dB": float(row["SNR_dB"]), "f_ini_khz": math.inf,
                                         "f_end_khz": -math.inf, "B_khz": 0.0})
            g["f_ini_khz"] = min(g["f_ini_khz"], float(row["f_ini_khz"]))
            g["f_end_khz"] = max(g["f_end_khz"], float(row["f_end_khz"]))
            g["B_khz"] += float(row["B_khz"])
    return list(grouped.values())
