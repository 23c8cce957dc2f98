"""Acoustic path loss, Thorp absorption and ambient noise.

All functions accept scalars or numpy arrays. Frequencies are in kHz,
distances in km and power spectral densities in linear units of
uPa^2 per Hz (``10 log10`` of them is dB re uPa per Hz).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from . import constants as K

LN10_OVER_10 = math.log(10.0) / 10.0


@dataclass(frozen=True)
class EnvironmentParams:
    """Propagation environment.

    k is the spreading factor, s the shipping activity in [0, 1], w the wind
    speed in m/s and l_ref the reference distance in km.
    """

    k: float = 1.5
    s: float = 0.5
    w: float = 0.0
    l_ref: float = 1.0

    def __post_init__(self):
        if not self.k >= 1.0:
            raise ValueError(f"spreading factor must be >= 1, got {self.k}")
        if not 0.0 <= self.s <= 1.0:
            raise ValueError(f"shipping activity must lie in [0, 1], got {self.s}")
        if not self.w >= 0.0:
            raise ValueError(f"wind speed must be >= 0, got {self.w}")
        if not self.l_ref > 0.0:
            raise ValueError(f"reference distance must be > 0, got {self.l_ref}")

    def replace(self, **changes) -> "EnvironmentParams":
        return EnvironmentParams(**{**self.__dict__, **changes})


def _positive(name, x):
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError(f"{name} must be strictly positive")
    return arr


def _out(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


def db_to_linear(x_db):
    return _out(np.power(10.0, np.asarray(x_db, dtype=float) / 10.0))


def linear_to_db(x):
    return _out(10.0 * np.log10(_positive("linear value", x)))


def absorption_db_per_km(f):
    """Thorp absorption coefficient in dB/km for f in kHz."""
    f = _positive("frequency", f)
    t1, t2, t3, t4, t5 = K.THORP
    f2 = f * f
    return _out(t1 * f2 / (1.0 + f2) + t2 * f2 / (t3 + f2) + t4 * f2 + t5)


def absorption_linear(f):
    """Per-km absorption factor a(f) (linear, >= 1)."""
    return db_to_linear(absorption_db_per_km(f))


def path_loss_db(l, f, env: EnvironmentParams):
    l = _positive("distance", l)
    f = _positive("frequency", f)
    return _out(10.0 * env.k * np.log10(l / env.l_ref) + l * absorption_db_per_km(f))


def path_loss(l, f, env: EnvironmentParams):
    """A(l, f) = (l / l_ref)^k a(f)^l as a linear attenuation factor."""
    return db_to_linear(path_loss_db(l, f, env))


def noise_components_db(f, env: EnvironmentParams) -> dict:
    f = _positive("frequency", f)
    lf = np.log10(f)
    t0, t1 = K.TURBULENCE
    s0, s1, s2, s3, s4 = K.SHIPPING
    w0, w1, w2, w3, w4 = K.WAVES
    h0, h1 = K.THERMAL
    return {
        "turbulence": _out(t0 + t1 * lf),
        "shipping": _out(s0 + s1 * (env.s - 0.5) + s2 * lf + s3 * np.log10(f + s4)),
        "waves": _out(w0 + w1 * math.sqrt(env.w) + w2 * lf + w3 * np.log10(f + w4)),
        "thermal": _out(h0 + h1 * lf),
    }


def noise_psd(f, env: EnvironmentParams):
    """Total ambient noise psd N(f), linear."""
    comps = noise_components_db(f, env)
    return _out(sum(np.power(10.0, np.asarray(v) / 10.0) for v in comps.values()))


def noise_psd_db(f, env: EnvironmentParams):
    return linear_to_db(noise_psd(f, env))


def noise_psd_simplified_db(f):
    f = _positive("frequency", f)
    if np.any(f > K.SIMPLE_NOISE_F_MAX_KHZ):
        raise ValueError(
            f"log-linear noise approximation only valid up to {K.SIMPLE_NOISE_F_MAX_KHZ} kHz"
        )
    return _out(K.SIMPLE_NOISE_N1_DB - K.SIMPLE_NOISE_ETA_DB_PER_DEC * np.log10(f))


def noise_psd_simplified(f):
    return db_to_linear(noise_psd_simplified_db(f))


def an_product_db(l, f, env: EnvironmentParams):
    return _out(np.asarray(path_loss_db(l, f, env)) + np.asarray(noise_psd_db(f, env)))


def an_product(l, f, env: EnvironmentParams):
    """A(l, f) N(f), the noise floor seen through the channel."""
    return db_to_linear(an_product_db(l, f, env))


def log_an_product(l, f, env: EnvironmentParams):
    """Natural log of A(l, f) N(f); the numerically preferred form."""
    return _out(LN10_OVER_10 * np.asarray(an_product_db(l, f, env)))


def optimal_frequency(
    l,
    env: EnvironmentParams,
    f_range: tuple[float, float] = (K.F_MIN_KHZ, K.F_MAX_KHZ),
    xtol: float = K.F0_XTOL_KHZ,
    n_scan: int = 400,
) -> float:
    """Frequency in kHz minimising A(l, f) N(f) within ``f_range``."""
    lo, hi = f_range
    if not (0 < lo < hi) or n_scan < 3:
        raise ValueError(f"bad frequency search range {f_range!r}")
    _positive("distance", l)
    grid = np.geomspace(lo, hi, n_scan)
    vals = an_product_db(l, grid, env)
    i = int(np.argmin(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, n_scan - 1)]
    res = minimize_scalar(
        lambda f: float(an_product_db(l, f, env)),
        bounds=(a, b),
        method="bounded",
        options={"xatol": xtol},
    )
    return float(res.x)
