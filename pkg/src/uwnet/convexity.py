"""Convexity checks for the power-versus-rate relation.

The complete (waterfill) model is certified on a grid through divided
differences. The closed-form power model ``P = exp(g)`` with
``g = a1(z) ln l + q a2(z)``, ``q = ln10/10``, is increasing iff ``g' > 0`` and
convex iff ``g'' + g'^2 >= 0``. Both are polynomial in ``ln l``, which gives a
closed-form lower bound on the distance above which convexity holds.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .approxfit import ModelCoeffs, eval_power_model
from .channel import EnvironmentParams
from .waterfill import solve_capacity_point

Q = math.log(10.0) / 10.0
_C = 10.0 / math.log(10.0)


class SignConditionError(ValueError):
    """Coefficients do not satisfy the sign pattern the distance bound relies on."""


# -- complete model -------------------------------------------------------------


@dataclass
class ConvexityReport:
    grid: dict
    min_second_diff: float
    max_second_diff: float
    violations: list = field(default_factory=list)
    holes: list = field(default_factory=list)
    min_convex_distance_m: float | None = None

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_json(self) -> str:
        d = asdict(self)
        d["pass"] = self.passed
        return json.dumps(d, sort_keys=True, indent=2)


def _strict_increasing(name, a):
    a = np.asarray(a, dtype=float)
    if a.ndim != 1 or a.size == 0 or np.any(np.diff(a) <= 0):
        raise ValueError(f"{name} must be a strictly increasing 1-D grid")
    return a


def report_from_surface(l_grid, C_grid, P, tol: float = 1e-6) -> ConvexityReport:
    """Check monotonicity and convexity in C of a tabulated P[i_l, j_C].

    A violation of convexity is a second divided difference below
    ``-tol`` times the larger adjacent slope; NaN entries are holes.
    """
    l_grid = _strict_increasing("l_grid", l_grid)
    C_grid = _strict_increasing("C_grid", C_grid)
    if C_grid.size < 3:
        raise ValueError("at least 3 rates are needed to take second differences")
    P = np.asarray(P, dtype=float)
    if P.shape != (l_grid.size, C_grid.size):
        raise ValueError("surface shape does not match the grids")
    h = np.diff(C_grid)
    violations, holes = [], []
    lo, hi = math.inf, -math.inf
    for i, l in enumerate(l_grid):
        for j in np.flatnonzero(np.isnan(P[i])):
            holes.append([float(l), float(C_grid[j])])
        slope = np.diff(P[i]) / h
        for j, s in enumerate(slope):
            if not np.isnan(s) and not s > 0:
                violations.append({"l": float(l), "C": float(C_grid[j + 1]),
                                   "kind": "first", "value": float(s)})
        for j in range(1, C_grid.size - 1):
            s0, s1 = slope[j - 1], slope[j]
            if np.isnan(s0) or np.isnan(s1):
                continue
            d2 = (s1 - s0) / max(abs(s0), abs(s1))
            lo, hi = min(lo, d2), max(hi, d2)
            if d2 < -tol:
                violations.append({"l": float(l), "C": float(C_grid[j]),
                                   "kind": "second", "value": float(d2)})
    grid = {"l": [float(v) for v in l_grid], "C": [float(v) for v in C_grid], "tol": tol}
    return ConvexityReport(grid, float(lo), float(hi), violations, holes)


def verify_complete_model_convexity(l_grid, C_grid, env: EnvironmentParams = EnvironmentParams(),
                                    tol: float = 1e-6) -> ConvexityReport:
    l_grid = _strict_increasing("l_grid", l_grid)
    C_grid = _strict_increasing("C_grid", C_grid)
    if C_grid[0] <= 0:
        raise ValueError("rates must be positive")
    if C_grid.size < 3:
        raise ValueError("at least 3 rates are needed to take second differences")
    P = np.full((l_grid.size, C_grid.size), np.nan)
    for i, l in enumerate(l_grid):
        for j, C in enumerate(C_grid):
            try:
                P[i, j] = solve_capacity_point(float(l), float(C), env).P
            except (ValueError, RuntimeError):
                pass
    return report_from_surface(l_grid, C_grid, P, tol)


# -- closed-form model ------------------------------------------------------------


def param_derivatives(z, coeffs: ModelCoeffs):
    """(da1, dda1, da2, dda2) of the power template with respect to z."""
    if coeffs.template != "power":
        raise ValueError("derivatives are defined for the power template only")
    z = np.asarray(z, dtype=float)
    a1, a2, _ = coeffs.alpha
    b1, b2, _ = coeffs.beta
    lz = np.log(z + 1.0)
    da1 = a2 + 2.0 * a1 * z
    dda1 = 2.0 * a1 * np.ones_like(z)
    da2 = b2 * _C / z + 2.0 * b1 * _C**2 * lz / (z + 1.0)
    dda2 = -b2 * _C / z**2 + 2.0 * b1 * _C**2 * (1.0 - lz) / (z + 1.0) ** 2
    return da1, dda1, da2, dda2


def power_model_derivatives(l, z, coeffs: ModelCoeffs):
    """P, dP/dz and d2P/dz2 of the closed-form power model."""
    da1, dda1, da2, dda2 = param_derivatives(z, coeffs)
    ln_l = np.log(l)
    P = eval_power_model(l, z, coeffs)
    g1 = da1 * ln_l + Q * da2
    g2 = dda1 * ln_l + Q * dda2
    return P, P * g1, P * (g2 + g1**2)


def signs_ok(da1, dda1, da2, dda2) -> bool:
    return bool(np.all(da1 > 0) and np.all(dda1 < 0) and np.all(da2 > 0) and np.all(dda2 < 0))


@dataclass(frozen=True)
class ApproxConvexity:
    increasing: bool
    convex: bool
    sign_warning: bool


def check_approx_convexity(l: float, z: float, coeffs: ModelCoeffs) -> ApproxConvexity:
    """Evaluate the increasing (linear) and convex (quadratic) constraints in ln l."""
    if not l > 0 or not z > 0:
        raise ValueError("distance and rate must be positive")
    da1, dda1, da2, dda2 = (float(v) for v in param_derivatives(z, coeffs))
    L = math.log(l)
    g1 = da1 * L + Q * da2
    quad = da1**2 * L**2 + L * (2 * Q * da1 * da2 + dda1) + Q * dda2 + (Q * da2) ** 2
    return ApproxConvexity(g1 > 0, quad >= 0, not signs_ok(da1, dda1, da2, dda2))


def convex_distance_bound(da1, dda1, da2, dda2):
    """Lower bound on ln l (l in km) beyond which the model is increasing and convex.

    When the quadratic in ln l has no real roots it is positive everywhere
    and only the increasing condition binds.
    """
    da1, dda1, da2, dda2 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (da1, dda1, da2, dda2)))
    disc = Q * (da2 * dda1 / da1**3 - dda2 / da1**2) + dda1**2 / (4.0 * da1**4)
    root = np.sqrt(np.where(disc > 0, disc, 0.0))
    extra = np.where(disc > 0, np.maximum(0.0, -dda1 / (2.0 * da1**2) + root), 0.0)
    out = -Q * da2 / da1 + extra
    return float(out) if out.ndim == 0 else out


def min_convex_distance(z_range=(1e-3, 2.0), coeffs: ModelCoeffs | None = None, n: int = 2000) -> float:
    """Smallest distance in metres above which convexity holds for every z in range."""
    if coeffs is None:
        raise ValueError("coefficients are required")
    lo, hi = z_range
    if not 0 < lo < hi:
        raise ValueError(f"bad rate range {z_range!r}")
    z = np.linspace(lo, hi, n)
    d = param_derivatives(z, coeffs)
    if not signs_ok(*d):
        raise SignConditionError("coefficients violate the sign conditions of the distance bound")
    return float(1000.0 * math.exp(np.max(convex_distance_bound(*d))))
