"""Closed-form approximations of power, upper band edge and bandwidth.

Every template has the shape ``Q(l, C) = l^{a1(C)} 10^{a2(C)/10}`` with l in km
and C in kbps; they differ only in the polynomial bases of a1 and a2:

========  =====================================  =================================
template  a1(C)                                  a2(C)
========  =====================================  =================================
power     a3 + a2 C + a1 C^2                     b3 + b2 L + b1 (10 log10(C+1))^2
fend      a3 + a2 L + a1 L^2                     b3 + b2 L + b1 L^2
band      a4 + a3 L + a2 L^2 + a1 L^3            b3 + b2 L + b1 L^2
========  =====================================  =================================

with ``L = 10 log10 C``. Coefficients are stored highest order first,
i.e. ``alpha = (a1, a2, a3[, a4])`` as in the published tables.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

TEMPLATES = ("power", "fend", "band")
_N_ALPHA = {"power": 3, "fend": 3, "band": 4}


def _db10(x):
    return 10.0 * np.log10(x)


def _a1_basis(template: str, C):
    C = np.asarray(C, dtype=float)
    if template == "power":
        return np.stack([C**2, C, np.ones_like(C)], axis=-1)
    L = _db10(C)
    if template == "fend":
        return np.stack([L**2, L, np.ones_like(L)], axis=-1)
    if template == "band":
        return np.stack([L**3, L**2, L, np.ones_like(L)], axis=-1)
    raise ValueError(f"unknown template {template!r}")


def _a2_basis(template: str, C):
    C = np.asarray(C, dtype=float)
    L = _db10(C)
    if template == "power":
        return np.stack([_db10(C + 1.0) ** 2, L, np.ones_like(L)], axis=-1)
    if template in ("fend", "band"):
        return np.stack([L**2, L, np.ones_like(L)], axis=-1)
    raise ValueError(f"unknown template {template!r}")


@dataclass(frozen=True)
class ModelCoeffs:
    template: str
    alpha: tuple[float, ...]
    beta: tuple[float, float, float]
    mse_a1: float = math.nan
    mse_a2: float = math.nan
    case: str = ""
    k: float = 1.5
    s: float = 0.5
    w: float = 0.0

    def __post_init__(self):
        if self.template not in TEMPLATES:
            raise ValueError(f"unknown template {self.template!r}")
        if len(self.alpha) != _N_ALPHA[self.template] or len(self.beta) != 3:
            raise ValueError(f"wrong number of coefficients for template {self.template!r}")
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))

    def a1(self, C):
        return _a1_basis(self.template, C) @ np.asarray(self.alpha)

    def a2(self, C):
        return _a2_basis(self.template, C) @ np.asarray(self.beta)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, allow_nan=True)

    @classmethod
    def from_json(cls, text: str | Mapping) -> "ModelCoeffs":
        d = json.loads(text) if isinstance(text, str) else dict(text)
        return cls(**d)


# Published coefficient sets, k = 1.5, s = 0.5, w = 0.
PUBLISHED_COEFFS = {
    ("1", "power"): ModelCoeffs("power", (-0.00235, 0.01565, 2.1329), (0.014798, 1.0148, 74.175),
                                2.532e-7, 5.8979e-5, case="1"),
    ("1", "fend"): ModelCoeffs("fend", (4.795e-5, 0.00246, -0.44149), (0.00171, 0.07153, 13.738),
                               3.930e-9, 3.4706e-5, case="1"),
    ("1", "band"): ModelCoeffs("band", (-5.958e-7, -2.563e-5, -0.000305, -0.30694),
                               (-5.163e-6, 0.33427, 9.6752), 6.599e-9, 2.9233e-7, case="1"),
    ("2", "power"): ModelCoeffs("power", (-5.617e-5, 0.02855, 2.9305), (0.04317, 0.90597, 76.156),
                                0.00011, 0.00010115, case="2"),
    ("2", "fend"): ModelCoeffs("fend", (-0.00019, 0.01186, -0.55076), (0.0065157, -0.032693, 14.739),
                               1.32e-7, 7.3024e-5, case="2"),
    ("2", "band"): ModelCoeffs("band", (1.696e-6, 4.252e-5, -0.00249, -0.36397),
                               (-0.0018252, 0.34788, 10.328), 7.29e-7, 0.00019414, case="2"),
}


def eval_model(l, C, coeffs: ModelCoeffs):
    """l^{a1(C)} 10^{a2(C)/10}; for the power template C = 0 gives 0."""
    l = np.asarray(l, dtype=float)
    C = np.asarray(C, dtype=float)
    if np.any(l <= 0):
        raise ValueError("distance must be positive")
    if np.any(C < 0):
        raise ValueError("capacity must be non-negative")
    zero = C == 0
    if np.any(zero) and coeffs.template != "power":
        raise ValueError(f"{coeffs.template} model undefined at C = 0")
    Cs = np.where(zero, 1.0, C)
    with np.errstate(over="ignore"):
        val = np.power(l, coeffs.a1(Cs)) * np.power(10.0, coeffs.a2(Cs) / 10.0)
    val = np.where(zero, 0.0, val)
    return float(val) if val.ndim == 0 else val


def eval_power_model(l, C, coeffs: ModelCoeffs):
    return eval_model(l, C, coeffs)


def eval_power_model_db(l, C, coeffs: ModelCoeffs):
    l = np.asarray(l, dtype=float)
    C = np.asarray(C, dtype=float)
    out = coeffs.a1(C) * _db10(l) + coeffs.a2(C)
    return float(out) if np.ndim(out) == 0 else out


def eval_fend_model(l, C, coeffs: ModelCoeffs):
    return eval_model(l, C, coeffs)


def eval_band_model(l, C, coeffs: ModelCoeffs):
    return eval_model(l, C, coeffs)


# -- fitting -----------------------------------------------------------------


@dataclass
class ParameterCurves:
    """Per-capacity log-log regression results (first fitting stage)."""

    C: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    residual_db: np.ndarray = field(default=None)


def _surface_arrays(surface, template: str):
    l, C, q = [], [], []
    for row in surface:
        get = row.get if isinstance(row, Mapping) else lambda k, r=row: _point_field(r, k)
        l.append(float(get("l_km")))
        C.append(float(get("C_kbps")))
        if template == "power":
            q.append(10.0 ** (float(get("P_dB")) / 10.0))
        elif template == "fend":
            q.append(float(get("f_end_khz")))
        else:
            q.append(float(get("f_end_khz")) - float(get("f_ini_khz")))
    return np.array(l), np.array(C), np.array(q)


def _point_field(p, key):
    return {
        "l_km": lambda: p.l, "C_kbps": lambda: p.C, "P_dB": lambda: p.P_db,
        "f_end_khz": lambda: p.band.f_end, "f_ini_khz": lambda: p.band.f_ini,
    }[key]()


def parameter_curves(surface, template: str) -> ParameterCurves:
    """Stage one: regress log10 Q on log10 l separately for every C."""
    l, C, q = _surface_arrays(surface, template)
    if np.any(~(q > 0)):
        raise ValueError("surface quantity must be positive to fit in log-log form")
    Cs = np.unique(C)
    ls = np.unique(l)
    if ls.size < 2:
        raise ValueError("degenerate grid: at least two distinct distances are required")
    if Cs.size < _N_ALPHA[template]:
        raise ValueError(f"need at least {_N_ALPHA[template]} distinct capacities")
    a1 = np.empty(Cs.size)
    a2 = np.empty(Cs.size)
    resid = np.empty(Cs.size)
    for i, c in enumerate(Cs):
        m = C == c
        if m.sum() != ls.size or not np.array_equal(np.sort(l[m]), ls):
            raise ValueError("surface is not a rectangular (l, C) grid")
        X = np.stack([np.log10(l[m]), np.ones(m.sum())], axis=-1)
        y = np.log10(q[m])
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        a1[i], a2[i] = coef[0], 10.0 * coef[1]
        resid[i] = 10.0 * np.max(np.abs(X @ coef - y))
    return ParameterCurves(C=Cs, a1=a1, a2=a2, residual_db=resid)


def fit_curves(curves: ParameterCurves, template: str, **meta) -> ModelCoeffs:
    """Stage two: least-squares fit of the a1(C), a2(C) polynomial forms."""
    A1 = _a1_basis(template, curves.C)
    A2 = _a2_basis(template, curves.C)
    alpha, *_ = np.linalg.lstsq(A1, curves.a1, rcond=None)
    beta, *_ = np.linalg.lstsq(A2, curves.a2, rcond=None)
    mse_a1 = float(np.mean((A1 @ alpha - curves.a1) ** 2))
    mse_a2 = float(np.mean((A2 @ beta - curves.a2) ** 2))
    return ModelCoeffs(template, tuple(alpha), tuple(beta), mse_a1, mse_a2, **meta)


def fit_models(surface, template: str, **meta) -> ModelCoeffs:
    """Two-stage fit of a surface (rows or operating points) to ``template``."""
    if template not in TEMPLATES:
        raise ValueError(f"unknown template {template!r}")
    return fit_curves(parameter_curves(surface, template), template, **meta)


def case_grid(case: str = "1", n_l: int = 50, n_C: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Fitting grid: log-uniform distances from 13 m, uniform capacities."""
    if case == "1":
        return np.geomspace(0.013, 10.0, n_l), np.linspace(2.0 / n_C, 2.0, n_C)
    if case == "2":
        return np.geomspace(0.013, 100.0, n_l), np.linspace(100.0 / n_C, 100.0, n_C)
    raise ValueError(f"unknown case {case!r}")


# -- wind-speed sub-model ------------------------------------------------------

COEFF_NAMES = ("alpha1", "alpha2", "alpha3", "beta1", "beta2", "beta3")


@dataclass(frozen=True)
class WindModelCoeffs:
    """gamma triples (g1, g2, g3) per power-model coefficient."""

    gammas: Mapping[str, tuple[float, float, float]]
    mse: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        missing = set(COEFF_NAMES) - set(self.gammas)
        if missing:
            raise ValueError(f"missing gamma triples for {sorted(missing)}")


PUBLISHED_WIND_COEFFS = WindModelCoeffs({
    "alpha1": (5.2669e-6, -0.000157, -0.004575),
    "alpha2": (-2.971e-5, 0.000865, 0.029306),
    "alpha3": (0.000152, 0.01809, 2.4586),
    "beta1": (9.924e-6, -0.00027, 0.012288),
    "beta2": (7.799e-6, -0.000219, 1.0118),
    "beta3": (0.068091, 1.3659, 73.144),
})


def _wind_basis(w):
    u = _db10(np.asarray(w, dtype=float) + 1.0)
    return np.stack([u**2, u, np.ones_like(u)], axis=-1)


def eval_wind_model(w: float, gammas: WindModelCoeffs) -> ModelCoeffs:
    if not w >= 0:
        raise ValueError(f"wind speed must be >= 0, got {w}")
    basis = _wind_basis(w)
    vals = {name: float(basis @ np.asarray(gammas.gammas[name])) for name in COEFF_NAMES}
    return ModelCoeffs(
        "power",
        (vals["alpha1"], vals["alpha2"], vals["alpha3"]),
        (vals["beta1"], vals["beta2"], vals["beta3"]),
        w=float(w),
    )


def fit_wind_model(per_w: Sequence[tuple[float, ModelCoeffs]]) -> WindModelCoeffs:
    """Fit gamma triples to power-model coefficients fitted at several wind speeds."""
    ws = np.array([w for w, _ in per_w], dtype=float)
    if np.unique(ws).size < 3:
        raise ValueError("the wind-speed model needs coefficients for at least 3 wind speeds")
    X = _wind_basis(ws)
    gammas, mse = {}, {}
    for idx, name in enumerate(COEFF_NAMES):
        y = np.array([(c.alpha + c.beta)[idx] for _, c in per_w])
        g, *_ = np.linalg.lstsq(X, y, rcond=None)
        gammas[name] = tuple(float(v) for v in g)
        mse[name] = float(np.mean((X @ g - y) ** 2))
    return WindModelCoeffs(gammas, mse)
