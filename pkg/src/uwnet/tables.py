"""Tabulated waterfill surfaces used as fast cost functions.

Solving the waterfill for every hyperarc evaluation inside a flow solver is
too slow, so the complete model is solved once on a log-spaced grid and
interpolated with bicubic splines in ``(log l, log C)``. Tables are cached
on disk (``$UWNET_CACHE_DIR`` or ``~/.cache/uwnet``).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline

from .channel import EnvironmentParams
from .constants import CONSTANTS_VERSION
from .waterfill import (
    BandTruncatedError,
    UnreachableTargetError,
    solve_capacity_point,
    solve_snr_point,
)

WIDE_RANGE = (0.01, 1000.0)
_TABLE_VERSION = 2


class CostRangeError(ValueError):
    """A cost was requested outside the tabulated validity range."""


def _cache_dir() -> Path:
    root = os.environ.get("UWNET_CACHE_DIR") or os.path.join(Path.home(), ".cache", "uwnet")
    return Path(root)


def _cache_path(kind: str, spec: dict) -> Path:
    key = json.dumps({"kind": kind, "v": (_TABLE_VERSION, CONSTANTS_VERSION), **spec}, sort_keys=True)
    return _cache_dir() / f"{kind}-{hashlib.sha1(key.encode()).hexdigest()[:16]}.npz"


def _load_or_build(kind: str, spec: dict, build):
    path = _cache_path(kind, spec)
    if path.exists():
        try:
            with np.load(path) as data:
                return {k: data[k] for k in data.files}
        except (OSError, ValueError):
            pass
    arrays = build()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".{os.getpid()}.tmp.npz")
        np.savez(tmp, **arrays)
        os.replace(tmp, path)
    except OSError:
        pass
    return arrays


class CapacityTable:
    """Complete-model P(l, C) and K(l, C) on a log grid.

    Below ``C_min`` the power is extended linearly to P(l, 0) = 0, which is
    the exact small-rate behaviour (dP/dC -> ln2 * min_f A N).
    """

    def __init__(self, env: EnvironmentParams = EnvironmentParams(),
                 l_range=(0.005, 20.0), C_range=(1e-4, 100.0), n_l=45, n_C=49):
        self.env = env
        self.l_range = tuple(map(float, l_range))
        self.C_range = tuple(map(float, C_range))
        self.log_l = np.linspace(*np.log(self.l_range), n_l)
        self.log_C = np.linspace(*np.log(self.C_range), n_C)
        spec = {"env": env.__dict__, "l": self.l_range, "C": self.C_range, "n": [n_l, n_C]}
        data = _load_or_build("captable", spec, self._build)
        self.ln_P, self.ln_K = data["ln_P"], data["ln_K"]
        self._P = RectBivariateSpline(self.log_l, self.log_C, self.ln_P)
        self._K = RectBivariateSpline(self.log_l, self.log_C, self.ln_K)

    def _build(self):
        ln_P = np.empty((self.log_l.size, self.log_C.size))
        ln_K = np.empty_like(ln_P)
        for i, ll in enumerate(self.log_l):
            for j, lc in enumerate(self.log_C):
                p = solve_capacity_point(math.exp(ll), math.exp(lc), self.env, f_range=WIDE_RANGE)
                ln_P[i, j] = math.log(p.P)
                ln_K[i, j] = math.log(p.K)
        return {"ln_P": ln_P, "ln_K": ln_K}

    @property
    def max_rate(self) -> float:
        return self.C_range[1]

    def _check(self, l, C):
        l = np.asarray(l, dtype=float)
        C = np.asarray(C, dtype=float)
        if np.any(l < self.l_range[0] * (1 - 1e-12)) or np.any(l > self.l_range[1] * (1 + 1e-12)):
            raise CostRangeError(f"distance outside tabulated range {self.l_range} km")
        if np.any(C < 0) or np.any(C > self.C_range[1] * (1 + 1e-12)):
            raise CostRangeError(f"rate outside tabulated range [0, {self.C_range[1]}] kbps")
        return l, C

    def power(self, l, C):
        """Interpolated P(l, C), linear units; broadcasts over arrays."""
        l, C = self._check(l, C)
        l, C = np.broadcast_arrays(l, C)
        cmin = self.C_range[0]
        lc = np.log(np.clip(C, cmin, self.C_range[1]))
        out = np.exp(self._P.ev(np.log(l), lc))
        small = C < cmin
        out = np.where(small, out * C / cmin, out)
        return float(out) if out.ndim == 0 else out

    def level(self, l, C):
        """Interpolated water level K(l, C)."""
        l, C = self._check(l, C)
        l, C = np.broadcast_arrays(l, C)
        lc = np.log(np.clip(C, self.C_range[0], self.C_range[1]))
        out = np.exp(self._K.ev(np.log(l), lc))
        return float(out) if out.ndim == 0 else out

    def marginal(self, l, C):
        """dP/dC = ln2 K(l, C); the factor 1000 converts kbps to Hz-integrated power."""
        out = math.log(2.0) * 1000.0 * np.asarray(self.level(l, C))
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SnrLink:
    """Link operating point at a fixed SNR for range ``l`` (km)."""

    l: float
    l_design: float
    P: float
    C: float
    B: float
    K: float
    f_ini: float
    f_end: float


class SnrTable:
    """P, C, B and K as functions of distance at a fixed SNR target.

    Distances where the target is unreachable (very short links) use the
    operating point of the shortest feasible distance ``l_min``.
    """

    def __init__(self, snr_db: float, env: EnvironmentParams = EnvironmentParams(),
                 l_range=(0.002, 20.0), n_l=90):
        self.snr_db = float(snr_db)
        self.env = env
        self.l_range = tuple(map(float, l_range))
        spec = {"env": env.__dict__, "snr": self.snr_db, "l": self.l_range, "n": n_l}
        grid = np.linspace(*np.log(self.l_range), n_l)
        data = _load_or_build("snrtable", spec, lambda: self._build(grid))
        ok = data["ok"].astype(bool)
        if not ok.any():
            raise UnreachableTargetError(f"SNR {snr_db} dB unreachable over {l_range} km")
        first = int(np.flatnonzero(ok)[0])
        if not ok[first:].all():
            raise UnreachableTargetError(f"SNR {snr_db} dB unreachable at long range")
        self.log_l = grid[first:]
        self.l_min = float(math.exp(self.log_l[0]))
        self._splines = {
            name: CubicSpline(self.log_l, np.log(data[name][first:]))
            for name in ("P", "C", "B", "K", "f_ini", "f_end")
        }

    def _build(self, grid):
        out = {name: np.full(grid.size, np.nan) for name in ("P", "C", "B", "K", "f_ini", "f_end")}
        ok = np.zeros(grid.size, dtype=bool)
        for i, ll in enumerate(grid):
            try:
                p = solve_snr_point(math.exp(ll), self.snr_db, self.env, f_range=WIDE_RANGE)
            except (UnreachableTargetError, BandTruncatedError):
                continue
            ok[i] = True
            out["P"][i], out["C"][i], out["B"][i] = p.P, p.C, p.band.width
            out["K"][i], out["f_ini"][i], out["f_end"][i] = p.K, p.band.f_ini, p.band.f_end
        out["ok"] = ok
        return out

    def link(self, l: float) -> SnrLink:
        if not l > 0:
            raise ValueError(f"distance must be positive, got {l}")
        if l > self.l_range[1] * (1 + 1e-12):
            raise CostRangeError(f"distance {l} km beyond tabulated range {self.l_range}")
        ld = max(float(l), self.l_min)
        x = math.log(ld)
        vals = {name: float(math.exp(s(x))) for name, s in self._splines.items()}
        return SnrLink(l=float(l), l_design=ld, **vals)


@lru_cache(maxsize=8)
def capacity_table(env: EnvironmentParams = EnvironmentParams()) -> CapacityTable:
    return CapacityTable(env)


@lru_cache(maxsize=32)
def snr_table(snr_db: float, env: EnvironmentParams = EnvironmentParams()) -> SnrTable:
    return SnrTable(snr_db, env)
