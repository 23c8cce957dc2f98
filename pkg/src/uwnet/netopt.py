"""Minimum-power multicast over broadcast hyperarcs with network coding.

A node ``i`` reaching its ``m`` nearest neighbours forms the hyperarc
``(i, J_m)``; its cost is ``theta * P(l, z / theta)`` where ``l`` is the
distance to the farthest member of ``J_m`` and ``z`` the coded rate it
carries. Costs are separable and convex in ``z``, so unicast reduces to a
convex min-cost flow on a node-split graph (``i -> v_iJ -> j``), solved by
successive shortest paths in increments of ``R / steps``. Multicast is solved
by conditional gradient on per-terminal flows with ``z = max_t y_t``.
"""

from __future__ import annotations

import heapq
import json
import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .approxfit import ModelCoeffs, eval_power_model
from .channel import EnvironmentParams
from .convexity import power_model_derivatives
from .tables import CostRangeError, capacity_table

NO_INTERFERENCE_SCALE_KM = 10.0


class InfeasibleError(ValueError):
    """No hyperarc chain connects the source to a sink within the rate cap."""


# -- geometry ------------------------------------------------------------------


@dataclass(frozen=True)
class Deployment:
    ids: tuple
    xy: np.ndarray = field(repr=False)

    def __init__(self, nodes: Sequence[tuple[Hashable, float, float]]):
        ids = tuple(n[0] for n in nodes)
        if len(set(ids)) != len(ids):
            raise ValueError("node ids must be unique")
        xy = np.array([[float(n[1]), float(n[2])] for n in nodes]).reshape(-1, 2)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "xy", xy)
        d = self.distances
        off = ~np.eye(len(ids), dtype=bool)
        if np.any(d[off] <= 0):
            raise ValueError("coincident node positions")
        if np.any(d[off] > NO_INTERFERENCE_SCALE_KM):
            warnings.warn("inter-node distance exceeds 10 km", stacklevel=2)

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def distances(self) -> np.ndarray:
        diff = self.xy[:, None, :] - self.xy[None, :, :]
        return np.sqrt((diff**2).sum(-1))

    def index(self, node_id) -> int:
        return self.ids.index(node_id)

    def scaled(self, c: float) -> "Deployment":
        return Deployment([(i, c * x, c * y) for i, (x, y) in zip(self.ids, self.xy)])

    def nodes(self):
        return [(i, float(x), float(y)) for i, (x, y) in zip(self.ids, self.xy)]


def random_deployment(n: int, side_km: float, rng: np.random.Generator,
                      min_sep_km: float = 0.01, ids=None) -> Deployment:
    """Uniform positions in a square, resampling points closer than ``min_sep_km``."""
    if n < 2:
        raise ValueError("need at least 2 nodes")
    pts: list[np.ndarray] = []
    while len(pts) < n:
        p = rng.uniform(0.0, side_km, size=2)
        if all(np.hypot(*(p - q)) >= min_sep_km for q in pts):
            pts.append(p)
    ids = list(range(1, n + 1)) if ids is None else list(ids)
    return Deployment([(i, p[0], p[1]) for i, p in zip(ids, pts)])


@dataclass(frozen=True)
class Hyperarc:
    tail: int                 # node index
    heads: tuple[int, ...]    # node indices, nearest first
    distance: float           # km, to the farthest head

    @property
    def m(self) -> int:
        return len(self.heads)


@dataclass
class Hypergraph:
    deployment: Deployment
    neighbors: list[list[int]]
    arcs: list[Hyperarc]

    def arc_label(self, a: int) -> str:
        arc = self.arcs[a]
        ids = self.deployment.ids
        return f"{ids[arc.tail]}{{{','.join(str(ids[j]) for j in sorted(arc.heads, key=lambda j: str(ids[j])))}}}"

    def arcs_from(self, i: int) -> list[int]:
        return [a for a, arc in enumerate(self.arcs) if arc.tail == i]


def build_hypergraph(dep: Deployment) -> Hypergraph:
    if dep.n < 2:
        raise ValueError("need at least 2 nodes")
    d = dep.distances
    neighbors, arcs = [], []
    for i in range(dep.n):
        order = sorted((j for j in range(dep.n) if j != i), key=lambda j: (d[i, j], str(dep.ids[j])))
        neighbors.append(order)
        for m in range(1, dep.n):
            arcs.append(Hyperarc(i, tuple(order[:m]), float(d[i, order[m - 1]])))
    return Hypergraph(dep, neighbors, arcs)


# -- cost models ---------------------------------------------------------------


class CompleteCost:
    """Waterfill power interpolated from the tabulated complete model."""

    name = "complete"

    def __init__(self, env: EnvironmentParams = EnvironmentParams()):
        self.env = env
        self.table = capacity_table(env)
        self.max_rate = self.table.max_rate

    def power(self, l, r):
        return self.table.power(l, r)

    def marginal(self, l, r):
        return self.table.marginal(l, r)


class ApproxCost:
    """Closed-form power model, valid for rates up to ``max_rate``."""

    name = "approx"

    def __init__(self, coeffs: ModelCoeffs, max_rate: float = 2.0):
        self.coeffs = coeffs
        self.max_rate = float(max_rate)

    def power(self, l, r):
        r = np.asarray(r, dtype=float)
        if np.any(r > self.max_rate * (1 + 1e-12)):
            raise CostRangeError(f"rate exceeds the model cap of {self.max_rate} kbps")
        return eval_power_model(l, r, self.coeffs)

    def marginal(self, l, r):
        r = np.maximum(np.asarray(r, dtype=float), 1e-9)
        out = power_model_derivatives(l, r, self.coeffs)[1]
        return float(out) if np.ndim(out) == 0 else out


def hyperarc_cost(l, z, theta: float, cost_model) -> float:
    """theta * P(l, z / theta); zero at z = 0."""
    if not 0 < theta <= 1:
        raise ValueError(f"duty cycle must lie in (0, 1], got {theta}")
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("rate must be non-negative")
    r = z / theta
    if np.any(r > cost_model.max_rate * (1 + 1e-12)):
        raise CostRangeError(f"active-time rate exceeds the model cap of {cost_model.max_rate} kbps")
    out = np.where(r > 0, theta * np.asarray(cost_model.power(l, np.where(r > 0, r, 1.0))), 0.0)
    return float(out) if out.ndim == 0 else out


# -- requests and solutions ----------------------------------------------------


@dataclass(frozen=True)
class MulticastRequest:
    source: Hashable
    sinks: tuple
    rate: float
    theta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "sinks", tuple(self.sinks))
        if not self.sinks:
            raise ValueError("sink set must be non-empty")
        if self.source in self.sinks:
            raise ValueError("source cannot be a sink")
        if not self.rate > 0:
            raise ValueError("rate must be positive")
        if not 0 < self.theta <= 1:
            raise ValueError("duty cycle must lie in (0, 1]")


@dataclass(frozen=True)
class SolverParams:
    steps: int = 100          # unicast increments per unit of R
    max_iter: int = 100       # conditional-gradient iterations per smoothing stage
    gap: float = 0.01
    p_schedule: tuple = (2.0, 4.0, 8.0, 16.0, 32.0)  # p-norm smoothing of max_t


@dataclass
class SubgraphSolution:
    z: dict                   # arc index -> rate
    x: dict                   # (terminal index, arc index, head index) -> flow
    arc_power: dict           # arc index -> theta P(l, z/theta)
    total_power: float
    gap: float = 0.0
    iterations: int = 0
    history: list = field(default_factory=list)

    @property
    def total_power_db(self) -> float:
        return 10.0 * math.log10(self.total_power) if self.total_power > 0 else -math.inf

    def to_dict(self, hg: Hypergraph) -> dict:
        ids = hg.deployment.ids
        return {
            "z": {hg.arc_label(a): v for a, v in sorted(self.z.items())},
            "x": [{"terminal": ids[t], "arc": hg.arc_label(a), "to": ids[j], "flow": v}
                  for (t, a, j), v in sorted(self.x.items())],
            "total_power_dB": self.total_power_db,
            "gap": self.gap,
        }


def _evaluate(hg: Hypergraph, z: dict, theta: float, cost_model) -> tuple[dict, float]:
    used = sorted(a for a, v in z.items() if v > 0)
    if not used:
        return {}, 0.0
    l = np.array([hg.arcs[a].distance for a in used])
    p = np.atleast_1d(hyperarc_cost(l, np.array([z[a] for a in used]), theta, cost_model))
    per = {a: float(v) for a, v in zip(used, p)}
    return per, float(sum(per[a] for a in used))


# -- unicast: successive shortest paths ------------------------------------------


class _SplitGraph:
    """Node-split residual structure: physical nodes 0..n-1, arc nodes n+a."""

    def __init__(self, hg: Hypergraph):
        self.hg = hg
        self.n = hg.deployment.n
        self.na = len(hg.arcs)
        self.l = np.array([arc.distance for arc in hg.arcs])
        self.out_arcs = [[] for _ in range(self.n)]
        self.into = [[] for _ in range(self.n)]
        for a, arc in enumerate(hg.arcs):
            self.out_arcs[arc.tail].append(a)
            for j in arc.heads:
                self.into[j].append(a)
        # residual adjacency: (head, kind, arc, augmentation tag)
        self.edges = [[] for _ in range(self.n + self.na)]
        for u in range(self.n):
            self.edges[u] += [(self.n + a, 0, a, ("tx", a, +1)) for a in self.out_arcs[u]]
        for a, arc in enumerate(hg.arcs):
            self.edges[self.n + a] = [(j, 2, a, ("rx", a, j, +1)) for j in arc.heads]
            self.edges[self.n + a].append((arc.tail, 1, a, ("tx", a, -1)))


def _tx_costs(sg, units, delta, theta, cost_model, floor):
    """Forward and backward increment costs for every transmit arc.

    An arc already carrying rate ``floor`` for other terminals costs
    ``C(max(z, floor))``, so rate below the floor is free.
    """
    cap = cost_model.max_rate * theta
    z = units * delta
    up = z + delta
    ok_up = up <= cap * (1 + 1e-12)
    c_now = _arc_cost(sg.l, np.maximum(z, floor), theta, cost_model)
    c_up = np.full(sg.na, np.inf)
    if ok_up.any():
        c_up[ok_up] = _arc_cost(sg.l[ok_up], np.maximum(up, floor)[ok_up], theta, cost_model)
    fwd = c_up - c_now
    down = units > 0
    bwd = np.full(sg.na, np.inf)
    if down.any():
        bwd[down] = _arc_cost(sg.l[down], np.maximum(z - delta, floor)[down], theta,
                              cost_model) - c_now[down]
    return fwd, bwd


def _arc_cost(l, z, theta, cost_model):
    return np.atleast_1d(hyperarc_cost(l, np.maximum(z, 0.0), theta, cost_model))


def _spfa(sg: _SplitGraph, src: int, fwd, bwd, recv_units):
    """Label-correcting shortest path on the residual graph."""
    V = sg.n + sg.na
    fwd, bwd = fwd.tolist(), bwd.tolist()
    inf = math.inf
    dist = [inf] * V
    pred: list = [None] * V
    dist[src] = 0.0
    inq = [False] * V
    q = deque([src])
    inq[src] = True
    count = [0] * V
    back: dict = {}                        # rx backward arcs exist only where flow does
    for (a, j), k in recv_units.items():
        if k > 0:
            back.setdefault(j, []).append((sg.n + a, 2, a, ("rx", a, j, -1)))
    edges = sg.edges
    while q:
        u = q.popleft()
        inq[u] = False
        du = dist[u]
        for v, kind, a, tag in (edges[u] + back[u] if u in back else edges[u]):
            if kind == 0:                  # tx forward
                w = fwd[a]
            elif kind == 1:                # tx backward
                w = bwd[a]
            else:                          # rx, free
                w = 0.0
            if w == inf:
                continue
            nd = du + w
            dv = dist[v]
            if nd < dv and (dv == inf or dv - nd > 1e-12 * abs(dv)):
                dist[v] = nd
                pred[v] = (u, tag)
                if not inq[v]:
                    count[v] += 1
                    if count[v] > V + 1:
                        raise RuntimeError("negative cycle in residual graph")
                    q.append(v)
                    inq[v] = True
    return dist, pred


def _solve_unicast(hg, s, t, R, theta, cost_model, steps, floor=None, sg=None):
    sg = _SplitGraph(hg) if sg is None else sg
    delta = R / steps
    floor = np.zeros(sg.na) if floor is None else floor
    units = np.zeros(sg.na)
    recv: dict = {}
    fwd, bwd = _tx_costs(sg, units, delta, theta, cost_model, floor)
    history = []
    total = 0.0
    for _ in range(steps):
        dist, pred = _spfa(sg, s, fwd, bwd, recv)
        if dist[t] == math.inf:
            raise InfeasibleError("no augmenting path from source to sink")
        v = t
        while v != s:
            u, tag = pred[v]
            if tag[0] == "tx":
                units[tag[1]] += tag[2]
            else:
                key = (tag[1], tag[2])
                recv[key] = recv.get(key, 0) + tag[3]
                if recv[key] == 0:
                    del recv[key]
            v = u
        total += dist[t]
        history.append(total)
        fwd, bwd = _tx_costs(sg, units, delta, theta, cost_model, floor)
    y = {a: float(units[a] * delta) for a in range(sg.na) if units[a] > 0}
    x = {(a, j): float(k * delta) for (a, j), k in recv.items() if k > 0}
    return y, x, history


# -- multicast: conditional gradient ---------------------------------------------


def _dijkstra_path(hg: Hypergraph, s: int, t: int, w: np.ndarray):
    n = hg.deployment.n
    out_arcs = [hg.arcs_from(i) for i in range(n)]
    dist = {s: 0.0}
    pred = {}
    heap = [(0.0, s)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == t:
            break
        for a in out_arcs[u]:
            for j in hg.arcs[a].heads:
                nd = d + w[a]
                if nd < dist.get(j, math.inf) - 1e-15:
                    dist[j] = nd
                    pred[j] = (u, a)
                    heapq.heappush(heap, (nd, j))
    if t not in pred:
        raise InfeasibleError("sink unreachable")
    path, v = [], t
    while v != s:
        u, a = pred[v]
        path.append((a, v))
        v = u
    return path[::-1]


def _flows_to_arrays(na, y_list):
    return np.array([[y.get(a, 0.0) for a in range(na)] for y in y_list])


def solve_min_power_multicast(hg: Hypergraph, req: MulticastRequest, cost_model,
                              params: SolverParams = SolverParams()) -> SubgraphSolution:
    dep = hg.deployment
    s = dep.index(req.source)
    terms = [dep.index(t) for t in req.sinks]
    na = len(hg.arcs)
    ys, xs = [], []
    hist = []
    for t in terms:
        y, x, h = _solve_unicast(hg, s, t, req.rate, req.theta, cost_model, params.steps)
        ys.append(y)
        xs.append(x)
        if len(terms) == 1:
            hist = h
    if len(terms) == 1:
        z = dict(ys[0])
        per, total = _evaluate(hg, z, req.theta, cost_model)
        xmap = {(terms[0], a, j): v for (a, j), v in xs[0].items()}
        return SubgraphSolution(z, xmap, per, total, 0.0, params.steps, hist)

    Y = _flows_to_arrays(na, ys)                      # terminals x arcs
    X = [dict(x) for x in xs]
    l = np.array([arc.distance for arc in hg.arcs])
    th = req.theta

    def true_obj(Ym):
        return float(np.sum(_arc_cost(l, Ym.max(axis=0), th, cost_model)))

    best = true_obj(Y)
    history = [best]
    # block-coordinate descent: re-route one terminal against the others' rates
    for _ in range(params.max_iter):
        improved = False
        for k, t in enumerate(terms):
            floor = np.delete(Y, k, axis=0).max(axis=0)
            y, x, _ = _solve_unicast(hg, s, t, req.rate, th, cost_model, params.steps, floor)
            Yk = Y.copy()
            Yk[k] = [y.get(a, 0.0) for a in range(na)]
            f = true_obj(Yk)
            if f < best * (1 - 1e-12):
                Y, X[k], best = Yk, dict(x), f
                improved = True
                history.append(best)
        if not improved:
            break
    best_Y, best_X = Y.copy(), [dict(x) for x in X]
    gap = math.inf
    it = 0
    for p in params.p_schedule:
        def smooth_obj(Ym, p=p):
            zp = np.linalg.norm(Ym, ord=p, axis=0)
            return float(np.sum(_arc_cost(l, np.minimum(zp, cost_model.max_rate * th), th, cost_model)))

        for _ in range(params.max_iter):
            it += 1
            zp = np.linalg.norm(Y, ord=p, axis=0)
            grad = np.asarray(cost_model.marginal(l, np.maximum(zp / th, 1e-9)))
            with np.errstate(divide="ignore", invalid="ignore"):
                share = np.where(zp > 0, (Y / np.where(zp > 0, zp, 1.0)) ** (p - 1), 1.0)
            W = grad * share + 1e-15
            S = np.zeros_like(Y)
            SX = []
            for k, t in enumerate(terms):
                sx = {}
                for a, j in _dijkstra_path(hg, s, t, W[k]):
                    S[k, a] += req.rate
                    sx[(a, j)] = sx.get((a, j), 0.0) + req.rate
                SX.append(sx)
            D = S - Y
            cur = smooth_obj(Y)
            gap = float(np.sum(W * (Y - S))) / max(cur, 1e-300)
            if gap <= params.gap * 0.1:
                break
            gamma = _golden(lambda g: smooth_obj(Y + g * D))
            if smooth_obj(Y + gamma * D) >= cur:
                break
            Y = Y + gamma * D
            for k in range(len(terms)):
                keys = set(X[k]) | set(SX[k])
                X[k] = {key: (1 - gamma) * X[k].get(key, 0.0) + gamma * SX[k].get(key, 0.0)
                        for key in keys}
                X[k] = {key: v for key, v in X[k].items() if v > 1e-15}
            f = true_obj(Y)
            if f < best:
                best, best_Y, best_X = f, Y.copy(), [dict(x) for x in X]
            history.append(best)
    z = {a: float(v) for a, v in enumerate(best_Y.max(axis=0)) if v > 0}
    per, total = _evaluate(hg, z, th, cost_model)
    xmap = {(terms[k], a, j): v for k in range(len(terms)) for (a, j), v in best_X[k].items()}
    return SubgraphSolution(z, xmap, per, total, max(gap, 0.0), it, history)


def _golden(f, lo=0.0, hi=1.0, n=40):
    g = (math.sqrt(5) - 1) / 2
    c1, c2 = hi - g * (hi - lo), lo + g * (hi - lo)
    f1, f2 = f(c1), f(c2)
    for _ in range(n):
        if f1 <= f2:
            hi, c2, f2 = c2, c1, f1
            c1 = hi - g * (hi - lo)
            f1 = f(c1)
        else:
            lo, c1, f1 = c1, c2, f2
            c2 = lo + g * (hi - lo)
            f2 = f(c2)
    return c1 if f1 <= f2 else c2


# -- diagnostics ----------------------------------------------------------------


def check_feasibility(sol: SubgraphSolution, hg: Hypergraph, req: MulticastRequest,
                      tol: float = 1e-9) -> tuple[bool, list[str]]:
    """Verify coupling, non-negativity and per-terminal conservation.

    Conservation is checked at every node except the terminal itself; its
    balance follows from the others.
    """
    dep = hg.deployment
    s = dep.index(req.source)
    terms = [dep.index(t) for t in req.sinks]
    scale = tol * max(req.rate, 1.0)
    bad = []
    for (t, a, j), v in sol.x.items():
        if a >= len(hg.arcs) or j not in hg.arcs[a].heads:
            bad.append(f"flow on invalid hyperarc receiver ({a}, {j})")
        if v < -scale:
            bad.append(f"negative flow {v} on ({t}, {a}, {j})")
    for t in terms:
        carried: dict = {}
        div = np.zeros(dep.n)
        for (tt, a, j), v in sol.x.items():
            if tt != t:
                continue
            carried[a] = carried.get(a, 0.0) + v
            div[hg.arcs[a].tail] += v
            div[j] -= v
        for a, v in carried.items():
            if v > sol.z.get(a, 0.0) + scale:
                bad.append(f"terminal {dep.ids[t]}: hyperarc {hg.arc_label(a)} carries {v} > z")
        for i in range(dep.n):
            if i == t:
                continue
            want = req.rate if i == s else 0.0
            if abs(div[i] - want) > scale:
                bad.append(f"terminal {dep.ids[t]}: conservation at node {dep.ids[i]} ({div[i]} != {want})")
    return not bad, bad


def lower_bound_power(dep: Deployment, source, sinks, R: float,
                      env: EnvironmentParams = EnvironmentParams(),
                      params: SolverParams = SolverParams()) -> float:
    """Minimum total transmit power (dB) with full duty cycle and the complete model."""
    hg = build_hypergraph(dep)
    sol = solve_min_power_multicast(hg, MulticastRequest(source, tuple(sinks), R, 1.0),
                                    CompleteCost(env), params)
    return sol.total_power_db


# -- JSON ------------------------------------------------------------------------


def load_instance(text: str) -> tuple[Deployment, MulticastRequest]:
    d = json.loads(text)
    unknown = set(d) - {"nodes", "source", "sinks", "rate_kbps", "theta"}
    if unknown:
        raise ValueError(f"unknown keys {sorted(unknown)}")
    dep = Deployment([(n["id"], n["x_km"], n["y_km"]) for n in d["nodes"]])
    return dep, MulticastRequest(d["source"], tuple(d["sinks"]), d["rate_kbps"], d.get("theta", 1.0))


def dump_instance(dep: Deployment, req: MulticastRequest) -> str:
    return json.dumps({
        "nodes": [{"id": i, "x_km": x, "y_km": y} for i, x, y in dep.nodes()],
        "source": req.source, "sinks": list(req.sinks),
        "rate_kbps": req.rate, "theta": req.theta,
    }, sort_keys=True, indent=2)
