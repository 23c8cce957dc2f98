"""Command-line front end: ``uwnet <command> --config cfg.json --out DIR``.

Every command reads an optional JSON config (unknown keys are rejected),
writes its data files plus ``manifest.json`` into ``--out`` and exits with
0 on success, 2 on usage errors, 3 when a problem is infeasible or a solver
fails to converge and 4 on I/O errors. Data files are deterministic for a
given config and seed; only the manifest carries a timestamp.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .approxfit import PUBLISHED_COEFFS, ModelCoeffs, case_grid, eval_power_model_db, fit_models
from .channel import EnvironmentParams
from .convexity import min_convex_distance, verify_complete_model_convexity
from .interference import Scenario, severe_interference_rate, write_sweep_csv
from .netopt import (
    ApproxCost,
    CompleteCost,
    InfeasibleError,
    SolverParams,
    build_hypergraph,
    check_feasibility,
    load_instance,
    random_deployment,
    solve_min_power_multicast,
)
from .simulator import SimConfig, measure_gap, run_scheme, write_metrics_csv
from .tables import CostRangeError
from .waterfill import (
    BandTruncatedError,
    IntegrationError,
    UnreachableTargetError,
    read_surface_csv,
    sweep_surface,
    write_surface_csv,
)

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_IO = 0, 2, 3, 4


class UsageError(ValueError):
    pass


def _check_keys(block: dict, allowed: dict, where: str) -> dict:
    unknown = set(block) - set(allowed)
    if unknown:
        raise UsageError(f"unknown keys in {where}: {sorted(unknown)}")
    return {**allowed, **block}


def _env(block) -> EnvironmentParams:
    d = _check_keys(block or {}, {"k": 1.5, "s": 0.5, "w": 0.0, "l_ref": 1.0}, "env")
    return EnvironmentParams(**d)


def _grid(spec, name) -> list[float]:
    if isinstance(spec, list):
        vals = [float(v) for v in spec]
    elif isinstance(spec, dict):
        d = _check_keys(spec, {"start": None, "stop": None, "num": None, "spacing": "log"}, name)
        if d["start"] is None or d["stop"] is None or d["num"] is None:
            raise UsageError(f"{name} needs start, stop and num")
        fn = np.geomspace if d["spacing"] == "log" else np.linspace
        vals = [float(v) for v in fn(d["start"], d["stop"], int(d["num"]))]
    else:
        raise UsageError(f"{name} must be a list or a range object")
    if not vals:
        raise UsageError(f"{name} is empty")
    return vals


def _coeffs(spec) -> ModelCoeffs:
    if isinstance(spec, str) and spec.startswith("published:"):
        _, case, template = spec.split(":")
        return PUBLISHED_COEFFS[(case, template)]
    if isinstance(spec, str):
        return ModelCoeffs.from_json(Path(spec).read_text())
    if isinstance(spec, dict):
        return ModelCoeffs.from_json(spec)
    raise UsageError("coefficients must be 'published:<case>:<template>', a path or an object")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n")


# -- commands --------------------------------------------------------------------


def cmd_sweep(cfg, seed, out, threads):
    d = _check_keys(cfg, {"env": {}, "case": None, "l_grid": None, "C_grid": None}, "sweep")
    env = _env(d["env"])
    if d["case"] is not None:
        l_grid, C_grid = (list(map(float, g)) for g in case_grid(str(d["case"])))
    else:
        if d["l_grid"] is None or d["C_grid"] is None:
            raise UsageError("sweep needs either case or both l_grid and C_grid")
        l_grid, C_grid = _grid(d["l_grid"], "l_grid"), _grid(d["C_grid"], "C_grid")
    write_surface_csv(out / "surface.csv", sweep_surface(l_grid, C_grid, env))
    return {"files": ["surface.csv"]}


def cmd_fit(cfg, seed, out, threads):
    d = _check_keys(cfg, {"surface": None, "template": "power", "case": "", "env": {}}, "fit")
    if d["surface"] is None:
        raise UsageError("fit needs a surface CSV path")
    env = _env(d["env"])
    rows = read_surface_csv(d["surface"])
    coeffs = fit_models(rows, d["template"], case=str(d["case"]), k=env.k, s=env.s, w=env.w)
    name = f"coeffs_{d['template']}.json"
    (out / name).write_text(coeffs.to_json() + "\n")
    summary = {"template": d["template"], "mse_a1": coeffs.mse_a1, "mse_a2": coeffs.mse_a2}
    if d["template"] == "power":
        l = np.array([r["l_km"] for r in rows])
        C = np.array([r["C_kbps"] for r in rows])
        P = np.array([r["P_dB"] for r in rows])
        err = eval_power_model_db(l, C, coeffs) - P
        summary["max_abs_error_db"] = float(np.max(np.abs(err)))
    _write_json(out / "fit_summary.json", summary)
    return {"files": [name, "fit_summary.json"]}


def cmd_convexity(cfg, seed, out, threads):
    d = _check_keys(cfg, {"env": {}, "l_grid": {"start": 0.1, "stop": 10.0, "num": 15},
                          "C_grid": {"start": 0.05, "stop": 2.0, "num": 40, "spacing": "lin"},
                          "tol": 1e-6, "coeffs": "published:1:power", "z_range": [1e-3, 2.0]},
                    "convexity")
    rep = verify_complete_model_convexity(_grid(d["l_grid"], "l_grid"), _grid(d["C_grid"], "C_grid"),
                                          _env(d["env"]), float(d["tol"]))
    if d["coeffs"] is not None:
        rep.min_convex_distance_m = min_convex_distance(tuple(d["z_range"]), _coeffs(d["coeffs"]))
    (out / "convexity.json").write_text(rep.to_json() + "\n")
    return {"files": ["convexity.json"], "pass": rep.passed}


def cmd_bound(cfg, seed, out, threads):
    d = _check_keys(cfg, {"instance": None, "cost_model": "complete", "coeffs": "published:1:power",
                          "max_rate": 2.0, "steps": 100, "env": {}}, "bound")
    if d["instance"] is None:
        raise UsageError("bound needs an instance (path or object)")
    text = Path(d["instance"]).read_text() if isinstance(d["instance"], str) else json.dumps(d["instance"])
    try:
        dep, req = load_instance(text)
    except (KeyError, TypeError) as exc:
        raise UsageError(f"malformed instance: {exc}") from exc
    if d["cost_model"] == "complete":
        model = CompleteCost(_env(d["env"]))
    elif d["cost_model"] == "approx":
        model = ApproxCost(_coeffs(d["coeffs"]), float(d["max_rate"]))
    else:
        raise UsageError("cost_model must be 'complete' or 'approx'")
    hg = build_hypergraph(dep)
    sol = solve_min_power_multicast(hg, req, model, SolverParams(steps=int(d["steps"])))
    ok, violations = check_feasibility(sol, hg, req)
    doc = sol.to_dict(hg)
    doc["feasible"] = ok
    doc["violations"] = violations
    _write_json(out / "solution.json", doc)
    return {"files": ["solution.json"]}


def cmd_interference(cfg, seed, out, threads):
    d = _check_keys(cfg, {"runs": [{"scheme": 1}], "n_nodes": [3, 4, 5, 6, 7, 8], "trials": 500,
                          "side_km": 5.0, "rate": 0.1, "epochs": 100, "env": {}}, "interference")
    env = _env(d["env"])
    results = []
    for run in d["runs"]:
        r = _check_keys(run, {"scheme": 1, "theta": 1.0, "snr_db": None}, "interference run")
        for n in d["n_nodes"]:
            sc = Scenario(int(r["scheme"]), int(n), float(d["side_km"]), float(d["rate"]),
                          float(r["theta"]), r["snr_db"], int(d["epochs"]), env=env)
            results.append(severe_interference_rate(sc, int(d["trials"]), seed, workers=threads))
    write_sweep_csv(out / "interference.csv", results)
    return {"files": ["interference.csv"]}


_SIM_KEYS = {"slot": 0.1, "p": 0.2, "n_bits": 1000, "snr_db": 10.0, "signaling": "gaussian",
             "sound_speed": 1500.0, "generation": 20, "half_duplex": True, "ack_bits": None,
             "event_cap": 1_000_000}


def _sim_config(block, env, seed) -> SimConfig:
    d = _check_keys(block or {}, _SIM_KEYS, "sim")
    return SimConfig(**d, seed=seed, env=env)


def cmd_simulate(cfg, seed, out, threads):
    d = _check_keys(cfg, {"instance": None, "n_nodes": 5, "side_km": 1.0, "schemes": [4, 5],
                          "sim": {}, "env": {}}, "simulate")
    env = _env(d["env"])
    if d["instance"] is not None:
        text = Path(d["instance"]).read_text() if isinstance(d["instance"], str) else json.dumps(d["instance"])
        dep, req = load_instance(text)
        src, dst = req.source, req.sinks[0]
    else:
        rng = np.random.default_rng([seed, 1])
        dep = random_deployment(int(d["n_nodes"]), float(d["side_km"]), rng)
        src, dst = (dep.ids[int(v)] for v in rng.choice(dep.n, size=2, replace=False))
    sim = _sim_config(d["sim"], env, seed)
    rows = [(dep.n, seed, sim, run_scheme(int(s), dep, src, dst, sim)) for s in d["schemes"]]
    write_metrics_csv(out / "metrics.csv", rows)
    return {"files": ["metrics.csv"], "complete": all(m.complete for *_, m in rows)}


def cmd_gap(cfg, seed, out, threads):
    d = _check_keys(cfg, {"n_nodes": [3, 4, 5, 6, 7, 8], "deployments": 20, "side_km": 1.0,
                          "target_kbps": 1.0, "calibrate": True, "signaling": ["gaussian", "psk"],
                          "schemes": [4, 5], "sim": {}, "env": {}}, "gap")
    env = _env(d["env"])
    base = _sim_config(d["sim"], env, seed)
    path = out / "gap.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scheme", "signaling", "deployments", "mean_gap_dB", "ci_low", "ci_high",
                    "mean_rate_kbps", "mean_power_dB", "mean_energy"])
        for sig in d["signaling"]:
            res = measure_gap(d["n_nodes"], int(d["deployments"]), replace(base, signaling=sig),
                              float(d["target_kbps"]), float(d["side_km"]), tuple(d["schemes"]),
                              seed, bool(d["calibrate"]))
            for s in d["schemes"]:
                r = res[s]
                w.writerow([s, sig, r.deployments, repr(r.mean_gap_db), repr(r.ci_low), repr(r.ci_high),
                            repr(r.mean_rate_kbps), repr(r.mean_power_db), repr(r.mean_energy)])
    return {"files": ["gap.csv"]}


COMMANDS = {
    "sweep": cmd_sweep, "fit": cmd_fit, "convexity": cmd_convexity, "bound": cmd_bound,
    "interference": cmd_interference, "simulate": cmd_simulate, "gap": cmd_gap,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="uwnet", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", type=Path, help="JSON config file")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("."))
    ap.add_argument("--threads", type=int, default=1)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed < 0 or args.seed >= 2**64 or args.threads < 1:
        print("error: seed must be a u64 and threads >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = json.loads(args.config.read_text()) if args.config else {}
        if not isinstance(cfg, dict):
            raise UsageError("config must be a JSON object")
        args.out.mkdir(parents=True, exist_ok=True)
        info = COMMANDS[args.command](cfg, args.seed, args.out, args.threads)
        manifest = {
            "command": args.command, "config": cfg, "seed": args.seed, "threads": args.threads,
            "version": __version__, "outputs": info,
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        }
        _write_json(args.out / "manifest.json", manifest)
    except (UsageError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InfeasibleError, IntegrationError, UnreachableTargetError, BandTruncatedError,
            CostRangeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
