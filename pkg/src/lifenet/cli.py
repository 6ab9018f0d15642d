"""Command-line front end: run, capacity, sweep, validate.

Exit codes: 0 ok, 2 configuration/usage error, 3 invariant breach,
4 infeasible oracle query.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .lp import build_lp, export_lp, is_feasible, min_cost, region_boundary
from .model import build_layered_graph
from .queueing import InvariantError
from .scenario import ConfigError, LoadedScenario, load
from .sim import POLICIES, SWEEP_AXES, RunConfig, SimulationAborted, aggregate, run, sweep

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_INFEASIBLE = 0, 2, 3, 4
OUTPUT_ENV = "LIFENET_OUTPUT_DIR"

log = logging.getLogger("lifenet")


class UsageError(ConfigError):
    pass


# ---------------------------------------------------------------- output helpers


def atomic_write(path: Path, data: str | bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in r])
    return buf.getvalue()


def file_sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def out_dir(args) -> Path:
    d = args.out or os.environ.get(OUTPUT_ENV) or "lifenet-out"
    return Path(d)


def write_manifest(d: Path, command: str, ls: LoadedScenario, effective: dict, outputs: list[str]) -> None:
    man = {
        "command": command,
        "version": __version__,
        "scenario": {"path": ls.path, "sha256": ls.sha256},
        "effective": effective,
        "outputs": {name: file_sha(d / name) for name in outputs},
    }
    atomic_write(d / "manifest.json", json.dumps(man, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- scenario + overrides


def _int_like(text: str) -> int:
    """Integers, also written as 1e6."""
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text}") from None
    if v != int(v):
        raise argparse.ArgumentTypeError(f"not an integer: {text}")
    return int(v)


def effective_config(ls: LoadedScenario, args) -> dict:
    """Scenario [run] values overridden by command-line flags."""
    r = ls.run
    eff = {
        "policy": r.get("policy", "proposed"),
        "T": int(r.get("horizon", 10_000)),
        "seed": int(r.get("seed", 0)),
        "process": r.get("process", "poisson"),
        "matching": r.get("matching", "clip"),
        "V_native": ls.native_v(),
        "L": None,
        "lambda_scale": 1.0,
    }
    if getattr(args, "policy", None):
        eff["policy"] = args.policy
    if getattr(args, "T", None) is not None:
        eff["T"] = args.T
    if getattr(args, "seed", None) is not None:
        eff["seed"] = args.seed
    if getattr(args, "process", None):
        eff["process"] = args.process
    if getattr(args, "matching", None):
        eff["matching"] = args.matching
    if getattr(args, "V", None) is not None:
        eff["V_native"] = ls.units.scale_v(args.V)
    if getattr(args, "V_native", None) is not None:
        eff["V_native"] = float(args.V_native)
    if getattr(args, "L", None) is not None:
        eff["L"] = args.L
    if getattr(args, "lambda_scale", None) is not None:
        eff["lambda_scale"] = args.lambda_scale
    if eff["T"] < 1:
        raise ConfigError("horizon T must be >= 1")
    if eff["V_native"] < 0:
        raise ConfigError("V must be non-negative")
    if eff["lambda_scale"] < 0:
        raise ConfigError("lambda scale must be non-negative")
    return eff


def apply_scenario_overrides(ls: LoadedScenario, eff: dict):
    sc = ls.scenario
    clients = list(sc.clients)
    if eff.get("L") is not None:
        clients = [replace(c, L=int(eff["L"])) for c in clients]
    if eff.get("lambda_scale", 1.0) != 1.0:
        clients = [replace(c, rate=c.rate * eff["lambda_scale"]) for c in clients]
    return sc.with_clients(clients)


def run_config(eff: dict) -> RunConfig:
    try:
        return RunConfig(policy=eff["policy"], T=eff["T"], seed=eff["seed"], V=eff["V_native"],
                         process=eff["process"], matching=eff["matching"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _load_from(args) -> tuple[LoadedScenario, dict | None]:
    """Scenario plus, when replaying, the manifest's effective config."""
    if getattr(args, "manifest", None):
        try:
            man = json.loads(Path(args.manifest).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read manifest: {exc}") from None
        ls = load(man["scenario"]["path"].removeprefix("builtin:"))
        if ls.sha256 != man["scenario"]["sha256"]:
            raise ConfigError("scenario content changed since the manifest was written")
        return ls, man["effective"]
    if not args.scenario:
        raise UsageError("--scenario or --manifest is required")
    return load(args.scenario), None


# ---------------------------------------------------------------- commands


METRIC_FIELDS = ("policy", "slot", "delivered", "delivered_raw", "dropped", "cost", "backlog",
                 "virtual_backlog", "virtual_delivered", "virtual_cost")


def cmd_run(args) -> int:
    ls, eff = _load_from(args)
    eff = eff or effective_config(ls, args)
    cfg = run_config(eff)
    lg = build_layered_graph(apply_scenario_overrides(ls, eff))
    stride = eff.setdefault("stride", getattr(args, "stride", None) or 1)
    try:
        res = run(lg, cfg)
    except SimulationAborted as exc:
        d = out_dir(args)
        dump = {k: np.asarray(v).tolist() for k, v in exc.state.items() if k in ("Q", "U", "Ud")}
        atomic_write(d / "abort_state.json", json.dumps({"error": str(exc), "slot": exc.slot, **dump}))
        log.error("invariant breach: %s (state dumped to %s)", exc, d / "abort_state.json")
        return EXIT_INVARIANT
    d = out_dir(args)
    m = res.metrics
    slots = range(0, m.T, stride)
    rows = ((cfg.policy, t, float(m.delivered[t].sum()), float(m.delivered_raw[t]), float(m.dropped[t]),
             float(m.cost[t]), float(m.backlog[t]), float(m.virtual_backlog[t]), float(m.virtual_delivered[t]),
             float(m.virtual_cost[t])) for t in slots)
    atomic_write(d / "metrics.csv", csv_text(METRIC_FIELDS, rows))
    atomic_write(d / "gap.csv", csv_text(("slot", "gap"), res.gap_series))
    atomic_write(d / "summary.json", json.dumps(res.summary, indent=2, sort_keys=True) + "\n")
    write_manifest(d, "run", ls, eff, ["metrics.csv", "gap.csv", "summary.json"])
    s = res.summary
    print(f"{cfg.policy}: throughput {s['throughput']:.4f} units/slot, cost {s['cost']:.4f}, "
          f"t_eps {s['t_eps']}  -> {d}")
    return EXIT_OK


def cmd_capacity(args) -> int:
    ls, _ = _load_from(args)
    Ls = args.L_values
    if not Ls:
        raise UsageError("empty L range")
    d = out_dir(args)
    rows = []
    for L in Ls:
        sc = apply_scenario_overrides(ls, {"L": L, "lambda_scale": args.lambda_scale})
        lg = build_layered_graph(sc)
        theta = region_boundary(lg, args.tol)
        sol = min_cost(lg) if theta >= 1.0 else None
        h = sol.objective if sol is not None and sol.feasible else None
        rows.append((L, theta, h))
        print(f"L={L}: theta*={theta:.6g}  h*={'infeasible' if h is None else f'{h:.6g}'}")
        if args.export_lp:
            export_lp(build_lp(lg), d / f"capacity_L{L}.lp", f"capacity L={L}")
    atomic_write(d / "capacity.csv", csv_text(("L", "theta_star", "h_star"), rows))
    write_manifest(d, "capacity", ls, {"L": Ls, "tol": args.tol, "lambda_scale": args.lambda_scale},
                   ["capacity.csv"])
    if args.require_feasible:
        for L in Ls:
            sc = apply_scenario_overrides(ls, {"L": L, "lambda_scale": args.lambda_scale})
            if not is_feasible(build_lp(build_layered_graph(sc))):
                log.error("requested point is outside the capacity region at L=%s", L)
                return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_sweep(args) -> int:
    ls, eff = _load_from(args)
    if eff is None:
        eff = effective_config(ls, args)
        if not args.policies:
            raise UsageError("empty policy list")
        if not args.values:
            raise UsageError("empty value list")
        eff.update(axis=args.axis, values=args.values, policies=args.policies, replications=args.replications)
        if args.axis == "V" and not args.native:
            eff["values"] = [ls.units.scale_v(v) for v in args.values]
    base = apply_scenario_overrides(ls, eff)
    rows = []
    for pol in eff["policies"]:
        cfg = run_config({**eff, "policy": pol})
        try:
            rows += sweep(base, eff["axis"], eff["values"], eff["replications"], cfg, eff["seed"],
                          jobs=getattr(args, "jobs", 1) or 1)
        except SimulationAborted as exc:
            log.error("invariant breach: %s", exc)
            return EXIT_INVARIANT
    d = out_dir(args)
    keys = sorted({k for r in rows for k in r} - {"policy", "axis", "value", "replication"})
    header = ["policy", "axis", "value", "replication"] + keys
    atomic_write(d / "sweep.csv", csv_text(header, ([r.get(h) for h in header] for r in rows)))
    agg = aggregate(rows)
    agg_header = list(agg[0].keys())
    atomic_write(d / "aggregate.csv", csv_text(agg_header, ([r[h] for h in agg_header] for r in agg)))
    write_manifest(d, "sweep", ls, eff, ["sweep.csv", "aggregate.csv"])
    print(f"{len(rows)} runs -> {d}")
    return EXIT_OK


def cmd_validate(args) -> int:
    ls = load(args.scenario)
    lg = build_layered_graph(ls.scenario)
    print(f"{ls.path}: ok ({lg.graph.num_nodes} layered nodes, {lg.graph.num_edges} edges, "
          f"{lg.num_commodities} clients)")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lifenet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario_required=False):
        sp.add_argument("--scenario", required=scenario_required,
                        help="scenario TOML file or built-in name (abilene)")
        sp.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./lifenet-out)")

    def overrides(sp):
        sp.add_argument("--T", type=_int_like, help="horizon in slots")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--V", type=float, help="tradeoff weight quoted for 1-Mb data units")
        sp.add_argument("--V-native", dest="V_native", type=float, help="tradeoff weight in flow units")
        sp.add_argument("--L", type=int, help="max lifetime for every client")
        sp.add_argument("--lambda-scale", dest="lambda_scale", type=float, help="multiply every client's rate")
        sp.add_argument("--process", choices=("poisson", "deterministic", "uniform"))
        sp.add_argument("--matching", choices=("skip", "local", "clip"))
        sp.add_argument("--manifest", help="replay the effective config of a previous manifest")

    r = sub.add_parser("run", help="simulate one policy")
    common(r)
    overrides(r)
    r.add_argument("--policy", choices=POLICIES)
    r.add_argument("--stride", type=int, default=1, help="write every n-th slot to metrics.csv")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("capacity", help="capacity-region boundary per max lifetime")
    common(c)
    c.add_argument("--L", dest="L_values", type=int, nargs="*", default=None, required=True)
    c.add_argument("--tol", type=float, default=1e-3)
    c.add_argument("--lambda-scale", dest="lambda_scale", type=float, default=1.0)
    c.add_argument("--require-feasible", action="store_true",
                   help="exit 4 if the scenario's own rates are outside the region")
    c.add_argument("--export-lp", action="store_true", help="also write each LP in CPLEX LP format")
    c.add_argument("--manifest", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_capacity)

    s = sub.add_parser("sweep", help="runs over a grid of lambda scales, V values or lifetimes")
    common(s)
    overrides(s)
    s.add_argument("--axis", choices=SWEEP_AXES, required=False, default="V")
    s.add_argument("--values", type=float, nargs="*", default=None)
    s.add_argument("--native", action="store_true", help="V values are already in flow units")
    s.add_argument("--policies", nargs="*", choices=POLICIES, default=["proposed"])
    s.add_argument("--replications", type=int, default=1)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate", help="schema-check a scenario file")
    v.add_argument("scenario")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "sweep" and args.axis == "L" and args.values:
            args.values = [int(v) for v in args.values]
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationAborted, InvariantError) as exc:
        print(f"invariant breach: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
