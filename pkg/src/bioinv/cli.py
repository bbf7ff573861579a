"""Command-line front door: validate instances, run solves, tune the optimism
weight, evaluate allocations, run simulations, and generate synthetic
instances.  Every run writes a manifest sufficient to reproduce it."""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .ccg import ALTERNATING, AH_THEN_MIP, EXACT_MIP, CcgOptions, solve_two_stage
from .formulations import Allocation, BioConfig
from .instance import load_instance, save_instance, validate_instance
from .reference import synthetic_instance
from .simulate import PolicySpec, batch_evaluate, kpi_table, run_rolling_horizon
from .tuning import DEFAULT_GRID, ScoringObjective, tune_lambda
from .uncertainty import (
    DemandMeans,
    UncertaintySet,
    load_scenarios,
    quantile_bounds_from_means,
    sample_scenarios,
    save_scenarios,
)


class CliError(Exception):
    pass


def _load_means(path: str) -> DemandMeans:
    with open(path) as fh:
        d = json.load(fh)
    unknown = set(d) - {"walkin", "online"}
    if unknown:
        raise CliError(f"{path}: unknown means fields {sorted(unknown)}")
    return DemandMeans(np.array(d["walkin"], dtype=float),
                       np.array(d.get("online", [[] for _ in d["walkin"]]), dtype=float))


def _save_means(path: str, means: DemandMeans):
    with open(path, "w") as fh:
        json.dump({"walkin": means.walkin.tolist(), "online": means.online.tolist()},
                  fh, indent=1)


def _out_dir(args) -> str:
    out = args.out or os.environ.get("BIOINV_OUT_DIR") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _write(args, out_dir: str, name: str, payload):
    path = os.path.join(out_dir, name)
    if os.path.exists(path) and not args.force:
        raise CliError(f"{path} exists; pass --force to overwrite")
    if isinstance(payload, str):
        with open(path, "w") as fh:
            fh.write(payload)
    else:
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")
    return path


def _manifest(args, extra=None) -> dict:
    d = {
        "command": args.command,
        "argv": sys.argv[1:],
        "package_version": __version__,
        "numpy_version": np.__version__,
        "seed": getattr(args, "seed", None),
        "threads": _threads(),
        "config": {k: v for k, v in vars(args).items()
                   if k not in ("func", "command") and v is not None},
    }
    if extra:
        d.update(extra)
    return d


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("BIOINV_THREADS", "1")))
    except ValueError:
        return 1


def _ccg_options(args) -> CcgOptions:
    return CcgOptions(
        epsilon=args.epsilon, delta=args.delta,
        max_iterations=args.max_iterations, max_seconds=args.max_seconds,
        subproblem_mode=args.subproblem_mode,
        mip_node_limit=args.mip_node_limit,
    )


def _uncertainty_for(args, inst) -> UncertaintySet:
    if args.uncertainty:
        with open(args.uncertainty) as fh:
            return UncertaintySet.from_dict(json.load(fh))
    if args.means:
        means = _load_means(args.means)
        return quantile_bounds_from_means(means, args.lower_q, args.upper_q)
    raise CliError("provide --uncertainty or --means")


def _add_ccg_flags(sp):
    sp.add_argument("--epsilon", type=float, default=1e-4)
    sp.add_argument("--delta", type=float, default=1e-5)
    sp.add_argument("--max-iterations", type=int, default=20)
    sp.add_argument("--max-seconds", type=float, default=300.0)
    sp.add_argument("--subproblem-mode", default=EXACT_MIP,
                    choices=[EXACT_MIP, ALTERNATING, AH_THEN_MIP])
    sp.add_argument("--mip-node-limit", type=int, default=None)


def cmd_validate(args) -> int:
    inst = load_instance(args.instance)
    violations = validate_instance(inst)
    for v in violations:
        print(v)
    print(f"{len(violations)} violation(s)")
    return 0 if not violations else 1


def cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    violations = validate_instance(inst)
    if violations and not args.allow_violations:
        for v in violations:
            print(v, file=sys.stderr)
        raise CliError("instance violates model assumptions "
                       "(--allow-violations to proceed)")
    uset = _uncertainty_for(args, inst)
    cfg = BioConfig(lam=args.lam, allied_channels=args.allied,
                    integer_allocations=args.integer,
                    repositioning=args.repositioning)
    report = solve_two_stage(inst, uset, cfg, _ccg_options(args))
    out = _out_dir(args)
    _write(args, out, "solve_report.json", report.to_dict())
    trace = "iteration,lower_bound,upper_bound\n" + "\n".join(
        f"{i},{lb!r},{ub!r}" for i, (lb, ub) in
        enumerate(zip(report.lower_bounds, report.upper_bounds)))
    _write(args, out, "bound_trace.csv", trace + "\n")
    _write(args, out, "run_manifest.json", _manifest(args))
    print(f"objective {report.objective:.6f} ({report.termination}, "
          f"{report.iterations} iterations)")
    print(f"allocation {report.allocation.x.tolist()}")
    if report.worst_case_profit is not None:
        print(f"worst-case profit {report.worst_case_profit:.6f}")
    return 0


def cmd_evaluate(args) -> int:
    inst = load_instance(args.instance)
    with open(args.allocation) as fh:
        alloc = Allocation.from_dict(json.load(fh))
    scenarios, meta = load_scenarios(args.scenarios)
    stats = batch_evaluate(inst, alloc, scenarios)
    profits = stats.pop("profits")
    out = _out_dir(args)
    _write(args, out, "evaluation.json", {**stats, "scenarios_meta": meta})
    _write(args, out, "profits.csv",
           "scenario,profit\n" + "\n".join(f"{i},{p!r}" for i, p in enumerate(profits)) + "\n")
    _write(args, out, "run_manifest.json", _manifest(args))
    print(json.dumps(stats, indent=1))
    return 0


def cmd_tune(args) -> int:
    inst = load_instance(args.instance)
    uset = _uncertainty_for(args, inst)
    if args.scenarios:
        scenarios, _meta = load_scenarios(args.scenarios)
    else:
        if not args.means:
            raise CliError("tune needs --scenarios or --means to sample from")
        means = _load_means(args.means)
        scenarios = sample_scenarios(means, args.samples, args.seed, args.family,
                                     uset=uset)
    objective = (ScoringObjective("cvar", level=args.cvar_level)
                 if args.objective == "cvar" else ScoringObjective(args.objective))
    grid = tuple(float(v) for v in args.grid.split(",")) if args.grid else DEFAULT_GRID
    result = tune_lambda(inst, uset, scenarios, objective, method=args.method,
                         grid=grid, options=_ccg_options(args),
                         cfg_base=BioConfig(integer_allocations=args.integer))
    out = _out_dir(args)
    _write(args, out, "tune_report.json", result.to_dict())
    _write(args, out, "lambda_curve.csv",
           "lambda,validation_score\n" + "\n".join(f"{l!r},{s!r}" for l, s in result.curve) + "\n")
    _write(args, out, "run_manifest.json", _manifest(args))
    print(f"lambda* = {result.lam}  holdout score = {result.score:.6f}")
    return 0


def cmd_simulate(args) -> int:
    inst = load_instance(args.instance)
    means = _load_means(args.means)
    policies = {}
    for name in args.policy:
        if name.startswith("bio"):
            lam = float(name[3:]) / 100.0 if len(name) > 3 else args.lam
            spec = PolicySpec("bio", lam=lam, planning_horizon=inst.horizon)
            spec.ccg.max_iterations = args.max_iterations
            spec.ccg.subproblem_mode = args.subproblem_mode
            spec.ccg.mip_node_limit = args.mip_node_limit
        else:
            spec = PolicySpec(name, planning_horizon=inst.horizon)
        policies[name] = spec

    results = {}
    def run_one(item):
        name, spec = item
        return name, run_rolling_horizon(inst, spec, means, args.weeks,
                                         args.replications, args.seed)
    workers = _threads()
    if workers > 1 and len(policies) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for name, res in pool.map(run_one, policies.items()):
                results[name] = res
    else:
        for item in policies.items():
            name, res = run_one(item)
            results[name] = res

    out = _out_dir(args)
    _write(args, out, "kpi_ledger.csv", kpi_table(results))
    summary = {name: {k: {"mean": v[0], "stderr": v[1]} for k, v in agg.items()}
               for name, (agg, _reps) in results.items()}
    _write(args, out, "kpi_summary.json", summary)
    _write(args, out, "run_manifest.json", _manifest(args))
    for name, (agg, _reps) in results.items():
        print(f"{name}: realized_profit {agg['realized_profit'][0]:.2f} "
              f"± {agg['realized_profit'][1]:.2f}")
    return 0


def cmd_gen_instance(args) -> int:
    inst, means = synthetic_instance(args.stores, args.dcs, args.zones,
                                     seed=args.seed, horizon=args.horizon,
                                     weeks=args.weeks, lead_time=args.lead_time,
                                     mean_range=tuple(args.mean_range),
                                     cost_range=tuple(args.cost_range))
    if os.path.exists(args.out_file) and not args.force:
        raise CliError(f"{args.out_file} exists; pass --force to overwrite")
    save_instance(inst, args.out_file)
    if args.means_out:
        if os.path.exists(args.means_out) and not args.force:
            raise CliError(f"{args.means_out} exists; pass --force to overwrite")
        _save_means(args.means_out, means)
    print(f"wrote {args.out_file}" + (f" and {args.means_out}" if args.means_out else ""))
    return 0


def cmd_sample(args) -> int:
    means = _load_means(args.means)
    uset = None
    if args.family == "uniform":
        uset = quantile_bounds_from_means(means, args.lower_q, args.upper_q)
    scen = sample_scenarios(means, args.samples, args.seed, args.family, uset=uset)
    if os.path.exists(args.out_file) and not args.force:
        raise CliError(f"{args.out_file} exists; pass --force to overwrite")
    save_scenarios(args.out_file, scen, seed=args.seed, family=args.family)
    print(f"wrote {len(scen)} scenarios to {args.out_file}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="bioinv",
        description="Optimistic-robust omnichannel inventory positioning")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check instance assumptions")
    p.add_argument("instance")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="two-stage robust / BIO solve")
    p.add_argument("instance")
    p.add_argument("--uncertainty", help="uncertainty-set JSON")
    p.add_argument("--means", help="demand means JSON (Poisson quantile bounds)")
    p.add_argument("--lower-q", type=float, default=0.05)
    p.add_argument("--upper-q", type=float, default=0.95)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--allied", default="walkin", choices=["walkin", "both"])
    p.add_argument("--integer", action="store_true")
    p.add_argument("--repositioning", action="store_true")
    p.add_argument("--allow-violations", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    _add_ccg_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("evaluate", help="score an allocation on scenarios")
    p.add_argument("instance")
    p.add_argument("--allocation", required=True)
    p.add_argument("--scenarios", required=True)
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("tune", help="choose lambda on out-of-sample scores")
    p.add_argument("instance")
    p.add_argument("--uncertainty")
    p.add_argument("--means")
    p.add_argument("--scenarios")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--family", default="poisson", choices=["poisson", "uniform"])
    p.add_argument("--lower-q", type=float, default=0.05)
    p.add_argument("--upper-q", type=float, default=0.95)
    p.add_argument("--method", default="grid", choices=["grid", "bisection"])
    p.add_argument("--grid", help="comma-separated lambda values")
    p.add_argument("--objective", default="mean",
                   choices=["mean", "worst_case", "best_case", "cvar"])
    p.add_argument("--cvar-level", type=float, default=0.05)
    p.add_argument("--integer", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    _add_ccg_flags(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("simulate", help="rolling-horizon business simulation")
    p.add_argument("instance")
    p.add_argument("--means", required=True, help="weekly demand means JSON")
    p.add_argument("--policy", nargs="+", default=["basestock"],
                   help="basestock | pwl | bio | bioNN (e.g. bio10)")
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--weeks", type=int, default=3)
    p.add_argument("--replications", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iterations", type=int, default=12)
    p.add_argument("--subproblem-mode", default=ALTERNATING,
                   choices=[EXACT_MIP, ALTERNATING, AH_THEN_MIP])
    p.add_argument("--mip-node-limit", type=int, default=None)
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gen-instance", help="generate a synthetic instance")
    p.add_argument("--stores", type=int, required=True)
    p.add_argument("--dcs", type=int, default=0)
    p.add_argument("--zones", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=int, default=2)
    p.add_argument("--weeks", type=int, default=None)
    p.add_argument("--lead-time", type=int, default=1)
    p.add_argument("--mean-range", type=float, nargs=2, default=[0.5, 3.0],
                   metavar=("LO", "HI"), help="weekly Poisson mean range")
    p.add_argument("--cost-range", type=float, nargs=2, default=[0.35, 0.55],
                   metavar=("LO", "HI"), help="purchase cost as a price fraction")
    p.add_argument("--out-file", required=True)
    p.add_argument("--means-out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_instance)

    p = sub.add_parser("sample", help="draw seeded demand scenarios")
    p.add_argument("--means", required=True)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--family", default="poisson", choices=["poisson", "uniform"])
    p.add_argument("--lower-q", type=float, default=0.05)
    p.add_argument("--upper-q", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-file", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_sample)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # diagnostics, nonzero exit
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
