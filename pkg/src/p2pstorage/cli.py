"""Command line entry point.

Subcommands:
  check      feasibility (and strict) verdict for an instance file
  simulate   seeded replicated runs from an experiment spec, with metrics
  verify     exact oracle pipeline on a desk-scale instance
  reproduce  run a benchmark table preset and compare to reference values

Exit codes: 0 success, 1 usage or input error, 2 negative verdict
(infeasible instance / failed property).
"""

from __future__ import annotations

import argparse
import ast
import csv
import json
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import analysis, benchmarks, dynamics, feasibility, game
from .dynamics import GammaSchedule, SimConfig
from .game import GameParams
from .topology import Instance, instance_from_dict, load_instance

OUT_DIR_ENV = "P2PSTORAGE_OUT"

_SPEC_KEYS = {
    "instance",
    "params",
    "schedule",
    "variant",
    "horizon",
    "replications",
    "seed",
}


def evaluate_horizon(expr, inst: Instance) -> int:
    """Evaluate a horizon expression: an integer, or arithmetic over the
    variables sum_alpha and n (e.g. "2*sum_alpha")."""
    if isinstance(expr, int):
        value = expr
    elif isinstance(expr, str):
        names = {"sum_alpha": inst.total_alpha, "n": inst.n}

        def ev(node):
            if isinstance(node, ast.Expression):
                return ev(node.body)
            if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
                return node.value
            if isinstance(node, ast.Name):
                if node.id in names:
                    return names[node.id]
                raise ValueError(f"unknown name {node.id!r} in horizon expression")
            if isinstance(node, ast.BinOp) and isinstance(
                node.op, (ast.Add, ast.Sub, ast.Mult, ast.FloorDiv, ast.Div)
            ):
                left, right = ev(node.left), ev(node.right)
                if isinstance(node.op, ast.Add):
                    return left + right
                if isinstance(node.op, ast.Sub):
                    return left - right
                if isinstance(node.op, ast.Mult):
                    return left * right
                if isinstance(node.op, ast.FloorDiv):
                    return left // right
                return left / right
            if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
                return -ev(node.operand)
            raise ValueError("unsupported construct in horizon expression")

        try:
            value = ev(ast.parse(expr, mode="eval"))
        except (SyntaxError, ZeroDivisionError) as exc:
            raise ValueError(f"bad horizon expression {expr!r}: {exc}") from exc
    else:
        raise ValueError("horizon must be an integer or an expression string")
    if value != int(value) or value < 0:
        raise ValueError(f"horizon must evaluate to a nonnegative integer, got {value}")
    return int(value)


def _schedule_from_dict(data: dict) -> GammaSchedule:
    if not isinstance(data, dict):
        raise ValueError("'schedule' must be a mapping")
    unknown = set(data) - {"kind", "gamma0", "increment"}
    if unknown:
        raise ValueError(f"unknown schedule keys: {sorted(unknown)}")
    kind = data.get("kind", "annealed")
    if kind == "infinite":
        return GammaSchedule.infinite()
    gamma0 = float(data.get("gamma0", 1.0))
    increment = data.get("increment")
    if kind == "fixed":
        return GammaSchedule.fixed(gamma0)
    if kind == "annealed":
        return GammaSchedule.annealed(gamma0, None if increment is None else float(increment))
    raise ValueError(f"unknown schedule kind {kind!r}")


def load_experiment_spec(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("experiment spec must be a mapping")
    unknown = set(data) - _SPEC_KEYS
    if unknown:
        raise ValueError(f"unknown spec keys: {sorted(unknown)}")
    inst_src = data.get("instance")
    if not isinstance(inst_src, dict):
        raise ValueError("'instance' must be a mapping (inline or {'path': ...})")
    if set(inst_src) == {"path"}:
        base = Path(path).parent
        inst = load_instance(base / inst_src["path"])
    else:
        inst = instance_from_dict(inst_src)
    params_src = data.get("params", {})
    unknown = set(params_src) - {"k_c", "k_a", "gamma"}
    if unknown:
        raise ValueError(f"unknown params keys: {sorted(unknown)}")
    params = GameParams(
        k_c=float(params_src.get("k_c", 1.0)),
        k_a=float(params_src.get("k_a", 0.0)),
        gamma=float(params_src.get("gamma", 1.0)),
    )
    return {
        "instance": inst,
        "params": params,
        "schedule": _schedule_from_dict(data.get("schedule", {"kind": "annealed"})),
        "variant": data.get("variant", dynamics.ALLOCATE_FIRST),
        "horizon": data.get("horizon", "2*sum_alpha"),
        "replications": int(data.get("replications", 1)),
        "seed": int(data.get("seed", 0)),
    }


def _out_dir(args) -> Path:
    if args.out:
        path = Path(args.out)
    else:
        path = Path(os.environ.get(OUT_DIR_ENV, "results"))
    path.mkdir(parents=True, exist_ok=True)
    return path


def _run_one(payload):
    config, compute_rho = payload
    result = dynamics.run(config)
    report = analysis.compute_metrics(
        config.instance, config.params, result, allow_partial=True
    )
    if compute_rho and result.completed:
        report.rho, report.rho_tag = analysis.compute_rho(
            config.instance, config.params, result.final_state
        )
    return result, report


def _run_replications(configs, workers: int, compute_rho: bool = True):
    payloads = [(config, compute_rho) for config in configs]
    if workers > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_one, payloads))
    return [_run_one(p) for p in payloads]


def _aggregate(rows: list[dict]) -> dict:
    keys = [
        k
        for k in rows[0]
        if any(isinstance(r[k], (int, float)) and r[k] is not None for r in rows)
    ]
    out = {}
    for k in keys:
        values = [r[k] for r in rows if isinstance(r[k], (int, float))]
        if not values:
            continue
        mean = sum(values) / len(values)
        var = sum((v - mean) ** 2 for v in values) / len(values)
        out[k] = {"mean": mean, "std": math.sqrt(var)}
    return out


def _write_trace(path: Path, inst: Instance, config: SimConfig, trace) -> None:
    lam_max = max(inst.reliability, default=0.0)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "unit", "kind", "source", "destination", "gamma"])
        for t, move in trace:
            gamma = dynamics.gamma_schedule_value(config.schedule, t, lam_max)
            writer.writerow(
                [
                    t,
                    move.unit,
                    move.kind,
                    "" if move.source is None else move.source,
                    move.dest,
                    "inf" if math.isinf(gamma) else f"{gamma:.10g}",
                ]
            )


def cmd_check(args) -> int:
    try:
        inst = load_instance(args.instance)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    verdict = feasibility.check_feasible_flow(inst)
    strict = feasibility.check_strict(inst) if verdict.feasible else None
    report = {
        "feasible": verdict.feasible,
        "strict": None if strict is None else strict.feasible,
        "witness": None,
    }
    if not verdict.feasible:
        report["witness"] = list(verdict.witness)
    elif strict is not None and not strict.feasible:
        report["strict_witness"] = list(strict.witness)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0 if verdict.feasible else 2


def cmd_simulate(args) -> int:
    try:
        spec = load_experiment_spec(args.spec)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    inst: Instance = spec["instance"]
    if args.seed is not None:
        spec["seed"] = args.seed
    if args.replications is not None:
        spec["replications"] = args.replications
    if args.variant is not None:
        spec["variant"] = args.variant
    if args.horizon is not None:
        spec["horizon"] = args.horizon
    if args.gamma0 is not None or args.gamma_increment is not None:
        sched: GammaSchedule = spec["schedule"]
        spec["schedule"] = GammaSchedule(
            sched.kind,
            args.gamma0 if args.gamma0 is not None else sched.gamma0,
            args.gamma_increment if args.gamma_increment is not None else sched.increment,
        )
    try:
        horizon = evaluate_horizon(spec["horizon"], inst)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    verdict = feasibility.check_feasible_flow(inst)
    if not verdict.feasible:
        print(
            "warning: instance is infeasible; completion is impossible "
            f"(violating units {list(verdict.witness)})",
            file=sys.stderr,
        )

    configs = [
        SimConfig(
            instance=inst,
            params=spec["params"],
            schedule=spec["schedule"],
            horizon=horizon,
            seed=spec["seed"] + r,
            variant=spec["variant"],
            record_trace=args.trace,
        )
        for r in range(spec["replications"])
    ]
    outcomes = _run_replications(configs, args.workers)
    out_dir = _out_dir(args)

    rows = []
    for r, (result, report) in enumerate(outcomes):
        row = {
            "run": r,
            "seed": configs[r].seed,
            "completed": int(result.completed),
            "steps_to_completion": result.steps_to_completion,
        }
        row.update(report.to_row())
        rows.append(row)
        if args.trace and result.trace is not None:
            _write_trace(out_dir / f"trace_{r}.csv", inst, configs[r], result.trace)

    with open(out_dir / "runs.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    summary = {
        "instance_fingerprint": inst.fingerprint(),
        "replications": spec["replications"],
        "seed_base": spec["seed"],
        "variant": spec["variant"],
        "horizon": horizon,
        "params": {"k_c": spec["params"].k_c, "k_a": spec["params"].k_a},
        "schedule": {
            "kind": spec["schedule"].kind,
            "gamma0": spec["schedule"].gamma0,
            "increment": spec["schedule"].increment,
        },
        "completed_runs": sum(r["completed"] for r in rows),
        "aggregate": _aggregate(rows),
    }
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(summary["aggregate"], indent=2, sort_keys=True))
    print(f"wrote {out_dir / 'runs.csv'} and {out_dir / 'summary.json'}")
    return 0


def _verify_absorption(inst: Instance, params: GameParams, trials: int, seed: int) -> dict:
    # Pure best-response probe: fraction of runs stuck short of completion.
    horizon = 20 * max(inst.total_alpha, 1)
    stuck = 0
    for r in range(trials):
        config = SimConfig(
            instance=inst,
            params=params,
            schedule=GammaSchedule.infinite(),
            horizon=horizon,
            seed=seed + r,
        )
        result = dynamics.run(config)
        if not result.completed:
            stuck += 1
    return {"trials": trials, "incomplete": stuck, "fraction": stuck / trials}


def cmd_verify(args) -> int:
    try:
        inst = load_instance(args.instance)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    params = GameParams(k_c=args.k_c, k_a=args.k_a)
    gamma = math.inf if args.gamma == "inf" else float(args.gamma)
    report: dict = {"gamma": "inf" if math.isinf(gamma) else gamma}
    checks: list[tuple[str, bool, str]] = []

    if math.isinf(gamma):
        probe = _verify_absorption(inst, params, trials=200, seed=args.seed)
        report["best_response_absorption"] = probe
        checks.append(
            (
                "best-response probe",
                True,
                f"{probe['incomplete']}/{probe['trials']} runs absorbed short of completion",
            )
        )
    else:
        try:
            oracle = analysis.enumerate_states(inst)
        except analysis.StateSpaceTooLarge as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        report["num_states"] = len(oracle)
        analysis.build_transition_matrix(oracle, params, gamma, args.variant)
        rows_ok = all(
            abs(sum(row.values()) - 1.0) <= 1e-12 for row in oracle.transition
        )
        checks.append(("kernel rows sum to 1", rows_ok, "tolerance 1e-12"))
        strict = feasibility.check_strict(inst)
        report["strict"] = strict.feasible
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            mu = analysis.stationary_exact(oracle, params, gamma)
        balance = analysis.detailed_balance_max_violation(oracle, mu)
        residual = analysis.stationarity_residual(oracle, mu)
        report["detailed_balance_max_violation"] = balance
        report["stationarity_residual"] = residual
        checks.append(("detailed balance", balance <= 1e-10, f"max violation {balance:.3e}"))
        checks.append(("stationarity", residual <= 1e-10, f"residual {residual:.3e}"))
        if strict.feasible:
            connected = analysis.is_support_connected(oracle)
            report["support_connected"] = connected
            checks.append(("ergodicity (support connected)", connected, ""))
        else:
            checks.append(
                (
                    "ergodicity",
                    True,
                    "skipped: strict covering condition fails, "
                    "connectivity of the full state space is not guaranteed",
                )
            )
        if args.empirical_steps > 0:
            emp = analysis.empirical_distribution(
                oracle, params, gamma, steps=args.empirical_steps, seed=args.seed
            )
            report["empirical_tv"] = emp.tv_distance
            checks.append(
                (
                    "empirical occupancy",
                    emp.tv_distance < args.empirical_tol,
                    f"TV {emp.tv_distance:.4f} (tolerance {args.empirical_tol})",
                )
            )

    failed = [name for name, ok, _ in checks if not ok]
    for name, ok, note in checks:
        status = "PASS" if ok else "FAIL"
        print(f"{status}  {name}" + (f"  ({note})" if note else ""))
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0 if not failed else 2


def cmd_reproduce(args) -> int:
    table = args.table
    presets = benchmarks.table_presets(table, args.replications, args.seed)
    reference = benchmarks.REFERENCE[table]
    comparison: dict = {"table": table, "columns": {}}
    for preset in presets:
        configs = benchmarks.make_configs(preset)
        outcomes = _run_replications(configs, args.workers)
        rows = [dict(r.to_row(), completed=int(res.completed)) for res, r in outcomes]
        agg = _aggregate(rows)
        col_index = reference["columns"].index(preset.column)
        cells = {}
        for metric, ref_values in reference["metrics"].items():
            ref = ref_values[col_index]
            ours = agg.get(metric, {}).get("mean")
            cells[metric] = {
                "reference": ref,
                "simulated": ours,
                "deviation": None if ours is None else ours - ref,
            }
        comparison["columns"][preset.column] = {
            "replications": preset.replications,
            "completed_runs": sum(r["completed"] for r in rows),
            "cells": cells,
        }
        print(f"table {table}  [{preset.column}]  ({preset.replications} runs)")
        print(f"  {'metric':<12} {'reference':>12} {'simulated':>12} {'deviation':>12}")
        for metric, cell in cells.items():
            sim = "-" if cell["simulated"] is None else f"{cell['simulated']:12.4f}"
            dev = "-" if cell["deviation"] is None else f"{cell['deviation']:+12.4f}"
            print(f"  {metric:<12} {cell['reference']:12.4f} {sim:>12} {dev:>12}")
    out_dir = _out_dir(args)
    out_path = out_dir / f"table{table}.json"
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(comparison, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="p2pstorage",
        description="Peer-to-peer storage allocation game: feasibility, simulation, verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_check = sub.add_parser("check", help="feasibility verdict for an instance file")
    p_check.add_argument("instance", help="path to an instance JSON file")
    p_check.set_defaults(func=cmd_check)

    p_sim = sub.add_parser("simulate", help="run an experiment spec")
    p_sim.add_argument("spec", help="path to an experiment spec JSON file")
    p_sim.add_argument("--seed", type=int, default=None, help="override seed base")
    p_sim.add_argument("--replications", type=int, default=None)
    p_sim.add_argument("--gamma0", type=float, default=None)
    p_sim.add_argument("--gamma-increment", type=float, default=None)
    p_sim.add_argument("--variant", choices=list(dynamics.VARIANTS), default=None)
    p_sim.add_argument("--horizon", default=None, help="integer or expression like 2*sum_alpha")
    p_sim.add_argument("--out", default=None, help=f"output dir (default ${OUT_DIR_ENV} or ./results)")
    p_sim.add_argument("--trace", action="store_true", help="write per-run move traces")
    p_sim.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p_sim.set_defaults(func=cmd_simulate)

    p_ver = sub.add_parser("verify", help="exact oracle pipeline on a desk-scale instance")
    p_ver.add_argument("instance", help="path to an instance JSON file")
    p_ver.add_argument("--gamma", default="1.0", help="Gibbs parameter, or 'inf'")
    p_ver.add_argument("--k-c", type=float, default=1.0, dest="k_c")
    p_ver.add_argument("--k-a", type=float, default=0.0, dest="k_a")
    p_ver.add_argument("--variant", choices=list(dynamics.VARIANTS), default="proportional")
    p_ver.add_argument("--seed", type=int, default=0)
    p_ver.add_argument("--empirical-steps", type=int, default=0)
    p_ver.add_argument("--empirical-tol", type=float, default=0.05)
    p_ver.set_defaults(func=cmd_verify)

    p_rep = sub.add_parser("reproduce", help="run a benchmark table preset")
    p_rep.add_argument("table", type=int, choices=[1, 2, 3, 4])
    p_rep.add_argument("--replications", type=int, default=None)
    p_rep.add_argument("--seed", type=int, default=None)
    p_rep.add_argument("--out", default=None)
    p_rep.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p_rep.set_defaults(func=cmd_reproduce)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
