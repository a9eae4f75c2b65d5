"""Command-line interface for curvatlas."""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from curvatlas.capacity import (
    build_hierarchy,
    capacity_brute,
    capacity_lower_bound,
    capacity_qp,
    dimension_bound_scan,
    dump_hierarchy,
    effective_k0,
    hierarchy_measure,
    measure_capacity,
)
from curvatlas.crossings import (
    ScaleLadder,
    Shell,
    detect_straight_runs,
    min_kfold_scale,
    shell_traversals,
    sparsity_check,
)
from curvatlas.curves import dump_curveset, load_config
from curvatlas.experiments import (
    ConfigError,
    ExperimentAborted,
    ExperimentConfig,
    parse_value,
    run_experiment,
)
from curvatlas.generators import GeneratorSpec
from curvatlas.lattice import LatticeField, dump_field
from curvatlas.metrics import MetricParams, config_distance, distance_matrix, write_distance_csv
from curvatlas.regularity import dimension_summary, reparametrize_holder, verify_modulus
from curvatlas.storage import SQLiteStorage

logger = logging.getLogger("curvatlas")

# Formatter registry: list of (predicate, formatter) tuples
# Each predicate checks if this formatter can handle the data
# Order matters - first match wins
_FORMATTERS: list[tuple[callable, callable]] = []


def _register_formatter(predicate: callable):
    """Decorator to register a formatter with its predicate."""

    def decorator(formatter: callable):
        _FORMATTERS.append((predicate, formatter))
        return formatter

    return decorator


def _fmt(x) -> str:
    if x is None:
        return "-"
    return f"{x:.4g}" if isinstance(x, float) else str(x)


@_register_formatter(lambda d: "result_count" in d and "db_path" in d)
def _format_status(data: dict) -> list[str]:
    lines = [
        "Results database status",
        "",
        f"Database: {data['db_path']}",
        f"Size: {data.get('db_size_bytes', 0) / 1024:.1f} KB",
        f"Schema version: {data.get('schema_version')}",
        f"Results: {data['result_count']:,}",
        f"Fits: {data.get('fit_count', 0):,}",
    ]
    for kind, n in data.get("results_by_kind", {}).items():
        lines.append(f"  {kind}: {n}")
    if data.get("earliest_result"):
        lines.append(f"Date range: {data['earliest_result'][:10]} to {data['latest_result'][:10]}")
    return lines


@_register_formatter(lambda d: "generated" in d)
def _format_generate(data: dict) -> list[str]:
    lines = [f"Generated {data['generated']} (trial {data['trial']}, seed {data['seed']})"]
    if "curves" in data:
        lines.append(f"Curves: {data['curves']}, vertices: {data['vertices']}")
        lines.append(f"Cutoff: {_fmt(data['cutoff'])}")
    else:
        lines.append(f"Field: {data['shape'][0]} x {data['shape'][1]} sites, {data['model']}")
        lines.append(f"Open fraction: {_fmt(data['open_fraction'])}")
    lines.append(f"Written to: {data['out']}")
    return lines


@_register_formatter(lambda d: "analyses" in d)
def _format_analyze(data: dict) -> list[str]:
    lines = [f"Dimension summary for {data['path']}", ""]
    for a in data["analyses"]:
        lines.append(
            f"  curve {a['curve']}: tau={_fmt(a['tau_hat'])} dimB={_fmt(a['dimB_hat'])} "
            f"alpha>={_fmt(a['alpha_lower'])} ordered={a['ordered']} tempered={a['tempered']}"
        )
        lines.append(f"    {a['k']}-fold crossing scale (eps={a['eps']}): {_fmt(a['kfold_scale'])}")
        if "modulus" in a:
            m = a["modulus"]
            lines.append(f"    modulus violations: {m['violations']} of {m['checked']}")
    return lines


@_register_formatter(lambda d: "traversals" in d)
def _format_traversals(data: dict) -> list[str]:
    return [f"Shell {data['shell']}: {data['traversals']} traversals"]


@_register_formatter(lambda d: "kfold_scale" in d)
def _format_kfold(data: dict) -> list[str]:
    return [f"Smallest {data['k']}-fold crossing scale (eps={data['eps']}): {data['kfold_scale']}"]


@_register_formatter(lambda d: "sparse" in d and "runs" in d)
def _format_sparsity(data: dict) -> list[str]:
    lines = [
        f"Straight runs: {data['n_runs']} over {data['k_max'] + 1} scales (gamma={data['gamma']})",
        f"Longest nested chain: {data['longest_chain']}",
        f"Sparse (k0={data['k0']}): {data['sparse']}",
    ]
    for run in data["runs"][:20]:
        lines.append(f"  {run}")
    if len(data["runs"]) > 20:
        lines.append(f"  ... {len(data['runs']) - 20} more")
    return lines


@_register_formatter(lambda d: "capacity" in d and "lower_bound" in d)
def _format_capacity(data: dict) -> list[str]:
    return [
        f"Hierarchy: {data['generations']} generations, {data['n_leaves']} leaves, "
        f"effective k0 = {data['k0']}",
        f"Capacity ({data['method']}, s={_fmt(data['s'])}, l={_fmt(data['ell'])}): "
        f"{_fmt(data['capacity'])}",
        f"Hierarchy-measure capacity: {_fmt(data['measure_capacity'])}",
        f"Lower bound: {_fmt(data['lower_bound'])}",
        *(
            [f"Dimension lower bound: {_fmt(data['dimension_bound'])}"]
            if data.get("dimension_bound") is not None
            else []
        ),
    ]


@_register_formatter(lambda d: "distance" in d)
def _format_distance(data: dict) -> list[str]:
    return [f"Configuration distance: {_fmt(data['distance'])}"]


@_register_formatter(lambda d: "matrix_shape" in d)
def _format_matrix(data: dict) -> list[str]:
    lines = [f"Distance matrix {data['matrix_shape'][0]} x {data['matrix_shape'][1]}"]
    for row in data["matrix"][:10]:
        lines.append("  " + " ".join(f"{x:8.4g}" for x in row[:10]))
    if data.get("out"):
        lines.append(f"Written to: {data['out']}")
    return lines


@_register_formatter(lambda d: "experiment_id" in d and "metrics" in d)
def _format_experiment(data: dict) -> list[str]:
    metrics = data["metrics"]
    lines = [
        f"Experiment {data['experiment_id']} ({data['kind']})",
        f"Wall time: {data['wall_time']:.2f}s, version {data['version']}",
        f"Table rows: {len(metrics.get('table', []))}, failed trials: "
        f"{metrics.get('failed_trials', 0)}",
    ]
    for key in ("exponents", "rho_hat", "tau_hat_mean", "dimB_hat_mean", "monotone_fraction"):
        if key in metrics:
            lines.append(f"{key}: {metrics[key]}")
    if data.get("result_id") is not None:
        lines.append(f"Stored as result {data['result_id']}")
    return lines


@_register_formatter(lambda d: "results" in d)
def _format_results(data: dict) -> list[str]:
    lines = [f"Stored results: {len(data['results'])}", ""]
    for r in data["results"]:
        lines.append(
            f"  #{r['id']} {r['created_at']} {r['experiment_id']} ({r['wall_time']:.2f}s)"
        )
    return lines


def format_output(data: dict, json_output: bool = False) -> str:
    """Format output as JSON or human-readable."""
    if json_output:
        return json.dumps(data, indent=2, default=str)

    for predicate, formatter in _FORMATTERS:
        if predicate(data):
            return "\n".join(formatter(data))

    # Fallback to JSON if no formatter matches
    return json.dumps(data, indent=2, default=str)


def _parse_params(pairs: list[str] | None) -> dict:
    params = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise ValueError(f"parameter must look like key=value, got {pair!r}")
        params[key.strip()] = parse_value(value)
    return params


def cmd_status(args):
    """Show database status."""
    storage = SQLiteStorage()
    print(format_output(storage.get_db_stats(), args.json))


def cmd_generate(args):
    """Draw one sample from a generator and write it to a file."""
    spec = GeneratorSpec(args.generator, _parse_params(args.param), args.seed)
    sample = spec.sample(args.trial)
    result = {"generated": args.generator, "trial": args.trial, "seed": args.seed}
    if isinstance(sample, LatticeField):
        text = dump_field(sample)
        result.update(
            shape=list(sample.shape), model=sample.model, open_fraction=sample.occupied_fraction()
        )
    else:
        text = dump_curveset(sample.curves, sample.cutoff, sample.dim)
        result.update(
            curves=len(sample),
            vertices=sum(len(c) for c in sample),
            cutoff=sample.cutoff,
        )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    result["out"] = str(out)
    print(format_output(result, args.json))


def cmd_analyze(args):
    """Fit tortuosity and box exponents of every curve in a curveset."""
    config = load_config(args.path)
    window = (args.lmin, args.lmax) if args.lmin and args.lmax else None
    analyses = []
    for i, curve in enumerate(config):
        summary = dimension_summary(curve, args.eps, args.k, window)
        entry = {
            "curve": i,
            **{k: v for k, v in summary.items() if k not in ("tau", "dimB")},
            "fits": [summary["tau"].to_dict(), summary["dimB"].to_dict()],
        }
        if args.holder:
            entry["modulus"] = verify_modulus(curve, reparametrize_holder(curve), args.pairs)
        analyses.append(entry)
    print(format_output({"path": args.path, "analyses": analyses}, args.json))


def cmd_crossings(args):
    """Shell traversals, k-fold crossing scales or straight-run sparsity of a curveset."""
    config = load_config(args.path)
    if args.shell:
        cx, cy, inner, outer = args.shell
        shell = Shell(np.array([cx, cy]), inner, outer)
        result = {"shell": args.shell, "traversals": shell_traversals(config, shell)}
    elif args.kfold:
        eps, k = args.kfold
        result = {
            "eps": eps,
            "k": int(k),
            "kfold_scale": min_kfold_scale(config, eps, int(k), mode=args.mode),
        }
    else:
        gamma, k_max = args.runs
        ladder = ScaleLadder(args.L0, gamma, int(k_max), args.k0)
        runs = detect_straight_runs(config, ladder, width_factor=args.width_factor)
        report = sparsity_check(config, ladder, runs, width_factor=args.width_factor)
        result = {
            "gamma": gamma,
            "k_max": int(k_max),
            **{k: v for k, v in report.items() if k != "witness"},
            "runs": [r.to_record() for r in runs],
        }
    print(format_output(result, args.json))


def cmd_capacity(args):
    """Build a hierarchy on the first curve and bound its capacity."""
    config = load_config(args.path)
    curve = max(config, key=lambda c: c.length)
    H = build_hierarchy(curve, args.gamma, args.m, args.k_max, args.L0)
    ell = args.ell if args.ell is not None else float(H.scales[-1])
    k0 = effective_k0(H)
    mu = hierarchy_measure(H)
    if args.method == "brute":
        best = capacity_brute(mu.support, args.s, ell)
    elif args.method == "hierarchy-bound":
        best = measure_capacity(mu, args.s, ell)
    else:
        best = capacity_qp(mu.support, args.s, ell)
    if args.hierarchy_out:
        Path(args.hierarchy_out).write_text(dump_hierarchy(H))
    result = {
        "generations": H.k_max + 1,
        "n_leaves": len(H.leaves),
        "k0": k0,
        **best.to_dict(),
        "measure_capacity": measure_capacity(mu, args.s, ell).capacity,
        "lower_bound": capacity_lower_bound(H, args.s, k0),
        "record": best.to_record(),
    }
    if args.dimension_bound:
        scan = dimension_bound_scan(curve, args.m)
        result["dimension_bound"] = scan["bound"]
        result["dimension_limit_bound"] = scan["limit_bound"]
        result["dimension_scan"] = scan["rows"]
    print(format_output(result, args.json))


def cmd_distance(args):
    """Fréchet distance matrix of one curveset, or the distance between two configurations."""
    params = MetricParams(args.tol)
    first = load_config(args.path)
    if args.other:
        result = {"distance": config_distance(first, load_config(args.other), params)}
    else:
        matrix = distance_matrix(first.curves, params, args.threads)
        result = {"matrix_shape": list(matrix.shape), "matrix": matrix.tolist()}
        if args.out:
            result["out"] = str(write_distance_csv(args.out, matrix))
    print(format_output(result, args.json))


def cmd_experiment(args):
    """Run an experiment file and store its result."""
    cfg = ExperimentConfig.from_ini(
        args.config,
        seed=args.seed,
        trials=args.trials,
        threads=args.threads,
        output_path=args.out,
    )
    record = run_experiment(cfg)
    result = record.to_dict()
    if not args.no_store:
        result["result_id"] = SQLiteStorage().add_result(record)
    print(format_output(result, args.json))


def cmd_results(args):
    """List stored results, or show one with its fits."""
    storage = SQLiteStorage()
    if args.id is not None:
        stored = storage.get_result(args.id)
        if stored is None:
            raise ValueError(f"no stored result with id {args.id}")
        result = {
            "id": stored.id,
            "experiment_id": stored.experiment_id,
            "kind": stored.kind,
            "config": stored.config,
            "metrics": stored.metrics,
            "fits": [f.to_dict() for f in storage.get_fits(stored.id)],
            "wall_time": stored.wall_time,
            "version": stored.version,
            "created_at": stored.created_at,
        }
    else:
        result = {
            "results": [
                {
                    "id": r.id,
                    "experiment_id": r.experiment_id,
                    "kind": r.kind,
                    "wall_time": r.wall_time,
                    "created_at": r.created_at,
                }
                for r in storage.list_results(args.kind, args.limit)
            ]
        }
    print(format_output(result, args.json))


def _configure_logging():
    level = logging.DEBUG if os.environ.get("CURVATLAS_DEBUG") else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(asctime)s [%(levelname)s] %(message)s",
        datefmt="%H:%M:%S",
    )


def build_parser() -> argparse.ArgumentParser:
    epilog = """
Examples:
  curvatlas generate --generator lerw --param n=256 --seed 7 --out lerw.txt
  curvatlas analyze lerw.txt --eps 0.1 --k 3       # Tortuosity and box exponents
  curvatlas crossings lerw.txt --runs 8 6          # Straight runs and sparsity
  curvatlas capacity koch.txt --gamma 5 --m 4 --k-max 3
  curvatlas experiment --config lambda.ini --threads 8
  curvatlas status                                 # Results database stats

All commands support --json for machine-readable output.
Data location: ~/.curvatlas/results.db (override with CURVATLAS_DB)
"""
    parser = argparse.ArgumentParser(
        description="curvatlas - regularity, crossing and capacity analysis of random curves",
        prog="curvatlas",
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--json", action="store_true", help="Output as JSON")
    subparsers = parser.add_subparsers(dest="command", required=True)

    # status
    sub = subparsers.add_parser("status", help="Show results database status")
    sub.set_defaults(func=cmd_status)

    # generate
    sub = subparsers.add_parser("generate", help="Draw a sample from a generator")
    sub.add_argument("--generator", required=True, help="Generator kind (e.g., lerw, bond_perc)")
    sub.add_argument(
        "--param", action="append", metavar="KEY=VALUE", help="Generator parameter (repeatable)"
    )
    sub.add_argument("--seed", type=int, default=0, help="Master seed (default: 0)")
    sub.add_argument("--trial", type=int, default=0, help="Trial index (default: 0)")
    sub.add_argument("--out", required=True, help="Output file (curveset or field)")
    sub.set_defaults(func=cmd_generate)

    # analyze
    sub = subparsers.add_parser("analyze", help="Fit tortuosity and box exponents")
    sub.add_argument("path", help="Curveset file")
    sub.add_argument("--eps", type=float, default=0.1, help="Crossing power (default: 0.1)")
    sub.add_argument("--k", type=int, default=3, help="Crossing multiplicity (default: 3)")
    sub.add_argument("--lmin", type=float, help="Smallest fit scale")
    sub.add_argument("--lmax", type=float, help="Largest fit scale")
    sub.add_argument("--holder", action="store_true", help="Also check the Hölder modulus")
    sub.add_argument(
        "--pairs", type=int, default=10_000, help="Pairs for the modulus check (default: 10000)"
    )
    sub.set_defaults(func=cmd_analyze)

    # crossings
    sub = subparsers.add_parser("crossings", help="Shell traversals and straight runs")
    sub.add_argument("path", help="Curveset file")
    mode = sub.add_mutually_exclusive_group(required=True)
    mode.add_argument(
        "--shell",
        type=float,
        nargs=4,
        metavar=("CX", "CY", "INNER", "OUTER"),
        help="Count traversals",
    )
    mode.add_argument(
        "--kfold", type=float, nargs=2, metavar=("EPS", "K"), help="Smallest k-fold crossing scale"
    )
    mode.add_argument(
        "--runs", type=float, nargs=2, metavar=("GAMMA", "K_MAX"), help="Straight runs and sparsity"
    )
    sub.add_argument(
        "--mode", choices=["direct", "coarse"], default="direct", help="Shell family for --kfold"
    )
    sub.add_argument("--L0", type=float, default=1.0, help="Top ladder scale (default: 1)")
    sub.add_argument("--k0", type=int, default=0, help="Sparsity offset (default: 0)")
    sub.add_argument(
        "--width-factor", type=float, default=10.0, help="Run width factor (default: 10)"
    )
    sub.set_defaults(func=cmd_crossings)

    # capacity
    sub = subparsers.add_parser("capacity", help="Hierarchy capacity and dimension bounds")
    sub.add_argument("path", help="Curveset file")
    sub.add_argument("--gamma", type=float, required=True, help="Scale ratio")
    sub.add_argument("--m", type=int, required=True, help="Minimum children per piece")
    sub.add_argument("--k-max", type=int, required=True, help="Number of generations below the top")
    sub.add_argument("--L0", type=float, help="Top scale (default: curve span)")
    sub.add_argument("--s", type=float, default=1.0, help="Energy exponent (default: 1)")
    sub.add_argument("--ell", type=float, help="Kernel cutoff (default: smallest scale)")
    sub.add_argument(
        "--method",
        choices=["qp", "brute", "hierarchy-bound"],
        default="qp",
        help="Capacity method (default: qp)",
    )
    sub.add_argument("--hierarchy-out", help="Write the hierarchy to this file")
    sub.add_argument(
        "--dimension-bound", action="store_true", help="Also scan gamma for the dimension bound"
    )
    sub.set_defaults(func=cmd_capacity)

    # distance
    sub = subparsers.add_parser("distance", help="Fréchet and configuration distances")
    sub.add_argument("path", help="Curveset file")
    sub.add_argument("other", nargs="?", help="Second curveset: print the configuration distance")
    sub.add_argument("--tol", type=float, help="Bisection tolerance (default: 1e-9 x diameter)")
    sub.add_argument("--out", help="Write the distance matrix as CSV")
    sub.add_argument("--threads", type=int, default=1, help="Worker threads (default: 1)")
    sub.set_defaults(func=cmd_distance)

    # experiment
    sub = subparsers.add_parser("experiment", help="Run an experiment config")
    sub.add_argument("--config", required=True, help="Experiment INI file")
    sub.add_argument("--seed", type=int, help="Override the master seed")
    sub.add_argument("--trials", type=int, help="Override the trial count")
    sub.add_argument("--out", help="Override the output table path")
    sub.add_argument("--threads", type=int, help="Worker threads")
    sub.add_argument("--no-store", action="store_true", help="Do not store the result")
    sub.set_defaults(func=cmd_experiment)

    # results
    sub = subparsers.add_parser("results", help="List or show stored results")
    sub.add_argument("--id", type=int, help="Show one result with its fits")
    sub.add_argument("--kind", help="Filter by experiment kind")
    sub.add_argument("--limit", type=int, default=20, help="Max results (default: 20)")
    sub.set_defaults(func=cmd_results)

    return parser


def main(argv: list[str] | None = None) -> int:
    """CLI entry point; returns the process exit code."""
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ExperimentAborted as e:
        print(f"aborted: {e}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
