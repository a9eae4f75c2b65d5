"""Experiment configuration, orchestration and table output.

An experiment is described by an INI file:

    [experiment]
    kind = lambda_scan
    trials = 200
    seed = 7

    [generator]
    kind = bond_perc
    n = 64
    p = 0.5

    [scales]
    ratios = 0.5, 0.25, 0.125
    k = 2

The metrics of a ResultRecord are a pure function of the config (thread count
and output path excluded), so replaying a config reproduces them byte for byte.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from curvatlas.capacity import (
    build_hierarchy,
    capacity_lower_bound,
    capacity_qp,
    dimension_lower_bound,
    effective_k0,
    hierarchy_measure,
    measure_capacity,
)
from curvatlas.crossings import (
    Cylinder,
    ScaleLadder,
    SeparationError,
    check_separation,
    estimate_lambda,
    estimate_rho,
    sparsity_probability,
)
from curvatlas.curves import CurveConfig, PolyCurve
from curvatlas.generators import ExperimentAborted, GeneratorSpec, map_trials
from curvatlas.metrics import MetricParams, coupling_gap
from curvatlas.regularity import ExponentFit, dimension_summary

logger = logging.getLogger("curvatlas")

EXPERIMENT_KINDS = ("lambda_scan", "rho_scan", "sparsity", "dimension", "capacity", "distance")

# Fraction of failed trials tolerated before an experiment aborts
DEFAULT_FAILURE_BUDGET = 0.01

TABLE_COLUMNS: dict[str, tuple[str, ...]] = {
    "lambda_scan": ("ratio", "k", "p", "stderr", "trials"),
    "rho_scan": ("k", "p", "stderr", "trials"),
    "sparsity": ("k0", "p", "stderr", "trials"),
    "dimension": ("trial", "ell", "partition", "box"),
    "capacity": (
        "trial",
        "n_leaves",
        "k0",
        "s",
        "ell",
        "energy",
        "capacity",
        "measure_capacity",
        "lower_bound",
        "dimension_bound",
    ),
    "distance": ("trial", "index", "value", "gap"),
}

_REQUIRED_SCALES = {
    "lambda_scan": ("ratios",),
    "rho_scan": ("cylinders",),
    "sparsity": ("gamma", "k_max", "k0_values"),
    "dimension": (),
    "capacity": ("gamma", "m", "k_max"),
    "distance": ("vary", "values"),
}

_CURVE_ONLY = ("sparsity", "dimension", "capacity", "distance")

__all__ = [
    "ConfigError",
    "EXPERIMENT_KINDS",
    "ExperimentAborted",
    "ExperimentConfig",
    "ResultRecord",
    "emit_table",
    "read_table",
    "run_experiment",
]


class ConfigError(ValueError):
    """An experiment config failed validation; ``diagnostics`` lists every problem."""

    def __init__(self, diagnostics: list[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("invalid experiment config: " + "; ".join(self.diagnostics))


# Config parsing


def _parse_scalar(text: str) -> Any:
    text = text.strip()
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def parse_value(text: str) -> Any:
    """int, float, bool, comma list of those, or the raw string."""
    if "," in text:
        return [_parse_scalar(part) for part in text.split(",") if part.strip()]
    return _parse_scalar(text)


def _parse_cylinders(text: str) -> list[list[float]]:
    """``ax, ay, bx, by, width; ...`` (any dimension: 2d + 1 numbers per cylinder)."""
    rows = []
    for chunk in text.split(";"):
        if chunk.strip():
            rows.append([float(x) for x in chunk.split(",")])
    return rows


def _as_list(value) -> list:
    return list(value) if isinstance(value, list | tuple) else [value]


def _generator_cutoff(spec: GeneratorSpec) -> float:
    """Lattice spacing or fixture cutoff of the samples a spec produces."""
    if spec.kind == "fixture":
        return float(spec.params.get("cutoff", 2.0**-8))
    return 1.0 / float(spec.params["n"])


def _cylinders(rows: list[list[float]]) -> list[Cylinder]:
    cylinders = []
    for row in rows:
        if len(row) < 5 or len(row) % 2 != 1:
            raise ValueError(f"cylinder needs 2d + 1 numbers, got {len(row)}")
        d = (len(row) - 1) // 2
        cylinders.append(Cylinder(row[:d], row[d : 2 * d], row[-1]))
    return cylinders


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment description.

    ``threads`` and ``output_path`` only affect how an experiment runs, never
    its metrics; they are left out of the config echo and the experiment id.
    """

    experiment: str
    generator: GeneratorSpec
    trials: int = 1
    seed: int = 0
    threads: int = 1
    scales: dict[str, Any] = field(default_factory=dict)
    output_path: Path | None = None
    failure_budget: float = DEFAULT_FAILURE_BUDGET

    def __post_init__(self):
        problems = self.validate()
        if problems:
            raise ConfigError(problems)

    def validate(self) -> list[str]:
        """Every problem with the config, one message per field."""
        problems = []
        if self.experiment not in EXPERIMENT_KINDS:
            problems.append(f"experiment.kind: unknown {self.experiment!r}")
            return problems
        if not isinstance(self.trials, int) or self.trials < 1:
            problems.append(f"experiment.trials: must be an integer >= 1, got {self.trials!r}")
        if not isinstance(self.threads, int) or self.threads < 1:
            problems.append(f"experiment.threads: must be an integer >= 1, got {self.threads!r}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            problems.append(
                f"experiment.seed: must be an unsigned 64-bit integer, got {self.seed!r}"
            )
        if not 0 <= self.failure_budget < 1:
            problems.append(
                f"experiment.failure_budget: must lie in [0, 1), got {self.failure_budget!r}"
            )
        for key in _REQUIRED_SCALES[self.experiment]:
            if key not in self.scales:
                problems.append(f"scales.{key}: required for {self.experiment}")
        if self.experiment in _CURVE_ONLY and self.generator.produces_field:
            problems.append(
                f"generator.family: {self.experiment} needs curves; set family = path"
            )
        problems.extend(self._check_scales())
        return problems

    def _check_scales(self) -> list[str]:
        s, problems = self.scales, []
        delta = _generator_cutoff(self.generator)
        for key in ("lmin", "lmax", "ell"):
            if key in s and not delta <= float(s[key]) <= 1:
                problems.append(f"scales.{key}: {s[key]} outside [{delta:g}, 1]")
        if "lmin" in s and "lmax" in s and not float(s["lmin"]) < float(s["lmax"]):
            problems.append("scales.lmin: must be below scales.lmax")
        if "ratios" in s:
            ratios = _as_list(s["ratios"])
            if not ratios or not all(isinstance(r, int | float) and 0 < r < 1 for r in ratios):
                problems.append(f"scales.ratios: every ratio must lie in (0, 1), got {ratios}")
        if "outer" in s and not 0 < float(s["outer"]) <= 1:
            problems.append(f"scales.outer: must lie in (0, 1], got {s['outer']}")
        if "k" in s and (not isinstance(s["k"], int) or s["k"] < 1):
            problems.append(f"scales.k: must be an integer >= 1, got {s['k']!r}")
        if "cylinders" in s:
            try:
                check_separation(_cylinders(s["cylinders"]))
            except (SeparationError, ValueError) as e:
                problems.append(f"scales.cylinders: {e}")
        if self.experiment == "capacity" and {"gamma", "m"} <= s.keys():
            gamma, m = float(s["gamma"]), s["m"]
            if not isinstance(m, int) or not gamma / 2 <= m < gamma:
                problems.append(f"scales.m: must be an integer in [gamma/2, gamma), got {m!r}")
            elif gamma ** float(s.get("s", 1.0)) >= math.sqrt(m * (m + 1)):
                problems.append("scales.s: gamma**s must stay below sqrt(m (m + 1))")
        if self.experiment == "distance" and "vary" in s and s["vary"] not in self.generator.params:
            problems.append(f"scales.vary: {s['vary']!r} is not a generator parameter")
        return problems

    @classmethod
    def from_ini(
        cls,
        path: str | Path,
        seed: int | None = None,
        trials: int | None = None,
        threads: int | None = None,
        output_path: str | Path | None = None,
    ) -> ExperimentConfig:
        """Read an experiment file; keyword arguments override its values."""
        path = Path(path)
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with path.open() as f:
                parser.read_file(f)
        except OSError as e:
            raise ConfigError([f"{path}: {e.strerror or e}"]) from e
        except configparser.Error as e:
            raise ConfigError([f"{path}: {e}"]) from e

        problems = [
            f"[{name}]: missing section"
            for name in ("experiment", "generator")
            if not parser.has_section(name)
        ]
        if problems:
            raise ConfigError(problems)

        exp = {k: parse_value(v) for k, v in parser.items("experiment")}
        gen = {k: parse_value(v) for k, v in parser.items("generator")}
        scales = {}
        if parser.has_section("scales"):
            for key, raw in parser.items("scales"):
                scales[key] = _parse_cylinders(raw) if key == "cylinders" else parse_value(raw)

        if "kind" not in exp:
            problems.append("experiment.kind: missing")
        gen_kind = gen.pop("kind", None)
        master = seed if seed is not None else exp.get("seed", 0)
        try:
            spec = GeneratorSpec(str(gen_kind), gen, master if isinstance(master, int) else 0)
        except ValueError as e:
            problems.append(f"generator: {e}")
        if problems:
            raise ConfigError(problems)

        out = output_path if output_path is not None else exp.get("output")
        return cls(
            experiment=str(exp["kind"]),
            generator=spec,
            trials=trials if trials is not None else exp.get("trials", 1),
            seed=master,
            threads=threads if threads is not None else exp.get("threads", 1),
            scales=scales,
            output_path=Path(out) if out else None,
            failure_budget=float(exp.get("failure_budget", DEFAULT_FAILURE_BUDGET)),
        )

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "generator": {"kind": self.generator.kind, "params": self.generator.params},
            "trials": self.trials,
            "seed": self.seed,
            "scales": self.scales,
            "failure_budget": self.failure_budget,
        }

    @property
    def experiment_id(self) -> str:
        """Content hash of the config echo."""
        text = json.dumps(_plain(self.to_dict()), sort_keys=True)
        return f"{self.experiment}-{hashlib.sha256(text.encode()).hexdigest()[:12]}"


# Results


def _plain(value):
    """JSON-ready copy: numpy scalars and arrays, fits and tuples converted."""
    if isinstance(value, ExponentFit):
        return value.to_dict()
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, list | tuple):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, Path):
        return str(value)
    return value


@dataclass
class ResultRecord:
    """Outcome of one experiment run."""

    experiment_id: str
    kind: str
    config: dict
    metrics: dict
    fits: list[ExponentFit] = field(default_factory=list)
    wall_time: float = 0.0
    version: str = ""

    def metrics_json(self) -> str:
        return json.dumps(_plain(self.metrics), sort_keys=True)

    def to_dict(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "kind": self.kind,
            "config": _plain(self.config),
            "metrics": _plain(self.metrics),
            "wall_time": self.wall_time,
            "version": self.version,
        }


def _code_version() -> str:
    from curvatlas import __version__

    return __version__


def _curves_of(F: CurveConfig) -> list[PolyCurve]:
    curves = [c for c in F if len(c) > 1]
    if not curves:
        raise ValueError("sample contains no curve")
    return curves


def _longest(F: CurveConfig) -> PolyCurve:
    return max(_curves_of(F), key=lambda c: c.length)


def _run_lambda(cfg: ExperimentConfig) -> tuple[dict, list[ExponentFit]]:
    s = cfg.scales
    est = estimate_lambda(
        cfg.generator,
        int(s.get("k", 1)),
        _as_list(s["ratios"]),
        cfg.trials,
        seed=cfg.seed,
        threads=cfg.threads,
        outer=float(s.get("outer", 0.4)),
        center=s.get("center"),
        method=str(s.get("method", "flow")),
        failure_budget=cfg.failure_budget,
    )
    used = est.rows[0]["trials"]
    by_ratio: dict[float, list[float]] = {}
    for row in est.rows:
        by_ratio.setdefault(row["ratio"], []).append(row["p"])
    monotone = all(all(b <= a for a, b in zip(ps, ps[1:])) for ps in by_ratio.values())
    metrics = {
        "table": est.rows,
        "fits": {str(j): f for j, f in est.fits.items()},
        "exponents": {str(j): (f.exponent if f else None) for j, f in est.fits.items()},
        "excluded": est.excluded,
        "monotone_in_k": monotone,
        "failed_trials": cfg.trials - used,
    }
    return metrics, [f for f in est.fits.values() if f is not None]


def _run_rho(cfg: ExperimentConfig) -> tuple[dict, list[ExponentFit]]:
    s = cfg.scales
    est = estimate_rho(
        cfg.generator,
        _cylinders(s["cylinders"]),
        cfg.trials,
        seed=cfg.seed,
        threads=cfg.threads,
        tol=s.get("tol"),
        failure_budget=cfg.failure_budget,
    )
    metrics = {
        "table": est.rows,
        "fit": est.fit,
        "rho_hat": est.rho_hat,
        "failed_trials": cfg.trials - est.rows[0]["trials"],
    }
    return metrics, [est.fit] if est.fit else []


def _run_sparsity(cfg: ExperimentConfig) -> tuple[dict, list[ExponentFit]]:
    s = cfg.scales
    ladder = ScaleLadder(float(s.get("L0", 1.0)), float(s["gamma"]), int(s["k_max"]))
    res = sparsity_probability(
        cfg.generator,
        ladder,
        [int(k) for k in _as_list(s["k0_values"])],
        cfg.trials,
        seed=cfg.seed,
        threads=cfg.threads,
        tol=s.get("tol"),
        width_factor=float(s.get("width_factor", 10.0)),
        failure_budget=cfg.failure_budget,
    )
    metrics = {
        "table": res["rows"],
        "fit": res["fit"],
        "minimal_k0": res["minimal_k0"],
        "failed_trials": cfg.trials - len(res["minimal_k0"]),
    }
    return metrics, [res["fit"]] if res["fit"] else []


def _run_dimension(cfg: ExperimentConfig) -> tuple[dict, list[ExponentFit]]:
    s = cfg.scales
    window = (float(s["lmin"]), float(s["lmax"])) if "lmin" in s and "lmax" in s else None

    def one(trial: int) -> dict:
        curve = _longest(cfg.generator.sample(trial, cfg.seed))
        summary = dimension_summary(curve, float(s.get("eps", 0.1)), int(s.get("k", 3)), window)
        summary["trial"] = trial
        return summary

    summaries = map_trials(one, cfg.trials, cfg.threads, cfg.failure_budget)
    table = [
        {"trial": r["trial"], "ell": row["ell"], "partition": row["partition"], "box": row["box"]}
        for r in summaries
        for row in r["samples"]
    ]
    per_trial = [
        {k: r[k] for k in ("trial", "tau_hat", "dimB_hat", "ordered", "tempered", "kfold_scale")}
        for r in summaries
    ]
    metrics = {
        "table": table,
        "trials": per_trial,
        "tau_hat_mean": float(np.mean([r["tau_hat"] for r in summaries])),
        "dimB_hat_mean": float(np.mean([r["dimB_hat"] for r in summaries])),
        "failed_trials": cfg.trials - len(summaries),
    }
    fits = [f for r in summaries for f in (r["tau"], r["dimB"])]
    return metrics, fits


def _run_capacity(cfg: ExperimentConfig) -> tuple[dict, list[ExponentFit]]:
    s = cfg.scales
    gamma, m, k_max = float(s["gamma"]), int(s["m"]), int(s["k_max"])
    exponent = float(s.get("s", 1.0))
    with_bound = bool(s.get("dimension_bound", False))

    def one(trial: int) -> dict:
        curve = _longest(cfg.generator.sample(trial, cfg.seed))
        H = build_hierarchy(curve, gamma, m, k_max, s.get("L0"))
        ell = float(s.get("ell", H.scales[-1]))
        k0 = effective_k0(H)
        mu = hierarchy_measure(H)
        best = capacity_qp(mu.support, exponent, ell)
        return {
            "trial": trial,
            "n_leaves": len(H.leaves),
            "k0": k0,
            "s": exponent,
            "ell": ell,
            "energy": best.energy,
            "capacity": best.capacity,
            "measure_capacity": measure_capacity(mu, exponent, ell).capacity,
            "lower_bound": capacity_lower_bound(H, exponent, k0),
            "dimension_bound": dimension_lower_bound(curve, m) if with_bound else None,
            "converged": best.converged,
        }

    rows = map_trials(one, cfg.trials, cfg.threads, cfg.failure_budget)
    metrics = {
        "table": rows,
        "bound_holds": all(r["lower_bound"] <= r["capacity"] * (1 + 1e-9) for r in rows),
        "failed_trials": cfg.trials - len(rows),
    }
    return metrics, []


def _run_distance(cfg: ExperimentConfig) -> tuple[dict, list[ExponentFit]]:
    s = cfg.scales
    key, values = str(s["vary"]), _as_list(s["values"])
    params = MetricParams(s.get("bisection_tol"))
    specs = [replace(cfg.generator, params={**cfg.generator.params, key: v}) for v in values]

    def one(trial: int) -> dict:
        series = [spec.sample(trial, cfg.seed) for spec in specs]
        for F in series:
            _curves_of(F)
        return {"trial": trial, **coupling_gap(series, params)}

    results = map_trials(one, cfg.trials, cfg.threads, cfg.failure_budget)
    table = [
        {"trial": r["trial"], "index": i + 1, "value": values[i + 1], "gap": gap}
        for r in results
        for i, gap in enumerate(r["gaps"])
    ]
    metrics = {
        "table": table,
        "vary": key,
        "values": values,
        "monotone_fraction": float(np.mean([r["monotone_decreasing"] for r in results])),
        "failed_trials": cfg.trials - len(results),
    }
    return metrics, []


_RUNNERS = {
    "lambda_scan": _run_lambda,
    "rho_scan": _run_rho,
    "sparsity": _run_sparsity,
    "dimension": _run_dimension,
    "capacity": _run_capacity,
    "distance": _run_distance,
}


def run_experiment(cfg: ExperimentConfig, storage=None) -> ResultRecord:
    """Run the experiment a config describes.

    Writes the CSV table and the records file when the config names an output
    path, and stores the record when a storage is given.

    Raises:
        ExperimentAborted: more failed trials than the failure budget allows
    """
    logger.info(
        "Running %s (%d trials, seed %d, %d threads)",
        cfg.experiment_id,
        cfg.trials,
        cfg.seed,
        cfg.threads,
    )
    start = time.perf_counter()
    metrics, fits = _RUNNERS[cfg.experiment](cfg)
    if metrics.get("failed_trials"):
        logger.warning("%d of %d trials failed", metrics["failed_trials"], cfg.trials)
    record = ResultRecord(
        experiment_id=cfg.experiment_id,
        kind=cfg.experiment,
        config=cfg.to_dict(),
        metrics=metrics,
        fits=fits,
        wall_time=time.perf_counter() - start,
        version=_code_version(),
    )
    logger.info("Finished %s in %.2fs", cfg.experiment_id, record.wall_time)

    if cfg.output_path is not None:
        emit_table(record, cfg.output_path, "csv")
        emit_table(record, cfg.output_path.with_suffix(".records"), "records")
    if storage is not None:
        storage.add_result(record)
    return record


# Tables


def _cell(value) -> str:
    value = _plain(value)
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _uncell(text: str):
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def emit_table(record: ResultRecord, path: str | Path, format: str = "csv") -> Path:
    """Write the record's table as CSV (header always present) or as text records.

    ``records`` writes one ``row key=value ...`` line per table row, followed by
    the fit records.
    """
    if format not in ("csv", "records"):
        raise ValueError(f"unknown table format {format!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = TABLE_COLUMNS[record.kind]
    rows = record.metrics.get("table", [])
    with path.open("w", newline="") as f:
        if format == "csv":
            writer = csv.writer(f)
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_cell(row.get(c)) for c in columns])
        else:
            f.write(f"# experiment={record.experiment_id} kind={record.kind}\n")
            for row in rows:
                f.write("row " + " ".join(f"{c}={_cell(row.get(c))}" for c in columns) + "\n")
            for fit in record.fits:
                f.write(fit.to_record() + "\n")
    logger.debug("Wrote %d rows to %s", len(rows), path)
    return path


def read_table(path: str | Path) -> tuple[list[str], list[dict]]:
    """Parse a CSV table written by emit_table back into (columns, rows)."""
    with Path(path).open(newline="") as f:
        reader = csv.reader(f)
        columns = next(reader, [])
        rows = [dict(zip(columns, map(_uncell, line), strict=True)) for line in reader]
    return columns, rows
