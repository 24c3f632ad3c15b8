"""Experiment configs, paired constrained-vs-unconstrained runs, and traces.

A config names an objective from the benchmark registry, a search box,
per-dimension constraints, and seeds.  For every seed the experiment runs the
BO loop twice, once with the configured constraints and once with none; both
arms share the initial design and the objective's noise stream, so their
difference isolates the constraint machinery.  Traces are written as CSV with
a fixed schema; the wall-clock column is the only nondeterministic field.
"""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from shapebo.benchmarks import test_functions
from shapebo.bo import ObjectiveError, bo_run
from shapebo.shapes import ConstraintSpec, Shape

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "parse_config",
    "run_paired",
    "run_experiment",
    "write_trace",
    "summarize",
    "canonical_trace_body",
    "TRACE_COLUMNS",
]

ARMS = ("constrained", "unconstrained")


class ConfigError(ValueError):
    """Invalid or malformed experiment configuration."""


@dataclass
class ExperimentConfig:
    """Validated experiment description; see ``parse_config`` for the schema."""

    objective: str
    box: np.ndarray
    constraints: list
    seeds: list
    output_dir: str = "shapebo-out"
    iterations: int = 30
    init_count: int = 5
    mc_samples: int = 200
    chain_len: int = 2000
    burn_in: int | None = None
    grid_size: int = 100
    refit_every: int = 1
    candidates_per_iter: int = 512
    max_tries: int = 50_000
    objective_options: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.box.shape[0]


_DEFAULTS = {
    "output_dir": "shapebo-out",
    "iterations": 30,
    "init_count": 5,
    "mc_samples": 200,
    "chain_len": 2000,
    "burn_in": None,
    "grid_size": 100,
    "refit_every": 1,
    "candidates_per_iter": 512,
    "max_tries": 50_000,
    "objective_options": {},
}

_REQUIRED = ("objective", "box", "constraints", "seeds")

_COUNT_KEYS = (
    "iterations",
    "init_count",
    "mc_samples",
    "chain_len",
    "grid_size",
    "refit_every",
    "candidates_per_iter",
    "max_tries",
)


def _validate_config(raw) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    known = set(_REQUIRED) | set(_DEFAULTS)
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
    for key in _REQUIRED:
        if key not in raw:
            raise ConfigError(f"missing required config key {key!r}")

    objective = raw["objective"]
    registry = test_functions()
    if objective not in registry:
        raise ConfigError(
            f"key 'objective': unknown objective {objective!r}; valid: "
            + ", ".join(sorted(registry))
        )
    try:
        box = np.asarray(raw["box"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"key 'box': {exc}") from exc
    if box.ndim != 2 or box.shape[1] != 2:
        raise ConfigError("key 'box': must be a list of [lo, hi] pairs")
    if np.any(box[:, 0] >= box[:, 1]):
        raise ConfigError("key 'box': every lo must be < hi")
    d = box.shape[0]
    entry = registry[objective]
    if entry.box.shape[0] != d:
        raise ConfigError(
            f"key 'box': objective {objective!r} is {entry.box.shape[0]}-dimensional, "
            f"config box has {d} dimensions"
        )

    constraints = raw["constraints"]
    if not isinstance(constraints, list) or len(constraints) != d:
        raise ConfigError(
            f"key 'constraints': need one entry per dimension ({d}), got "
            f"{len(constraints) if isinstance(constraints, list) else type(constraints).__name__}"
        )
    try:
        constraints = [Shape.from_name(s) for s in constraints]
    except ValueError as exc:
        raise ConfigError(f"key 'constraints': {exc}") from exc

    seeds = raw["seeds"]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("key 'seeds': must be a nonempty list of integers")

    values = dict(_DEFAULTS)
    for key in _DEFAULTS:
        if key in raw:
            values[key] = raw[key]
    for key in _COUNT_KEYS:
        v = values[key]
        if not isinstance(v, int) or v < 1:
            raise ConfigError(f"key {key!r}: must be a positive integer, got {v!r}")
    if values["burn_in"] is None:
        values["burn_in"] = values["chain_len"] // 4
    if not isinstance(values["burn_in"], int) or not 0 <= values["burn_in"] < values["chain_len"]:
        raise ConfigError("key 'burn_in': need 0 <= burn_in < chain_len")
    if not isinstance(values["objective_options"], dict):
        raise ConfigError("key 'objective_options': must be an object")
    if not isinstance(values["output_dir"], str):
        raise ConfigError("key 'output_dir': must be a string")

    return ExperimentConfig(
        objective=objective, box=box, constraints=constraints, seeds=list(seeds), **values
    )


def parse_config(path) -> ExperimentConfig:
    """Load and validate a JSON experiment config.

    Unknown keys are rejected; omitted optional keys get documented defaults
    (iterations 30, init_count 5, mc_samples 200, grid_size 100, chain_len
    2000, ...).  Errors name the offending key, or the line for syntax errors.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path} at line {exc.lineno}: {exc.msg}") from exc
    return _validate_config(raw)


class _StreamObjective:
    """Wraps a registry objective with a per-evaluation seeded noise stream.

    Call ``i`` uses a generator derived from ``(salt, seed, i)`` only, so two
    arms sharing a seed see identical noise streams even after their query
    sequences diverge (common random numbers).
    """

    _SALT = 0x5A9E80

    def __init__(self, fn, seed):
        self.fn = fn
        self.seed = int(seed)
        self.calls = 0

    def __call__(self, x):
        rng = np.random.default_rng([self._SALT, self.seed, self.calls])
        self.calls += 1
        return self.fn(x, rng)


def _spec_for_arm(cfg: ExperimentConfig, arm):
    if arm == "constrained":
        return ConstraintSpec(list(cfg.constraints), grid_size=cfg.grid_size)
    return ConstraintSpec([Shape.NONE] * cfg.dim, grid_size=cfg.grid_size)


def _run_single(cfg: ExperimentConfig, seed, arm):
    entry = test_functions()[cfg.objective]
    options = {**(entry.defaults or {}), **cfg.objective_options}
    objective = _StreamObjective(entry.factory(options), seed)
    return bo_run(
        objective,
        cfg.box,
        _spec_for_arm(cfg, arm),
        init_count=cfg.init_count,
        iterations=cfg.iterations,
        refit_every=cfg.refit_every,
        seed=seed,
        candidates=entry.candidates,
        candidates_per_iter=cfg.candidates_per_iter,
        mc_samples=cfg.mc_samples,
        chain_len=cfg.chain_len,
        burn_in=cfg.burn_in,
        max_tries=cfg.max_tries,
    )


def _run_pair(args):
    cfg, seed = args
    out = {}
    for arm in ARMS:
        out[arm] = _run_single(cfg, seed, arm)
    return seed, out


def run_paired(cfg: ExperimentConfig, jobs: int = 1):
    """Run both arms for every seed; returns {arm: {seed: [RunRecord]}}.

    On an objective failure the partial trace is kept and the error re-raised
    with everything completed so far attached as ``.partial_results``.
    """
    results = {arm: {} for arm in ARMS}
    tasks = [(cfg, seed) for seed in cfg.seeds]
    try:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                for seed, out in pool.map(_run_pair, tasks):
                    for arm in ARMS:
                        results[arm][seed] = out[arm]
        else:
            for task in tasks:
                seed, out = _run_pair(task)
                for arm in ARMS:
                    results[arm][seed] = out[arm]
    except ObjectiveError as exc:
        exc.partial_results = results
        raise
    return results


TRACE_COLUMNS = "seed,iteration,arm,x...,y,incumbent_value,acceptance_rate,wall_ms"


def _trace_header(d):
    xs = ",".join(f"x{j}" for j in range(d))
    return f"seed,iteration,arm,{xs},y,incumbent_value,acceptance_rate,wall_ms"


def _fmt(v):
    return repr(float(v))


def write_trace(path, arm, runs, d):
    """Write one arm's trace CSV; rows ordered by (seed, iteration)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_trace_header(d) + "\n")
        for seed in sorted(runs):
            for rec in runs[seed]:
                xs = ",".join(_fmt(v) for v in np.atleast_1d(rec.queried_point))
                acc = "" if rec.acceptance_rate is None else _fmt(rec.acceptance_rate)
                fh.write(
                    f"{seed},{rec.iteration},{arm},{xs},{_fmt(rec.observed_y)},"
                    f"{_fmt(rec.incumbent.posterior_expected_value)},{acc},"
                    f"{rec.wall_ms:.3f}\n"
                )


def canonical_trace_body(path):
    """Trace bytes with the wall-clock column dropped (determinism checks)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    return "\n".join(line.rsplit(",", 1)[0] for line in lines)


def _read_trace(path):
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    return rows


def _percentiles_by_iteration(rows):
    by_iter = {}
    for r in rows:
        by_iter.setdefault(int(r["iteration"]), []).append(float(r["incumbent_value"]))
    out = {}
    for it in sorted(by_iter):
        vals = np.asarray(by_iter[it])
        out[it] = {
            "mean": float(np.mean(vals)),
            "p2_5": float(np.percentile(vals, 2.5)),
            "p25": float(np.percentile(vals, 25)),
            "median": float(np.percentile(vals, 50)),
            "p75": float(np.percentile(vals, 75)),
            "p97_5": float(np.percentile(vals, 97.5)),
        }
    return out


def summarize(traces_dir, write: bool = True):
    """Aggregate the two trace files into summary.csv and a text report.

    The summary carries per-iteration mean and 2.5/25/50/75/97.5 percentiles
    of the incumbent value across seeds, per arm.  The report states final
    medians, final across-seed 95% interval widths, and the first iteration
    at which the constrained median drops strictly below the unconstrained
    one (or that no dominance occurs).
    """
    stats = {}
    for arm in ARMS:
        path = os.path.join(traces_dir, f"trace_{arm}.csv")
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing trace file {path}")
        rows = _read_trace(path)
        if not rows:
            raise ValueError(f"trace file {path} has no rows")
        stats[arm] = _percentiles_by_iteration(rows)

    summary_path = os.path.join(traces_dir, "summary.csv")
    report_path = os.path.join(traces_dir, "report.txt")
    fields = ("mean", "p2_5", "p25", "median", "p75", "p97_5")

    buf = io.StringIO()
    buf.write("arm,iteration," + ",".join(fields) + "\n")
    for arm in ARMS:
        for it, row in stats[arm].items():
            buf.write(f"{arm},{it}," + ",".join(_fmt(row[f]) for f in fields) + "\n")
    summary_csv = buf.getvalue()

    iters = sorted(set(stats["constrained"]) & set(stats["unconstrained"]))
    last = iters[-1]
    dominance = None
    for it in iters:
        if stats["constrained"][it]["median"] < stats["unconstrained"][it]["median"]:
            dominance = it
            break
    lines = []
    for arm in ARMS:
        final = stats[arm][last]
        lines.append(
            f"{arm}: final median incumbent {final['median']:.6g} "
            f"(IQR {final['p75'] - final['p25']:.6g}, "
            f"95% interval width {final['p97_5'] - final['p2_5']:.6g})"
        )
    if dominance is None:
        lines.append("no dominance: constrained median never drops below unconstrained")
    else:
        lines.append(f"constrained first dominates at iteration {dominance}")
    report = "\n".join(lines) + "\n"

    if write:
        with open(summary_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(summary_csv)
        with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report)
    return summary_csv, report


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> int:
    """Execute the paired experiment and persist traces plus summaries.

    Returns 0 on success, 2 on objective failure (partial traces are still
    written).  Config errors surface before this point as ``ConfigError``.
    """
    os.makedirs(cfg.output_dir, exist_ok=True)
    exit_code = 0
    try:
        results = run_paired(cfg, jobs=jobs)
    except ObjectiveError as exc:
        results = getattr(exc, "partial_results", {arm: {} for arm in ARMS})
        exit_code = 2
    for arm in ARMS:
        write_trace(
            os.path.join(cfg.output_dir, f"trace_{arm}.csv"), arm, results[arm], cfg.dim
        )
    if exit_code == 0:
        summarize(cfg.output_dir)
    return exit_code
