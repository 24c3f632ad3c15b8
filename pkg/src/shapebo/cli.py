"""Command-line entry point: run experiments, summarize traces, self-test.

``shapebo run <config>`` executes the paired constrained-vs-unconstrained
benchmark described by a JSON config and writes trace CSVs plus a summary.
``shapebo summarize <dir>`` recomputes the summary from existing traces.
``shapebo selftest`` runs the fast invariant suite.  Exit codes: 0 success,
1 configuration error, 2 runtime/objective error.
"""

from __future__ import annotations

import argparse
import os
import sys

from shapebo.experiments import ConfigError, parse_config, run_experiment, summarize

_CONFIG_HELP = """\
JSON config schema (unknown keys are rejected):
  required: objective (one of: binomial, synthetic-qc-2d, quad-1d,
            logistic-1d, vee-1d), box ([[lo, hi], ...]),
            constraints (per-dimension: none, monotone-increasing,
            monotone-decreasing, convex, concave, quasiconvex),
            seeds (list of integers)
  optional (defaults): output_dir ("shapebo-out"), iterations (30),
            init_count (5), mc_samples (200), chain_len (2000),
            burn_in (chain_len // 4), grid_size (100), refit_every (1),
            candidates_per_iter (512), max_tries (50000),
            objective_options ({}; e.g. {"n_sims": 100} for binomial,
            {"noise_sd": 0.05} for synthetic-qc-2d)
The SHAPEBO_SEED environment variable (comma-separated integers) overrides
the config seed list; the --seeds flag overrides both.
"""


def _parse_seed_list(text, source):
    try:
        seeds = [int(s) for s in text.split(",") if s.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"invalid seed list from {source}: {text!r}") from exc
    if not seeds:
        raise ConfigError(f"empty seed list from {source}")
    return seeds


def _cmd_run(args) -> int:
    try:
        cfg = parse_config(args.config)
        env_seeds = os.environ.get("SHAPEBO_SEED")
        if env_seeds:
            cfg.seeds = _parse_seed_list(env_seeds, "SHAPEBO_SEED")
        if args.seeds:
            cfg.seeds = _parse_seed_list(args.seeds, "--seeds")
        if args.iterations is not None:
            if args.iterations < 1:
                raise ConfigError("--iterations must be >= 1")
            cfg.iterations = args.iterations
        if args.output_dir is not None:
            cfg.output_dir = args.output_dir
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    return run_experiment(cfg, jobs=args.jobs)


def _cmd_summarize(args) -> int:
    try:
        _, report = summarize(args.dir)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(report, end="")
    return 0


def _cmd_selftest(_args) -> int:
    from shapebo.selftest import run_selftest

    return 0 if run_selftest() else 2


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="shapebo",
        description="Bayesian optimization with shape-constrained GP surrogates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser(
        "run",
        help="run a paired constrained/unconstrained experiment from a JSON config",
        epilog=_CONFIG_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p_run.add_argument("config", help="path to the JSON experiment config")
    p_run.add_argument("--seeds", help="comma-separated seed list override")
    p_run.add_argument("--iterations", type=int, help="override iteration count")
    p_run.add_argument("--output-dir", help="override output directory")
    p_run.add_argument("--jobs", type=int, default=1, help="worker processes across seeds")
    p_run.set_defaults(func=_cmd_run)

    p_sum = sub.add_parser("summarize", help="summarize existing trace CSVs in a directory")
    p_sum.add_argument("dir", help="directory holding trace_constrained.csv / trace_unconstrained.csv")
    p_sum.set_defaults(func=_cmd_summarize)

    p_self = sub.add_parser("selftest", help="run the fast invariant suite")
    p_self.set_defaults(func=_cmd_selftest)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
