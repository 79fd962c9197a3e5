"""
Command-line entry point.

Exit codes: 0 success, 1 total failure, 2 configuration or input error,
3 partial failure.  Progress goes to standard error; data goes to files or
standard output.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, json_schema, load_config
from .corpus import FORMATS, DataError, load_interactions, summarize

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INPUT = 2
EXIT_PARTIAL = 3

OUTPUT_ENV = "DECOYLAB_OUTPUT"


def _default_out(sub: str) -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "runs")) / sub


def _err(msg: str) -> int:
    print(f"decoylab: {msg}", file=sys.stderr)
    return EXIT_INPUT


def cmd_inspect(args) -> int:
    try:
        data = load_interactions(args.data, args.format)
        summary = summarize(data)
    except (OSError, DataError) as e:
        return _err(str(e))
    name = args.name or Path(args.data).parent.name or Path(args.data).stem
    if args.json:
        print(json.dumps(summary.to_dict(name)))
    else:
        sys.stdout.write(summary.to_csv(name))
    return EXIT_OK


def cmd_split(args) -> int:
    from .splitting import crossfold_users, save_plan

    try:
        data = load_interactions(args.data, args.format)
        plan = crossfold_users(data, args.folds, args.fraction, args.min_ratings, args.seed)
    except (OSError, DataError, ValueError) as e:
        return _err(str(e))
    out = Path(args.out) if args.out else _default_out("split")
    for p in save_plan(plan, out):
        print(p)
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .experiment import plan_cells, run_sweep

    try:
        config = load_config(args.config, seed=args.seed)
        if config.dataset is None:
            return _err("sweep config needs a dataset section")
        if args.dry_run:
            cells = plan_cells(config)
            for c in cells:
                print(c.cell_id)
            print(f"{len(cells)} cells", file=sys.stderr)
            return EXIT_OK
        out = Path(args.out or config.output.directory or _default_out("sweep"))
        outcome = run_sweep(config, out, threads=args.threads)
    except (ConfigError, OSError, DataError) as e:
        return _err(str(e))
    print(f"{len(outcome.computed)} cells recomputed, {len(outcome.failed)} failed", file=sys.stderr)
    for p in outcome.paths.values():
        print(p)
    return {"ok": EXIT_OK, "partial": EXIT_PARTIAL, "failed": EXIT_FAILED}[outcome.status]


def cmd_simulate(args) -> int:
    from .experiment import run_simulation

    try:
        if args.config is None:
            config = RunConfig.model_validate(
                {
                    "seed": args.seed if args.seed is not None else 42,
                    "simulation": {} if args.trials is None else {"trials": args.trials},
                }
            )
        else:
            config = load_config(args.config, seed=args.seed, simulation__trials=args.trials)
        if config.simulation is None:
            return _err("config has no simulation section")
        out = Path(args.out or config.output.directory or _default_out("simulate"))
        outcome = run_simulation(config, out, threads=args.threads)
    except (ConfigError, OSError, ValueError) as e:
        return _err(str(e))
    print(f"{len(outcome.trials) - len(outcome.failed)} trials ok, {len(outcome.failed)} failed", file=sys.stderr)
    for p in outcome.paths.values():
        print(p)
    return {"ok": EXIT_OK, "partial": EXIT_PARTIAL, "failed": EXIT_FAILED}[outcome.status]


def cmd_report(args) -> int:
    from .experiment import BiasTrialResult, aggregate_bias, read_csv
    from .metrics import MetricReport

    d = Path(args.dir)
    if (d / "sweep_users.csv").exists():
        rows = read_csv(d / "sweep_users.csv")
        rows["n_decoys"] = rows["n_decoys"].astype("Int64")
        table = MetricReport(rows).aggregate()
        if args.metric:
            table = table[table["metric"] == args.metric]
    elif (d / "bias_trials.csv").exists():
        rows = read_csv(d / "bias_trials.csv")
        trials = [BiasTrialResult(int(t), g) for t, g in rows.groupby("trial")]
        table = aggregate_bias(trials)
        if args.metric:
            table = table[table["metric"] == args.metric]
    else:
        return _err(f"{d}: no sweep_users.csv or bias_trials.csv")
    table.to_csv(sys.stdout, index=False, lineterminator="\n")
    return EXIT_OK


def cmd_schema(args) -> int:
    print(json.dumps(json_schema(), indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="decoylab", description="Candidate-set sampling evaluation lab.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="summarize a dataset (ratings, users, items, density, Gini)")
    p.add_argument("--data", required=True)
    p.add_argument("--format", default="csv", choices=sorted(FORMATS))
    p.add_argument("--name")
    p.add_argument("--json", action="store_true", help="print one JSON object instead of CSV")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("split", help="write user-partitioned cross-validation folds")
    p.add_argument("--data", required=True)
    p.add_argument("--format", default="csv", choices=sorted(FORMATS))
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--fraction", type=float, default=0.2)
    p.add_argument("--min-ratings", type=int, default=5)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("sweep", help="run the candidate strategy / decoy size sweep")
    p.add_argument("config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--dry-run", action="store_true", help="print the cell plan and exit")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="run the simulated bias-estimation trials")
    p.add_argument("config", nargs="?")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="aggregate existing sweep or simulation CSVs to stdout")
    p.add_argument("dir")
    p.add_argument("--metric")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("schema", help="print the config JSON schema")
    p.set_defaults(func=cmd_schema)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
