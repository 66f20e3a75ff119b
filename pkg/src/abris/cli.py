"""Command line interface.

Usage::

    abris run experiment.ini [--seed N] [--parallel N] [--out-dir DIR]
    abris sweep sweep.ini [--seed N] [--parallel N] [--out-dir DIR]
    abris export results/manifest.json [--format tsv|jsonl]

Exit codes: 0 success, 1 configuration error, 2 runtime failure, 3 budget
exhausted before convergence.
"""

import argparse
import logging
import sys

from abris.errors import AbrisError, ConfigError
from abris.harness.config import load_config
from abris.harness.experiment import run_experiment, run_sweep
from abris.harness.export import export_records

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_BUDGET = 0, 1, 2, 3


def _parser():
    parser = argparse.ArgumentParser(prog="abris", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("config")
        p.add_argument("--seed", type=int)
        p.add_argument("--parallel", type=int)
        p.add_argument("--out-dir")
    p = sub.add_parser("export")
    p.add_argument("manifest")
    p.add_argument("--format", default="tsv", choices=("tsv", "jsonl"))
    return parser


def _overrides(args):
    out = {}
    if args.seed is not None:
        out["experiment.seed"] = args.seed
    if args.parallel is not None:
        out["experiment.parallel"] = args.parallel
    if args.out_dir is not None:
        out["experiment.out_dir"] = args.out_dir
    return out


def _exit_code(manifests):
    statuses = [e["summary"].get("status") for m in manifests for e in m.replications]
    if any(s == "failed" for s in statuses):
        return EXIT_RUNTIME
    rule = manifests[0].config["values"].get("convergence.rule") if manifests else None
    budget_only = rule == "budget-only" or (
        rule is None and manifests and manifests[0].config["values"]["experiment.problem"] == "poisson"
    )
    if not budget_only and any(s in ("budget_exhausted", "max_iterations") for s in statuses):
        return EXIT_BUDGET
    return EXIT_OK


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        if args.command == "export":
            for path in export_records(args.manifest, args.format):
                print(path)
            return EXIT_OK
        cfg = load_config(args.config)
        cfg = cfg.with_overrides(_overrides(args))
        if args.command == "run":
            if cfg.sweep:
                raise ConfigError("config has a [sweep] section; use the sweep command")
            manifests = [run_experiment(cfg)]
        else:
            manifests = run_sweep(cfg)
        for m in manifests:
            print(m.path)
        return _exit_code(manifests)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (AbrisError, OSError) as err:
        print(f"runtime failure: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
