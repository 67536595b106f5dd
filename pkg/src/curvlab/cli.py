"""Command-line entry point: lab <experiment> [options]."""

import argparse
import sys

from .harness import (EXIT_CONFIG, ConfigError, load_config, run_experiment,
                      write_report)


def build_parser():
    p = argparse.ArgumentParser(
        prog="lab",
        description="Desk-scale experiments on scalar-curvature stability "
                    "under C0 metric perturbations.")
    p.add_argument("experiment",
                   choices=["sharpness", "stability", "rotsym", "inmeasure",
                            "asymptotics", "selftest"])
    p.add_argument("--config", help="INI config file (key = value, one section "
                                    "per experiment plus [common])")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--workers", type=int, help="worker count for sweep points")
    p.add_argument("--grid", help="nr,ntheta,nphi override")
    p.add_argument("--seed", type=int, help="seed for sample-point sets")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key of the experiment section")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {}
    for item in args.set:
        if "=" not in item:
            print(f"bad --set '{item}', expected KEY=VALUE", file=sys.stderr)
            return EXIT_CONFIG
        key, val = item.split("=", 1)
        overrides[key.strip()] = val.strip()
    if args.out:
        overrides["out"] = args.out
    if args.workers is not None:
        overrides["workers"] = str(args.workers)
    if args.grid:
        overrides["grid"] = args.grid
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    try:
        cfg = load_config(args.experiment, args.config, overrides)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = run_experiment(cfg)
    csv_path, json_path = write_report(report, cfg["out"])
    for name, ok in report.summary.get("pass", {}).items():
        print(f"[{'PASS' if ok else 'FAIL'}] {report.name}: {name}")
    print(f"report: {json_path}")
    if report.rows:
        print(f"sweep:  {csv_path}")
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
