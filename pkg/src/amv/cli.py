"""``amv`` command line.

    amv <command> --config cfg.json
    amv spectrum --space torus --m 2 --metric linf --n 4096 --r 0.1 --k 10 \
        --volumes empirical --seed 42 --out results.csv

Exit codes: 0 success, 2 invalid config, 3 numeric failure, 4 budget truncated.
``AMV_THREADS`` caps BLAS/OpenMP threads.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .errors import AmvError, InvalidInputError
from .harness import COMMANDS, TEST_FUNCTIONS, ExperimentConfig, run
from .io import fmt

log = logging.getLogger("amv")


def _numbers(text: str, kind=float):
    vals = [kind(v) for v in text.split(",") if v.strip()]
    return vals[0] if len(vals) == 1 else vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="amv", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON config; explicit flags override its entries")
    p.add_argument("--space", choices=["torus", "hypercube", "interval", "sphere"])
    p.add_argument("--m", type=int)
    p.add_argument("--metric", choices=["linf", "euclid"])
    p.add_argument("--side", type=float, help="hypercube/interval side length")
    p.add_argument("--cloud", help="CSV point cloud x1,...,xD,weight (custom space)")
    p.add_argument("--n", type=lambda s: _numbers(s, int), help="sample size or comma list")
    p.add_argument("--r", type=_numbers, help="radius or comma list")
    p.add_argument("--k", type=int)
    p.add_argument("--strategy", choices=["grid", "iid", "fibonacci"])
    p.add_argument("--volumes", dest="volume_mode", choices=["empirical", "analytic"])
    p.add_argument("--seed", type=int)
    p.add_argument("--test-function", choices=TEST_FUNCTIONS)
    p.add_argument("--frequency", type=int, help="frequency k of the l2limit test function")
    p.add_argument("--scale-side", type=float, dest="scale_side", help="b for the scaling command")
    p.add_argument("--pmax", type=int)
    p.add_argument("--method", choices=["auto", "dense", "iterative"])
    p.add_argument("--budget", type=float, dest="budget_s", help="wall-time budget in seconds")
    p.add_argument("--timing", action="store_true", help="fill the wall_time_ms column")
    p.add_argument("--out", dest="output_path")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    d = {}
    if args.config:
        try:
            d = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise InvalidInputError(f"cannot read config {args.config}: {exc}") from exc
    d["command"] = args.command
    space = d.get("space", "interval")
    space = dict(space) if isinstance(space, dict) else {"kind": space}
    for key, val in (("kind", args.space), ("m", args.m), ("metric", args.metric)):
        if val is not None:
            space[key] = val
    if args.side is not None:
        space["side"] = args.side
    if any(v is not None for v in (args.space, args.m, args.metric, args.side)):
        space.pop("total_measure", None)
    d["space"] = space
    for key in ("n", "r", "k", "strategy", "volume_mode", "seed", "test_function", "frequency", "pmax",
                "method", "budget_s", "output_path", "cloud"):
        val = getattr(args, key)
        if val is not None:
            d[key] = val
    if args.scale_side is not None:
        d["side"] = args.scale_side
    if args.timing:
        d["record_timing"] = True
    return ExperimentConfig.from_dict(d)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("AMV_THREADS")
    if threads and not (threads.isdigit() and int(threads) > 0):
        print(f"amv: AMV_THREADS must be a positive integer, got {threads!r}", file=sys.stderr)
        return 2
    limits = threadpool_limits(int(threads)) if threads else None
    try:
        cfg = config_from_args(args)
        table = run(cfg)
    except AmvError as exc:
        print(f"amv {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    finally:
        if limits is not None:
            limits.restore_original_limits()
    if not cfg.output_path:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(table.columns)
        for row in table.rows:
            w.writerow([fmt(v) for v in row])
    if table.truncated:
        print("amv: wall-time budget exhausted; partial results written", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
