"""Command-line entry point: ``narrowsdc run|cost|optimize``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import costmodel
from .sdc import IntegrationError
from .stencil import optimize_params, truncation_bound
from .stiff import StiffConvergenceError
from .study import ConfigError, StudyConfig, format_table, run_study

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INTEGRATION = 3


def _cmd_run(args) -> int:
    cfg = StudyConfig.from_json(args.config)
    rows = run_study(cfg, workers=args.workers)
    print(format_table(rows))
    limited = [r.resolution for r in rows if getattr(r, "precision_limited", False)]
    if limited:
        print(f"precision-limited: errors below 1e-13 at resolutions {limited}; rates there reflect roundoff")
    if cfg.output:
        print(f"wrote {cfg.output}")
    return EXIT_OK


def _cmd_cost(args) -> int:
    try:
        machine = costmodel.MachineModel(args.flops, args.bandwidth)
        flop = costmodel.extra_flop_time(args.N, machine)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    comm = costmodel.extra_comm_time(machine)
    print(f"narrow flops/point:        {costmodel.narrow_flops(args.N)}")
    print(f"wide flops/point:          {costmodel.wide_flops(args.N)}")
    print(f"narrow extra flop time:    {flop:.6g} s")
    print(f"wide extra comm time:      {comm:.6g} s")
    print(f"time delta (narrow-wide):  {flop - comm:.6g} s")
    print(f"crossover bandwidth:       {costmodel.crossover_bandwidth(args.N, args.flops):.6g} B/s")
    return EXIT_OK


def _cmd_optimize(args) -> int:
    params = optimize_params(args.order)
    bound = truncation_bound(args.order, params)
    for i, p in enumerate(params, 1):
        print(f"param{i} = {p} ({float(p):.15g})")
    print(f"bound = {bound} ({float(bound):.15g})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="narrowsdc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a convergence study from a JSON config")
    run.add_argument("--config", required=True)
    run.add_argument("--workers", type=int, default=None, help="override NARROWSDC_MAX_WORKERS")
    run.set_defaults(func=_cmd_run)

    cost = sub.add_parser("cost", help="narrow versus wide stencil cost model")
    cost.add_argument("--N", type=int, required=True, help="number of transported components")
    cost.add_argument("--flops", type=float, required=True, help="FLOP/s")
    cost.add_argument("--bandwidth", type=float, required=True, help="bytes/s")
    cost.set_defaults(func=_cmd_cost)

    opt = sub.add_parser("optimize", help="optimal free parameters of a narrow stencil")
    opt.add_argument("--order", type=int, choices=(6, 8), required=True)
    opt.set_defaults(func=_cmd_optimize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, StiffConvergenceError) as exc:
        print(f"integration failure: {exc}", file=sys.stderr)
        return EXIT_INTEGRATION


if __name__ == "__main__":
    sys.exit(main())
