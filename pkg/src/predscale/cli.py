"""Command-line entry point: ``predscale <subcommand> [--config PATH] [--seed N] [--out DIR]``.

Exit codes: 0 success (or no alarms), 1 usage error, 2 data error,
3 infeasible plan, 4 internal error, 5 alarms raised (``detect`` only).
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .config import ExperimentConfig
from .errors import PredscaleError, UsageError


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config document")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="predscale", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="write the workload series (trace or synthetic)")
    _common(p)

    p = sub.add_parser("fit", help="fit the configured ARIMA grid")
    _common(p)
    p.add_argument("--series", help="training series CSV (default: configured source)")
    p.add_argument("--holdout", help="holdout series CSV; ranks the grid by holdout MSE")

    p = sub.add_parser("forecast", help="point forecasts from a saved model")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--series", help="observations to condition on before forecasting")

    p = sub.add_parser("detect", help="divergence alarms for a stream, as JSON lines")
    _common(p)
    p.add_argument("--stream", required=True, help="observed series CSV")
    p.add_argument("--profile", help="baseline profile JSON (default: built from the training span)")

    p = sub.add_parser("plan", help="size one window and optionally pick offers")
    _common(p)
    p.add_argument("--forecast", required=True, help="forecast series CSV covering the window")
    p.add_argument("--alarms", help="alarms JSONL")
    p.add_argument("--catalog", help="offer catalog JSON")

    p = sub.add_parser("simulate", help="replay a workload under a schedule (default: static baseline)")
    _common(p)
    p.add_argument("--workload", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--schedule", help="schedule JSON")
    group.add_argument("--vms", type=int, help="constant VM count")

    p = sub.add_parser("experiment", help="end-to-end comparison table")
    _common(p)

    p = sub.add_parser("report", help="rebuild table.csv from an experiment directory")
    _common(p)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config, {"seed": args.seed, "out": args.out})
        if args.command == "ingest":
            print(pipeline.cmd_ingest(cfg))
        elif args.command == "fit":
            for r in pipeline.cmd_fit(cfg, args.series, args.holdout):
                print(r.order.label, f"mse={r.mse:.6g}", f"holdout_mse={r.holdout_mse}",
                      f"converged={r.converged}")
        elif args.command == "forecast":
            print(pipeline.cmd_forecast(cfg, args.model, args.steps, args.series))
        elif args.command == "detect":
            alarms, code = pipeline.cmd_detect(cfg, args.stream, args.profile)
            for a in alarms:
                print(a.to_json())
            return code
        elif args.command == "plan":
            doc = pipeline.cmd_plan(cfg, args.forecast, args.alarms, args.catalog)
            print(f"vm_count={doc['requirement']['vm_count']}")
        elif args.command == "simulate":
            m = pipeline.cmd_simulate(cfg, args.workload, args.schedule, args.vms)
            print(f"vm_hours={m.vm_hours:.4f} served={m.served_requests} rejected={m.rejected_requests}")
        elif args.command == "experiment":
            rows = pipeline.cmd_experiment(cfg)
            print(open(cfg.out / "table.csv", encoding="utf-8").read(), end="")
        elif args.command == "report":
            pipeline.cmd_report(cfg.out)
            print(open(cfg.out / "table.csv", encoding="utf-8").read(), end="")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except PredscaleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        logging.getLogger(__name__).exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 4
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
