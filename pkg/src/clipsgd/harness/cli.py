"""Command-line entry point.

Failures print ``{"error": <category>, "message": ...}`` on stderr and exit
with a category-specific code. ``CLIPSGD_VERBOSITY`` (quiet, info, debug)
controls log output.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..clipping import ScheduleSet, StepSchedule
from ..errors import ClipSGDError, ConfigError, OutputError
from ..problems import QuarticSpec, save_instance
from .config import ExperimentConfig, load_config
from .experiments import problem_for_trial, run_trajectory, run_trials, sweep_initial_stepsize
from .io import emit
from .verify import BOUNDS, verify_bounds

ENV_VERBOSITY = "CLIPSGD_VERBOSITY"
EXIT_CODES = {
    "error": 1,
    "config": 2,
    "domain": 3,
    "precondition": 4,
    "unsupported-metric": 5,
    "diverged": 6,
    "io": 7,
}
EXIT_VIOLATED = 8
_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

log = logging.getLogger("clipsgd")


def _setup_logging() -> None:
    name = os.environ.get(ENV_VERBOSITY, "quiet").strip().lower()
    if name not in _LEVELS:
        raise ConfigError(f"{ENV_VERBOSITY} must be one of {sorted(_LEVELS)}, got {name!r}")
    logging.basicConfig(level=_LEVELS[name], stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def _out_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"{p}: {exc}") from exc
    return p


def _print(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args.out)
    n = cfg.trials if args.traces is None else min(args.traces, cfg.trials)
    for t in range(n):
        emit(run_trajectory(cfg, t), out / f"trace_{t:04d}.csv")
    agg = run_trials(cfg)
    emit(agg, out / "aggregate.csv")
    emit(agg, out / "aggregate.json", fmt="json")
    _print({"traces": n, "trials": agg.trials, "divergence_count": agg.divergence_count,
            "final_gap_median": agg.final_gap_median, "out": str(out)})
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    rows = sweep_initial_stepsize(cfg, args.grid)
    emit(rows, args.out, fmt=args.format)
    _print({"rows": len(rows), "out": args.out})
    return 0


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    opts = {}
    if args.stride is not None:
        opts["stride"] = args.stride
    report = verify_bounds(cfg, args.bound, **opts)
    if args.out:
        report.to_json(args.out)
    _print({"bound": report.name, "passed": report.passed, "counts": report.counts,
            "checks": report.checks, "notes": report.notes if not report.applicable else []})
    if args.strict and report.applicable and not report.passed:
        return EXIT_VIOLATED
    return 0


def cmd_divergence_demo(args) -> int:
    cfg = ExperimentConfig(
        problem=QuarticSpec(eps=1.0, noise=0.0), algorithm="sgd",
        schedules=ScheduleSet(step=StepSchedule("polynomial", args.alpha1, 1.0)),
        trials=1, max_iters=args.iters, x0=(args.x0,),
    )
    trace = run_trajectory(cfg)
    report = verify_bounds(cfg, "example1")
    if args.out:
        emit(trace, args.out)
    if args.report:
        report.to_json(args.report)
    _print({"diverged": trace.is_diverged, "diverged_at": int(trace.k[-1]) if trace.is_diverged else None,
            "bound_holds": report.passed, "counts": report.counts})
    return 0


def cmd_export_instance(args) -> int:
    cfg = load_config(args.config)
    inst = problem_for_trial(cfg, args.trial)
    path = save_instance(inst, args.out)
    _print({"out": str(path), "arrays": sorted(inst.arrays())})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clipsgd", description="Seeded clipped-SGD / SHB experiments and bound checks.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="trajectories and epoch aggregate for one config")
    r.add_argument("config")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--traces", type=int, default=None, help="number of per-trial traces to write (default all)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="epoch-to-eps table over the alpha0 grid")
    s.add_argument("config")
    s.add_argument("--out", required=True)
    s.add_argument("--grid", type=float, nargs="+", default=None, help="override the config grid")
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="check a config against a theoretical bound")
    v.add_argument("config")
    v.add_argument("--bound", required=True, choices=BOUNDS)
    v.add_argument("--out", default=None, help="bound report JSON")
    v.add_argument("--stride", type=int, default=None, help="checkpoint spacing")
    v.add_argument("--strict", action="store_true", help=f"exit {EXIT_VIOLATED} when the bound is violated")
    v.set_defaults(func=cmd_verify)

    d = sub.add_parser("divergence-demo", help="plain SGD on the noiseless quartic")
    d.add_argument("--alpha1", type=float, default=0.03)
    d.add_argument("--x0", type=float, default=10.0)
    d.add_argument("--iters", type=int, default=50)
    d.add_argument("--out", default=None, help="trace CSV")
    d.add_argument("--report", default=None, help="bound report JSON")
    d.set_defaults(func=cmd_divergence_demo)

    e = sub.add_parser("export-instance", help="dump problem data (.npz or .csv)")
    e.add_argument("config")
    e.add_argument("--out", required=True)
    e.add_argument("--trial", type=int, default=0, help="trial index when data is not shared")
    e.set_defaults(func=cmd_export_instance)
    return p


def _fail(category: str, message: str) -> int:
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return EXIT_CODES.get(category, 1)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        np.seterr(all="ignore")
        return args.func(args)
    except ClipSGDError as exc:
        return _fail(exc.category, str(exc))
    except OSError as exc:
        return _fail("io", str(exc))
    except Exception as exc:  # noqa: BLE001
        log.debug("unexpected failure", exc_info=True)
        return _fail("error", f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
