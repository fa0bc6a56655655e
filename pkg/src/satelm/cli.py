"""Command-line entry point: ``satelm sweep | flops | doppler``.

Failures print a single ``error <kind>: <message>`` line to stderr and exit
with status 2 (bad input) or 1 (runtime failure).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .channel import DopplerParams, max_doppler
from .harness import ExperimentConfig, export, flops_estimate, run_sweep


class CliError(Exception):
    def __init__(self, kind: str, message: str, status: int = 2):
        super().__init__(message)
        self.kind = kind
        self.status = status


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def _load_orbit(path: str) -> DopplerParams:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError("config", f"{path}: {exc}") from exc
    try:
        if "altitude_m" in d:
            return DopplerParams.circular_orbit(d["altitude_m"], d["f_c"], d.get("theta_max", 1.5707963267948966),
                                                d.get("eta_form", "standard"))
        return DopplerParams(**d)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError("config", f"{path}: {exc}") from exc


def cmd_sweep(args) -> int:
    try:
        cfg = ExperimentConfig.from_file(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, master_seed=args.seed)
    except (TypeError, ValueError) as exc:
        raise CliError("config", str(exc)) from exc
    if args.jobs < 1:
        raise CliError("usage", "--jobs must be >= 1")
    records = run_sweep(cfg, jobs=args.jobs)
    try:
        export(records, args.format, args.out, sweep_variable=cfg.sweep_variable,
               metadata={"master_seed": cfg.master_seed, "config": str(args.config)})
    except OSError as exc:
        raise CliError("io", str(exc), status=1) from exc
    return 0


def cmd_flops(args) -> int:
    try:
        print(flops_estimate(args.variant, args.n, args.l, args.i))
    except ValueError as exc:
        raise CliError("usage", str(exc)) from exc
    return 0


def cmd_doppler(args) -> int:
    p = _load_orbit(args.orbit)
    if args.tmax <= 0:
        raise CliError("usage", "--tmax must be positive")
    try:
        print(f"{max_doppler(p, args.tmax):.6f}")
    except ValueError as exc:
        raise CliError("model", str(exc)) from exc
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="satelm", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("sweep", help="run a Monte-Carlo BER sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.add_argument("--seed", type=int, default=None, help="override master_seed")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    f = sub.add_parser("flops", help="FLOP estimate of one receiver")
    f.add_argument("--variant", required=True)
    f.add_argument("--n", type=int, required=True)
    f.add_argument("--l", type=int, required=True)
    f.add_argument("--i", type=int, required=True)
    f.set_defaults(func=cmd_flops)

    d = sub.add_parser("doppler", help="maximum Doppler shift of a pass, in Hz")
    d.add_argument("--orbit", required=True, help="JSON orbit description")
    d.add_argument("--tmax", type=float, required=True, help="half-window around closest approach, s")
    d.set_defaults(func=cmd_doppler)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except CliError as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error {exc.kind}: {msg}", file=sys.stderr)
        return exc.status
    except Exception as exc:  # noqa: BLE001 - last-resort single-line report
        print(f"error runtime: {type(exc).__name__}: {exc}".replace("\n", " "), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
