"""
ThermoCH - Command-line entry point.

    python -m thermoch run --config run.cfg --out runs/a
    python -m thermoch continuation --config run.cfg --eps-ladder 1e-2,1e-3,1e-4
    python -m thermoch mms --config run.cfg --levels 32,64,128
    python -m thermoch report runs/a

Exit codes: 0 success, 2 config error, 3 solver failure, 4 I/O error.
"""
from typing import List, Optional
import argparse
import logging

from pydantic import ValidationError

from .config import settings
from .schemas import ContinuationSection, RunConfig, split_list
from .services.config_parser import ConfigError, load_config, parse_config
from .services.experiments import (
    EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_SOLVER,
    cmd_continuation, cmd_mms, cmd_report, cmd_run,
)
from .services.initial_data import InitialDataError
from .services.output import OutputError
from .stepper import StepError

logger = logging.getLogger("thermoch")


def _u64(text: str) -> int:
    try:
        value = int(text, 10)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed '{text}'")
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thermoch",
        description="Non-isothermal Cahn-Hilliard simulator and diagnostics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat section.key = value config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=_u64, help="override run.seed")
        p.add_argument("--isothermal", action="store_true",
                       help="freeze theta at its (uniform) initial value")

    common(sub.add_parser("run", help="single simulation"))
    p = sub.add_parser("continuation", help="eps-continuation study")
    common(p)
    p.add_argument("--eps-ladder", help="comma-separated, strictly decreasing eps values")
    p = sub.add_parser("mms", help="manufactured-solution convergence study")
    common(p)
    p.add_argument("--levels", help="comma-separated cell counts (at least 3)")
    p = sub.add_parser("report", help="re-derive diagnostics from stored snapshots")
    p.add_argument("directory", nargs="?", help="run directory (defaults to --out)")
    p.add_argument("--out", help="run directory")
    return parser


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else parse_config("")
    if args.seed is not None:
        cfg = cfg.model_copy(update={"run": cfg.run.model_copy(update={"seed": args.seed})})
    if args.isothermal:
        cfg = cfg.model_copy(update={"solver": cfg.solver.model_copy(update={"isothermal": True})})
    return cfg


def _ladder(text: Optional[str]) -> Optional[List[float]]:
    if text is None:
        return None
    try:
        return ContinuationSection(eps_ladder=text).eps_ladder
    except ValidationError as exc:
        raise ConfigError(f"invalid --eps-ladder: {exc.errors()[0]['msg']}") from exc


def _levels(text: Optional[str]) -> Optional[List[int]]:
    if text is None:
        return None
    try:
        return [int(v) for v in split_list(text)]
    except ValueError as exc:
        raise ConfigError(f"invalid --levels '{text}'") from exc


def dispatch(args) -> int:
    if args.command == "report":
        directory = args.directory or args.out
        if not directory:
            raise ConfigError("report needs a run directory")
        return cmd_report(directory)
    cfg = _load(args)
    if args.command == "run":
        return cmd_run(cfg, args.out)
    if args.command == "continuation":
        return cmd_continuation(cfg, _ladder(args.eps_ladder), args.out)
    return cmd_mms(cfg, _levels(args.levels), args.out)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG

    logging.basicConfig(level=settings.logging.log_level, format=settings.logging.log_format)
    try:
        return dispatch(args)
    except (ConfigError, InitialDataError) as exc:
        logger.error("Configuration error: %s", exc)
        return EXIT_CONFIG
    except StepError as exc:
        logger.error("Solver failure at t=%.6g (dt=%.3e): %s", exc.t, exc.dt, exc)
        return EXIT_SOLVER
    except OutputError as exc:
        logger.error("I/O error: %s", exc)
        return EXIT_IO
    except OSError as exc:
        logger.error("I/O error: %s (%s)", exc.strerror, exc.filename)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
