"""Command-line front end of slow-passage.

Every subcommand builds an ExperimentConfig from flags (or ``--config file.json``)
and writes its artifacts into ``--out``. Library errors end with exit status 2
and one JSON line ``{"error": code, "message": text}`` on stderr.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ValidationError

from slow_passage import __version__, log_level
from slow_passage.errors import PwlError
from slow_passage.pwl.constants import ModelKind
from slow_passage.src.experiments import ExperimentConfig, run

logger = logging.getLogger(__name__)

COMMANDS = ("simulate", "wayinout", "delay-sweep", "connect", "classify", "precision-table")
# Flag name -> model parameter name
PARAMETER_FLAGS = {
    "eps": "epsilon",
    "m": "m",
    "k": "k",
    "rho": "rho",
    "mu": "mu",
    "a": "a",
    "I": "I",
    "eta": "eta",
    "b": "b",
    "s": "s",
    "eta1": "eta1",
}


def _float_list(text: str) -> list[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def _add_common(parser: argparse.ArgumentParser) -> None:
    model = parser.add_argument_group("model")
    model.add_argument("--model", choices=[kind.value for kind in ModelKind], help="System to study")
    model.add_argument("--three-region", action="store_const", const="three-region", dest="model", help="Shortcut for --model three-region")
    for flag in PARAMETER_FLAGS:
        model.add_argument(f"--{flag}", type=float, help=f"Model parameter {flag}")

    options = parser.add_argument_group("options")
    options.add_argument("--delta", type=float, help="Tube radius")
    options.add_argument("--z-grid", type=_float_list, help="Comma-separated entry levels")
    options.add_argument("--z-start", type=float, help="First entry level of a uniform grid")
    options.add_argument("--z-stop", type=float, help="Last entry level of a uniform grid")
    options.add_argument("--z-num", type=int, default=50, help="Number of entry levels of a uniform grid")
    options.add_argument("--eps-grid", type=_float_list, help="Comma-separated eps values")
    options.add_argument("--precisions", type=_float_list, help="Comma-separated working precisions")
    options.add_argument("--work-precision", type=float, help="Event tolerance and crossing perturbation")
    options.add_argument("--budget", type=float, help="Fast-time horizon per passage phase")
    options.add_argument("--flatness", type=float, help="Plateau threshold relative to the curve range")
    options.add_argument("--t-max", type=float, help="Simulation horizon")
    options.add_argument("--dt", type=float, help="Sampling step of trajectory.csv")
    options.add_argument("--x0", type=float)
    options.add_argument("--y0", type=float)
    options.add_argument("--z0", type=float)
    options.add_argument("--quiet-min", type=float, help="Shortest quiescent arc when counting bursts")
    options.add_argument("--out", default=None, help="Output directory (default: current directory)")
    options.add_argument("--config", type=Path, help="JSON experiment configuration")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slow-passage", description="Slow passage through PWL Hopf-like bifurcations.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        _add_common(subparsers.add_parser(command))
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """Experiment configuration from parsed flags; a ``--config`` file is the base that flags override."""
    data: dict[str, Any] = {}
    if args.config is not None:
        data = json.loads(args.config.read_text(encoding="utf-8"))
    data["command"] = args.command

    params = dict(data.get("params", {}))
    for flag, name in PARAMETER_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            params[name] = value
    data["params"] = params
    if args.model is not None:
        data["kind"] = args.model

    if args.z_grid is not None:
        data["z_grid"] = args.z_grid
    elif args.z_start is not None and args.z_stop is not None:
        data["z_grid"] = np.linspace(args.z_start, args.z_stop, args.z_num).tolist()

    options = {
        "delta": args.delta,
        "eps_grid": args.eps_grid,
        "precisions": args.precisions,
        "work_precision": args.work_precision,
        "budget": args.budget,
        "flatness": args.flatness,
        "t_max": args.t_max,
        "dt": args.dt,
        "quiet_min_duration": args.quiet_min,
        "out": args.out,
    }
    data.update({key: value for key, value in options.items() if value is not None})
    initial = (args.x0, args.y0, args.z0)
    if any(v is not None for v in initial):
        if None in initial:
            raise PwlError("initial state needs --x0, --y0 and --z0 together")
        data["initial_state"] = initial
    return ExperimentConfig.model_validate(data)


def _emit_error(code: str, message: str) -> None:
    print(json.dumps({"error": code, "message": message}), file=sys.stderr)


def _library_error(error: ValidationError) -> PwlError | None:
    # Validators raise PwlError subclasses; pydantic wraps them
    for detail in error.errors():
        cause = detail.get("ctx", {}).get("error")
        if isinstance(cause, PwlError):
            return cause
    return None


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=log_level.upper(), stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)

    try:
        config = config_from_args(args)
        for path in run(config):
            logger.info(f"Wrote {path}")
    except ValidationError as e:
        cause = _library_error(e)
        if cause is not None:
            _emit_error(cause.code, cause.message)
        else:
            first = e.errors()[0]
            location = ".".join(str(part) for part in first["loc"])
            _emit_error("invalid-config", f"{location}: {first['msg']}" if location else first["msg"])
        return 2
    except PwlError as e:
        _emit_error(e.code, e.message)
        return 2
    except Exception as e:
        logger.exception("Unexpected failure")
        _emit_error("internal", str(e))
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
