import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from pydantic import ValidationError

from app.config import get_settings
from app.deps import resolve_jobs
from lab.config_text import override_config, parse_config
from lab.errors import ConfigError, InvalidInputError, LabException
from routes import mle, metrics, segbench, sweep, verify
from routes.utils import Route, run_experiment
from schemas.experiment import ExperimentConfig, ExperimentKind

logger = logging.getLogger("coarsegrain")

logging.basicConfig(format='%(asctime)s - %(levelname)s: %(message)s')

# Subcommands, their experiment kind and handler
COMMANDS: dict[str, tuple[ExperimentKind, Route, str]] = {
    "verify": (ExperimentKind.verify, verify.run, "Check the information identities on seeded random instances"),
    "mle": (ExperimentKind.mle, mle.run, "Monte-Carlo efficiency study of multiclass versus binary MLE"),
    "segbench": (ExperimentKind.segbench, segbench.run, "Benchmark label schemes on synthetic scenes"),
    "metrics": (ExperimentKind.metrics, metrics.run, "Evaluate Dice, HD-95 and NSD of two label grids"),
    "sweep": (ExperimentKind.sweep, sweep.run, "One-axis sweep with plot data"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coarsegrain", description="Label coarsening laboratory")
    commands = parser.add_subparsers(dest="command", required=True)
    for name, (_, _, summary) in COMMANDS.items():
        sub = commands.add_parser(name, help=summary, description=summary)
        sub.add_argument("--config", type=Path, help="Experiment configuration file")
        sub.add_argument("--seed", type=int, help="Master seed, overrides the configuration")
        sub.add_argument("--out", help="Output directory, overrides the configuration")
        sub.add_argument("--jobs", type=int, help="Worker processes (default: COARSEGRAIN_JOBS or 1)")
        sub.add_argument("--quiet", action="store_true", help="Only log warnings and errors")
        if name == "metrics":
            sub.add_argument("prediction", nargs="?", help="Predicted label grid")
            sub.add_argument("ground_truth", nargs="?", help="Ground-truth label grid")
            sub.add_argument("--target-class", help="0-based class id evaluated as foreground")
            sub.add_argument("--tolerance", type=float, help="NSD tolerance in physical units")
            sub.add_argument("--spacing", type=float, nargs=2, metavar=("ROW", "COL"), help="Pixel spacing")
    return parser


def read_config_text(path: Optional[Path]) -> str:
    """
    Text of the configuration file, empty when none was given
    """
    if path is None:
        return ""
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise InvalidInputError(f"Could not read configuration {path}: {e.strerror or e}")
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ConfigError("Configuration is not valid UTF-8", (raw.count(b"\n", 0, e.start) + 1,))


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """
    Parse the configuration of a subcommand and apply the command-line overrides
    """
    kind = COMMANDS[args.command][0]
    cfg = parse_config(read_config_text(args.config), kind)
    overrides = {"seed": args.seed, "out_dir": args.out}
    if args.command == "metrics":
        overrides.update({"metrics.prediction": args.prediction, "metrics.ground_truth": args.ground_truth,
                          "metrics.target_class": args.target_class, "metrics.tolerance": args.tolerance,
                          "metrics.spacing": tuple(args.spacing) if args.spacing else None})
    return override_config(cfg, overrides)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one subcommand

    :param argv: Command-line arguments without the program name
    :return: Exit status: 0 on success, 1 when an assertion of the run failed, the error's exit code otherwise
    """
    args = build_parser().parse_args(argv)
    logger.setLevel(logging.WARNING if args.quiet else get_settings().log_level.upper())
    try:
        cfg = load_config(args)
        jobs = resolve_jobs(args.jobs)
        _, route, _ = COMMANDS[args.command]
        return run_experiment(cfg, route, args.command, jobs)
    except LabException as e:
        logger.error(e.detail)
        return e.exit_code
    except ValidationError as e:
        logger.error(f"Invalid input: {e.errors()[0]['msg']}")
        return InvalidInputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
