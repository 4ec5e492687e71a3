"""
growthcast - Main Application Module
Точка входа командной строки: обучение, проверка, перебор архитектур, прогноз
"""

import argparse
import sys
from datetime import date
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from growthcast import __version__
from growthcast.cli import commands
from growthcast.core.config import load_run_config
from growthcast.core.exceptions import exit_code_for
from growthcast.core.logging import configure_logging, get_logger
from growthcast.core.metrics import metrics

logger = get_logger(__name__)


def _iso_date(value: str) -> date:
    try:
        return date.fromisoformat(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected YYYY-MM-DD, got {value!r}") from None


def build_parser() -> argparse.ArgumentParser:
    """Парсер аргументов: общие флаги переопределяют файл конфигурации"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="dotenv-style run configuration file")
    common.add_argument("--seed", type=int, help="random seed (SEED)")
    common.add_argument("--out", type=Path, help="output directory (OUTPUT_DIR)")
    common.add_argument("--iterations", type=int, help="training iterations (ITERATIONS)")
    common.add_argument("--hidden", type=int, help="hidden size (HIDDEN_SIZE)")
    common.add_argument("--layers", type=int, help="stacked layers (NUM_LAYERS)")
    common.add_argument("--cell", choices=["lstm", "rnn"], help="cell kind (CELL_KIND)")
    common.add_argument("--workers", type=int, help="parallel trials (WORKERS)")
    common.add_argument("--log-level", help="LOG_LEVEL")

    parser = argparse.ArgumentParser(
        prog="growthcast",
        description="Multivariate LSTM/RNN forecasting of epidemic case growth",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", parents=[common], help="train and write checkpoints")
    train.add_argument("--trials", type=int, help="train the first N TRIAL_SEEDS instead of SEED")

    validate = sub.add_parser("validate", parents=[common], help="evaluate checkpoints on validation regions")
    validate.add_argument("--checkpoint", nargs="+", required=True, help="checkpoint files or directories")

    sweep = sub.add_parser("sweep", parents=[common], help="architecture sweep")
    sweep.add_argument("--axis", choices=["hidden", "layers", "cell"], required=True)
    sweep.add_argument("--copy-task-iterations", type=int,
                       help="with --axis cell: long-lag copy task iterations, 0 skips it (COPY_TASK_ITERATIONS)")

    forecast = sub.add_parser("forecast", parents=[common], help="continue actual curves past an anchor date")
    forecast.add_argument("--checkpoint", nargs="+", required=True, help="checkpoint files or directories")
    forecast.add_argument("--anchor-date", type=_iso_date, required=True, help="last day of actual data")
    forecast.add_argument("--region", action="append", help="region (repeatable); default VALIDATION_REGIONS")

    gradcheck = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    gradcheck.add_argument("--trials", type=int, default=10, help="random parameter draws")

    sample = sub.add_parser("sample-data", parents=[common], help="write synthetic JHU-layout CSVs")
    sample.add_argument("--days", type=int, default=120)
    sample.add_argument("--dir", type=Path, default=Path("data"), help="target directory")
    return parser


def _diagnostic(error: BaseException) -> str:
    if isinstance(error, ValidationError):
        first = error.errors()[0]
        location = ".".join(str(part) for part in first.get("loc", ())) or "config"
        return f"invalid configuration: {location}: {first['msg']}"
    return str(error).splitlines()[0] if str(error) else type(error).__name__


def run(args: argparse.Namespace) -> int:
    config = load_run_config(
        args.config,
        SEED=args.seed,
        OUTPUT_DIR=args.out,
        ITERATIONS=args.iterations,
        HIDDEN_SIZE=args.hidden,
        NUM_LAYERS=args.layers,
        CELL_KIND=args.cell,
        WORKERS=args.workers,
        LOG_LEVEL=args.log_level,
        COPY_TASK_ITERATIONS=getattr(args, "copy_task_iterations", None),
    )
    configure_logging(config.LOG_LEVEL, config.LOG_FORMAT)
    logger.info("command started", command=args.command, app=config.APP_NAME, version=config.APP_VERSION)

    if args.command == "train":
        code = commands.cmd_train(config, trials=args.trials)
    elif args.command == "validate":
        code = commands.cmd_validate(config, args.checkpoint)
    elif args.command == "sweep":
        code = commands.cmd_sweep(config, args.axis)
    elif args.command == "forecast":
        code = commands.cmd_forecast(config, args.checkpoint, args.anchor_date, args.region)
    elif args.command == "gradcheck":
        code = commands.cmd_gradcheck(config, trials=args.trials, hidden=args.hidden, layers=args.layers)
    else:
        code = commands.cmd_sample_data(config, args.dir, days=args.days)
    logger.info("command finished", command=args.command, exit_code=code, **metrics.summary())
    return code


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return run(args)
    except Exception as error:
        code = exit_code_for(error)
        logger.debug("command failed", command=args.command, exc_info=True)
        print(f"growthcast {args.command}: {_diagnostic(error)}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
