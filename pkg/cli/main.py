"""
gammaphase - Command-Line Entry Point

    gammaphase <command> --config <path> [--out <dir>] [--seed <n>] [--threads <n>]

Commands: wells, compat, profile, minimize, cell, anisotropy, mass-sweep,
compactness. The exit status is the run status (0 ok, 2 invalid input,
3 solver failure, 4 geometry/range failure).
"""
from pathlib import Path
from typing import List, Optional
import argparse
import logging
import os
import sys

from rich.console import Console
from rich.logging import RichHandler

from config.settings import settings
from schemas.run_config import Command
from services.run_service import EXIT_INVALID, EXIT_OK, RunService

logger = logging.getLogger(__name__)
console = Console(stderr=True)


def setup_logging(level: Optional[str] = None) -> None:
    """File log at settings.LOG_FILE plus a rich console handler"""
    log_file = Path(settings.LOG_FILE)
    os.makedirs(log_file.parent, exist_ok=True)
    file_handler = logging.FileHandler(log_file)
    file_handler.setFormatter(logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s'))
    logging.basicConfig(
        level=getattr(logging, (level or settings.LOG_LEVEL).upper()),
        format="%(message)s",
        handlers=[file_handler, RichHandler(console=console, show_path=False)],
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gammaphase",
                                     description="Chemo-elastic phase-field energies and their sharp-interface limit")
    parser.add_argument("command", choices=[c.value for c in Command])
    parser.add_argument("--config", required=True, help="JSON run document")
    parser.add_argument("--out", default=None, help="Run registry root (default: config output_dir)")
    parser.add_argument("--seed", type=int, default=None, help="Overrides solve.seed")
    parser.add_argument("--threads", type=int, default=None,
                        help="Campaign workers (default: GAMMAPHASE_THREADS)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()

    if args.seed is not None and args.seed < 0:
        logger.error("--seed must be nonnegative")
        return EXIT_INVALID
    try:
        text = Path(args.config).read_text()
    except OSError as e:
        logger.error(f"Cannot read config {args.config}: {e}")
        return EXIT_INVALID

    threads = args.threads or settings.GAMMAPHASE_THREADS
    service = RunService(output_dir=args.out, threads=threads)
    status, run_dir = service.execute(text, command=args.command, seed=args.seed)

    style = "green" if status == EXIT_OK else "red"
    console.print(f"[{style}]{args.command}[/{style}] exit {status} -> {run_dir}")
    return status


if __name__ == "__main__":
    sys.exit(main())
