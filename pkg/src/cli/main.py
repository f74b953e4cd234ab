"""
Command-line entry point.

    python -m src.cli.main solve-infinite model.json --out results/

Exit codes: 0 success, 1 invalid input, 2 numerical non-convergence,
3 a checked property failed.
"""
import argparse
import asyncio
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from src import VERSION
from src.core.errors import StoppingError
from src.core.services import COMMANDS, StoppingService, error_report
from src.infrastructure.config.loader import LoadedConfig, parse_config, read_document
from src.infrastructure.persistence.report_repo import FileResultSink

logger = logging.getLogger("StoppingSolver")


def _parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="python -m src.cli.main",
        description="Risk-sensitive optimal stopping of continuous-time Markov chains.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("config", type=Path, help="JSON run config (schema 1)")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory for CSV and JSON")
    parser.add_argument("--seed", type=int, default=None, help="override simulation and compare seeds")
    parser.add_argument("-v", "--verbose", action="store_true", help="DEBUG logging")
    parser.add_argument("--version", action="version", version=VERSION)
    return parser.parse_args(argv)


def _configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else os.getenv("LOG_LEVEL", "INFO").upper()
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )


def _load(path: Path, seed: Optional[int]) -> LoadedConfig:
    doc = read_document(path)
    if seed is not None:
        doc = dict(doc)
        doc["simulation"] = {**doc.get("simulation", {}), "seed": seed}
        if isinstance(doc.get("compare"), dict):
            doc["compare"] = {**doc["compare"], "seed": seed}
    return parse_config(doc)


def main(argv: Optional[List[str]] = None) -> int:
    args = _parse_args(argv)
    _configure_logging(args.verbose)
    sink = FileResultSink(args.out)
    loaded: Optional[LoadedConfig] = None
    try:
        loaded = _load(args.config, args.seed)
        result = asyncio.run(StoppingService().run(args.command, loaded))
    except StoppingError as e:
        logger.error(f"{args.command} failed: {e}")
        sink.write_report("report", error_report(args.command, e, loaded))
        return e.exit_code
    for path in result.persist(sink):
        logger.debug(f"artifact {path}")
    logger.info(f"{args.command} finished with exit code {result.exit_code}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
