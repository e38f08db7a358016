"""
Command-line entry point.

- Configures structured logging (stderr; stdout is left to command output)
- Registers every subcommand module
- Maps engine errors to ``error: <code>: <message>`` with exit status 2
"""

from __future__ import annotations

import argparse
import sys
from collections.abc import Sequence

import structlog
import torch

from tae.commands import ablate, enhance, evaluate, synth, sweep, train
from tae.config import settings
from tae.errors import TAEError

# ── Structured logging setup ───────────────────────────────────────────────


def _stderr_logger(*args: object) -> structlog.PrintLogger:
    # looked up per logger; sys.stderr may be swapped or closed after configure
    return structlog.PrintLogger(sys.stderr)


def configure_logging(level: int | None = None, fmt: str | None = None) -> None:
    renderer = (
        structlog.processors.JSONRenderer()
        if (fmt or settings.log_format) == "json"
        else structlog.dev.ConsoleRenderer(colors=False)
    )
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(
            settings.log_level_number if level is None else level
        ),
        context_class=dict,
        logger_factory=_stderr_logger,
        cache_logger_on_first_use=False,
    )


logger = structlog.get_logger(__name__)

_COMMANDS = (train, enhance, evaluate, synth, ablate, sweep)


# ── Parser ──────────────────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tae",
        description="Target-aware low-light enhancement: training, enhancement and tracking evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command in _COMMANDS:
        command.register(sub)
    return parser


# ── CLI entry point ─────────────────────────────────────────────────────────

def main(argv: Sequence[str] | None = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    if settings.torch_threads > 0:
        torch.set_num_threads(settings.torch_threads)

    try:
        return args.handler(args)
    except TAEError as exc:
        message = " ".join(str(exc).split())
        print(f"error: {exc.code}: {message}", file=sys.stderr)
        return 2
    except Exception:
        logger.exception("command_failed", command=args.command)
        return 1


if __name__ == "__main__":
    sys.exit(main())
