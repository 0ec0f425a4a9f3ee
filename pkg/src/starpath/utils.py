"""Starpath shared utilities - logging, colors, console output, JSON files."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path
from typing import Any

# ── Structured logging ───────────────────────────────────────────────

logger = logging.getLogger("starpath")


def setup_logging(verbose: bool = False) -> None:
    """Configure the ``starpath`` logger with a stderr handler.

    In interactive terminals the format is compact; in pipes / CI it
    includes severity and logger name for machine parsing.
    """
    level = logging.DEBUG if verbose else logging.INFO
    handler = logging.StreamHandler(sys.stderr)
    if sys.stderr.isatty():
        fmt = "%(asctime)s %(message)s"
    else:
        fmt = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
    handler.setFormatter(logging.Formatter(fmt, datefmt="%H:%M:%S"))
    logger.setLevel(level)
    if not logger.handlers:
        logger.addHandler(handler)

# ── Version ─────────────────────────────────────────────────────────

try:
    from importlib.metadata import version as _get_version
    VERSION = _get_version("starpath")
except Exception:
    VERSION = "0.1.0"

# ── ANSI colors ─────────────────────────────────────────────────────


class Style:
    """Terminal color and icon constants."""
    RESET = "\033[0m"
    BOLD = "\033[1m"
    RED = "\033[31m"
    GREEN = "\033[32m"
    YELLOW = "\033[33m"
    PASS = "✔"
    FAIL = "✘"
    WARN = "⚠"


PASS_ICON = f"{Style.GREEN}{Style.PASS}{Style.RESET}"
FAIL_ICON = f"{Style.RED}{Style.FAIL}{Style.RESET}"
WARN_ICON = f"{Style.YELLOW}{Style.WARN}{Style.RESET}"

# ── Output helpers ──────────────────────────────────────────────────


def print_error(msg: str) -> None:
    """Print an error message to stderr in red."""
    print(f"  {Style.RED}{msg}{Style.RESET}", file=sys.stderr)


def print_warning(msg: str) -> None:
    """Print a warning message to stderr in yellow."""
    print(f"  {Style.YELLOW}{msg}{Style.RESET}", file=sys.stderr)


def print_success(msg: str) -> None:
    """Print a success message in green."""
    print(f"  {Style.GREEN}{msg}{Style.RESET}")


def print_check(ok: bool, msg: str, warn_only: bool = False) -> None:
    """Print one diagnostic line prefixed with a pass / fail / warn icon."""
    if ok:
        icon = PASS_ICON
    else:
        icon = WARN_ICON if warn_only else FAIL_ICON
    print(f"  [{icon}] {msg}")

# ── JSON file helpers ───────────────────────────────────────────────


def safe_read_json(path: Path, default: Any = None) -> Any:
    """Read and parse a JSON file, returning *default* on any failure."""
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, OSError, TypeError):
        return default


def write_json(path: Path, data: Any) -> None:
    """Write *data* as pretty, key-sorted JSON so reruns produce identical bytes."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
