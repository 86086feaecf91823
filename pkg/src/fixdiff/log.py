"""
Logging setup for the command line.

Library modules only create `logging.getLogger(__name__)` loggers; the CLI
calls setup_logging once to attach a console handler and a per-run file.
"""

import logging
import sys
import time
from pathlib import Path
from typing import Optional

from fixdiff.ui import RICH_AVAILABLE

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


def _console_handler(level: int) -> logging.Handler:
    if RICH_AVAILABLE:
        from fixdiff.ui.rich_progress import should_use_color

        if should_use_color():
            from rich.console import Console
            from rich.logging import RichHandler

            handler: logging.Handler = RichHandler(
                console=Console(stderr=True), show_path=False, rich_tracebacks=False, markup=False
            )
            handler.setLevel(level)
            return handler
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    handler.setLevel(level)
    return handler


def setup_logging(level: int = logging.WARNING, log_dir: Optional[Path] = None, tag: str = "run") -> Optional[Path]:
    """
    Configure the `fixdiff` logger; returns the log file path if one was opened.

    The file handler always records DEBUG so a failed run can be inspected
    after the fact.
    """
    root = logging.getLogger("fixdiff")
    for h in list(root.handlers):
        root.removeHandler(h)
        h.close()
    root.setLevel(logging.DEBUG)
    root.propagate = False
    root.addHandler(_console_handler(level))

    if log_dir is None:
        return None
    log_dir.mkdir(parents=True, exist_ok=True)
    safe_tag = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in tag)
    path = log_dir / f"{time.strftime('%Y-%m-%d_%H%M%S')}_{safe_tag}.log"
    fh = logging.FileHandler(path, encoding="utf-8")
    fh.setFormatter(logging.Formatter(LOG_FORMAT))
    fh.setLevel(logging.DEBUG)
    root.addHandler(fh)
    return path


def clean_old_logs(log_dir: Path, days: int) -> int:
    """Remove *.log files older than `days`; returns how many were removed."""
    if not log_dir.exists():
        return 0
    cutoff = time.time() - days * 86400
    removed = 0
    for f in log_dir.glob("*.log"):
        try:
            if f.stat().st_mtime < cutoff:
                f.unlink()
                removed += 1
        except OSError:
            pass
    return removed
