"""
Plain-text sweep progress.

Used when rich is not available or in non-interactive terminals: one line
per finished cell on stderr, nothing at all when disabled.
"""

import sys
import threading
import time
from typing import Optional, TextIO


def mkbar(pct: int, width: int = 26) -> str:
    """Create a simple progress bar string."""
    pct = max(0, min(100, pct))
    filled = int(pct * width / 100)
    return "#" * filled + "-" * (width - filled)


def fmt_hms(seconds: float) -> str:
    """Format seconds as HH:MM:SS."""
    if seconds < 0:
        seconds = 0
    s = int(round(seconds))
    return f"{s // 3600:02d}:{(s % 3600) // 60:02d}:{s % 60:02d}"


class PlainProgress:
    """Fallback progress reporter; safe to call from worker threads."""

    def __init__(self, enabled: bool = True, stream: Optional[TextIO] = None):
        self.enabled = enabled
        self.stream = stream if stream is not None else sys.stderr
        self.total = 0
        self.done = 0
        self.failed = 0
        self.title = ""
        self._start = 0.0
        self._lock = threading.Lock()

    def start(self, total: int, title: str = "") -> None:
        self.total = total
        self.done = 0
        self.failed = 0
        self.title = title
        self._start = time.monotonic()

    def advance(self, label: str, ok: bool = True) -> None:
        with self._lock:
            self.done += 1
            if not ok:
                self.failed += 1
            if self.enabled:
                pct = int(100 * self.done / self.total) if self.total else 100
                status = "ok" if ok else "FAILED"
                self.stream.write(f"[{mkbar(pct)}] {self.done}/{self.total} {label} {status}\n")
                self.stream.flush()

    def log(self, msg: str) -> None:
        if self.enabled:
            self.stream.write(msg + "\n")
            self.stream.flush()

    def stop(self) -> None:
        if self.enabled and self.total:
            elapsed = fmt_hms(time.monotonic() - self._start)
            self.stream.write(f"{self.title}: {self.done}/{self.total} cells, {self.failed} failed in {elapsed}\n")
            self.stream.flush()

    def get_stats(self):
        return (self.done, self.failed, self.total)
