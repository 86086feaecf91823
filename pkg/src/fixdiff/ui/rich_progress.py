"""
Rich-based sweep progress.

Respects:
- NO_COLOR environment variable
- FIXDIFF_SCRIPT_MODE environment variable
- sys.stdout.isatty() for automatic detection
"""

import threading
import time
from typing import Optional

from rich.console import Console
from rich.progress import BarColumn, MofNCompleteColumn, Progress, SpinnerColumn, TaskID, TextColumn, TimeElapsedColumn
from rich.table import Table

from fixdiff.config import is_script_mode
from fixdiff.ui.plain import fmt_hms


def should_use_color() -> bool:
    """Check if color output should be used."""
    return not is_script_mode()


class RichSweepProgress:
    """Progress bar over sweep cells, with failures logged above it."""

    def __init__(self, console: Optional[Console] = None):
        self.console = console or Console(stderr=True)
        self.enabled = True
        self.total = 0
        self.done = 0
        self.failed = 0
        self.title = ""
        self._start = 0.0
        self._lock = threading.Lock()
        self.progress: Optional[Progress] = None
        self.task: Optional[TaskID] = None

    def start(self, total: int, title: str = "") -> None:
        self.total = total
        self.done = 0
        self.failed = 0
        self.title = title
        self._start = time.monotonic()
        self.progress = Progress(
            SpinnerColumn(),
            TextColumn("[bold blue]{task.description}[/bold blue]"),
            BarColumn(bar_width=40),
            MofNCompleteColumn(),
            TextColumn("•"),
            TimeElapsedColumn(),
            console=self.console,
            transient=True,
        )
        self.task = self.progress.add_task(title or "sweep", total=total)
        self.progress.start()

    def advance(self, label: str, ok: bool = True) -> None:
        with self._lock:
            self.done += 1
            if not ok:
                self.failed += 1
                self.console.print(f"  [red]✗[/red] {label}")
            if self.progress is not None and self.task is not None:
                self.progress.update(self.task, advance=1)

    def log(self, msg: str) -> None:
        self.console.print(msg)

    def stop(self) -> None:
        if self.progress is not None:
            self.progress.stop()
            self.progress = None
        table = Table(title=self.title or "Summary", box=None, show_header=False)
        table.add_column("Metric", style="bold")
        table.add_column("Value", justify="right")
        table.add_row("✓ cells", f"[green]{self.done - self.failed}[/green]")
        table.add_row("✗ failed", f"[red]{self.failed}[/red]")
        table.add_row("⏱ time", fmt_hms(time.monotonic() - self._start))
        self.console.print(table)

    def get_stats(self):
        return (self.done, self.failed, self.total)
