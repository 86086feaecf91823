"""
Parallel sweep execution.

Handles:
- Running independent sweep cells in a thread pool
- SIGINT handling: stop scheduling, let running cells finish
- Gathering results in a deterministic order for a single writer
"""

import logging
import signal
import threading
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from fixdiff.ui import PlainProgress

logger = logging.getLogger(__name__)

POLL_SECONDS = 0.2


@dataclass(frozen=True)
class SweepCell:
    """One unit of work; `key` orders the gathered results."""

    key: Tuple
    label: str
    fn: Callable[[], Any]


@dataclass
class SweepResult:
    outputs: List[Any] = field(default_factory=list)
    completed: int = 0
    total: int = 0
    interrupted: bool = False


class SweepOrchestrator:
    """Run sweep cells in a ThreadPoolExecutor and gather outputs by key."""

    def __init__(self, workers: int = 1, progress: Optional[Any] = None, title: str = "sweep"):
        self.workers = max(1, int(workers))
        self.progress = progress if progress is not None else PlainProgress(enabled=False)
        self.title = title
        self.stop_event = threading.Event()
        self.interrupted = False

    def _run_cell(self, cell: SweepCell) -> Any:
        if self.stop_event.is_set():
            raise _Skipped()
        logger.debug("cell %s started", cell.label)
        return cell.fn()

    def _collect(self, fut: Future, cell: SweepCell, done: Dict[int, Any], index: int, errors: List) -> None:
        if fut.cancelled():
            return
        exc = fut.exception()
        if isinstance(exc, _Skipped):
            return
        if exc is not None:
            logger.error("cell %s failed: %s", cell.label, exc)
            errors.append(exc)
            self.stop_event.set()
            self.progress.advance(cell.label, ok=False)
            return
        done[index] = fut.result()
        self.progress.advance(cell.label, ok=True)

    def run(self, cells: Sequence[SweepCell]) -> SweepResult:
        """
        Execute every cell; returns outputs sorted by cell key.

        The first cell exception is re-raised after the pool has drained.
        """
        done: Dict[int, Any] = {}
        errors: List[BaseException] = []

        def on_sigint(_sig, _frm):
            self.interrupted = True
            self.stop_event.set()

        # signal handlers can only be installed from the main thread
        in_main = threading.current_thread() is threading.main_thread()
        old_handler = signal.signal(signal.SIGINT, on_sigint) if in_main else None

        self.progress.start(len(cells), self.title)
        try:
            with ThreadPoolExecutor(max_workers=self.workers, thread_name_prefix="fixdiff") as pool:
                futures = {pool.submit(self._run_cell, cell): i for i, cell in enumerate(cells)}
                pending = set(futures)
                while pending:
                    finished, pending = wait(pending, timeout=POLL_SECONDS, return_when=FIRST_COMPLETED)
                    for fut in finished:
                        i = futures[fut]
                        self._collect(fut, cells[i], done, i, errors)
                    if self.stop_event.is_set():
                        for fut in pending:
                            fut.cancel()
        finally:
            if in_main:
                signal.signal(signal.SIGINT, old_handler)
            self.progress.stop()

        if errors:
            raise errors[0]
        if self.interrupted:
            logger.warning("interrupted: %d of %d cells completed", len(done), len(cells))
        order = sorted(done, key=lambda i: cells[i].key)
        return SweepResult([done[i] for i in order], len(done), len(cells), self.interrupted)


class _Skipped(Exception):
    """Raised by cells dequeued after a stop request."""
