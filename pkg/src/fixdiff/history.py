"""
Run history for fixdiff commands.

Tracks every experiment or check run with timestamps, row counts and
results. Uses SQLite as primary storage with JSONL fallback if SQLite is
unavailable.
"""

import datetime
import json
import logging
import threading
import time
from pathlib import Path
from typing import Dict, List, Optional

logger = logging.getLogger(__name__)

# SQLite support (usually available, but check anyway)
try:
    import sqlite3

    SQLITE_AVAILABLE = True
except ImportError:
    SQLITE_AVAILABLE = False

STATUSES = ("running", "done", "failed", "interrupted")


class RunHistory:
    """History storage with SQLite primary and JSONL text fallback."""

    def __init__(self, state_dir: Path, use_sqlite: Optional[bool] = None):
        self.state_dir = state_dir
        self._last_id = 0
        self._use_sqlite = SQLITE_AVAILABLE if use_sqlite is None else (use_sqlite and SQLITE_AVAILABLE)
        if self._use_sqlite:
            self._db_path = state_dir / "history.db"
            self._init_sqlite()
        else:
            self._log_path = state_dir / "history.jsonl"

    def _connect(self):
        return sqlite3.connect(str(self._db_path))

    def _init_sqlite(self) -> None:
        conn = self._connect()
        conn.execute("""
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY,
                command TEXT NOT NULL,
                config_path TEXT,
                out_dir TEXT,
                seeds INTEGER,
                started_at TEXT NOT NULL,
                finished_at TEXT,
                status TEXT NOT NULL,
                rows INTEGER,
                elapsed_s REAL,
                error_msg TEXT
            )
        """)
        conn.execute("CREATE INDEX IF NOT EXISTS idx_started ON runs(started_at)")
        conn.commit()
        conn.close()

    def _append(self, entry: dict) -> None:
        with self._log_path.open("a", encoding="utf-8") as f:
            f.write(json.dumps(entry) + "\n")

    def record_start(self, command: str, config_path: Optional[Path], out_dir: Optional[Path], seeds: int) -> int:
        """Record a run start, return entry ID."""
        started_at = datetime.datetime.now().isoformat()
        if self._use_sqlite:
            conn = self._connect()
            cur = conn.execute(
                """INSERT INTO runs (command, config_path, out_dir, seeds, started_at, status)
                   VALUES (?, ?, ?, ?, ?, ?)""",
                (command, str(config_path) if config_path else None, str(out_dir) if out_dir else None, seeds,
                 started_at, "running"),
            )
            entry_id = cur.lastrowid or 0
            conn.commit()
            conn.close()
            return entry_id
        # For JSONL, we use timestamp as pseudo-ID
        entry_id = max(int(time.time() * 1000), self._last_id + 1)
        self._last_id = entry_id
        self._append(
            {
                "id": entry_id,
                "command": command,
                "config_path": str(config_path) if config_path else None,
                "out_dir": str(out_dir) if out_dir else None,
                "seeds": seeds,
                "started_at": started_at,
                "status": "running",
            }
        )
        return entry_id

    def record_finish(
        self, entry_id: int, status: str, rows: int = 0, elapsed_s: float = 0.0, error_msg: Optional[str] = None
    ) -> None:
        """Update entry with completion info."""
        if status not in STATUSES:
            raise ValueError(f"unknown run status {status!r}")
        finished_at = datetime.datetime.now().isoformat()
        if self._use_sqlite:
            conn = self._connect()
            conn.execute(
                "UPDATE runs SET finished_at=?, status=?, rows=?, elapsed_s=?, error_msg=? WHERE id=?",
                (finished_at, status, rows, elapsed_s, error_msg, entry_id),
            )
            conn.commit()
            conn.close()
            return
        self._append(
            {
                "id": entry_id,
                "finished_at": finished_at,
                "status": status,
                "rows": rows,
                "elapsed_s": elapsed_s,
                "error_msg": error_msg,
            }
        )

    def _jsonl_entries(self) -> List[dict]:
        if not self._log_path.exists():
            return []
        merged: Dict[int, dict] = {}
        with self._log_path.open("r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                try:
                    e = json.loads(line)
                except json.JSONDecodeError:
                    continue
                merged.setdefault(e.get("id"), {}).update(e)
        return list(merged.values())

    def get_recent(self, limit: int = 20) -> List[dict]:
        """Most recent runs first."""
        if self._use_sqlite:
            conn = self._connect()
            conn.row_factory = sqlite3.Row
            cur = conn.execute("SELECT * FROM runs ORDER BY started_at DESC, id DESC LIMIT ?", (limit,))
            rows = [dict(row) for row in cur.fetchall()]
            conn.close()
            return rows
        entries = sorted(self._jsonl_entries(), key=lambda x: (x.get("started_at", ""), x.get("id", 0)), reverse=True)
        return entries[:limit]

    def get_stats(self) -> dict:
        """Counts by status and by command, plus total elapsed time of finished runs."""
        if self._use_sqlite:
            conn = self._connect()
            stats: dict = {}
            cur = conn.execute("SELECT status, COUNT(*) FROM runs GROUP BY status")
            stats["by_status"] = {row[0]: row[1] for row in cur.fetchall()}
            cur = conn.execute("SELECT command, COUNT(*) FROM runs GROUP BY command")
            stats["by_command"] = {row[0]: row[1] for row in cur.fetchall()}
            cur = conn.execute("SELECT SUM(elapsed_s), SUM(rows) FROM runs WHERE status='done'")
            row = cur.fetchone()
            stats["total_elapsed_s"] = row[0] or 0.0
            stats["total_rows"] = row[1] or 0
            conn.close()
            return stats

        entries = self._jsonl_entries()
        result: dict = {"by_status": {}, "by_command": {}}
        for e in entries:
            s = e.get("status", "unknown")
            result["by_status"][s] = result["by_status"].get(s, 0) + 1
            c = e.get("command", "unknown")
            result["by_command"][c] = result["by_command"].get(c, 0) + 1
        done = [e for e in entries if e.get("status") == "done"]
        result["total_elapsed_s"] = sum(e.get("elapsed_s", 0.0) or 0.0 for e in done)
        result["total_rows"] = sum(e.get("rows", 0) or 0 for e in done)
        return result

    def clean_old(self, days: int) -> int:
        """Remove entries older than N days. Returns count removed."""
        cutoff = (datetime.datetime.now() - datetime.timedelta(days=days)).isoformat()
        if self._use_sqlite:
            conn = self._connect()
            cur = conn.execute("DELETE FROM runs WHERE started_at < ?", (cutoff,))
            count = cur.rowcount
            conn.commit()
            conn.close()
            return count
        entries = self._jsonl_entries()
        kept = [e for e in entries if e.get("started_at", "") >= cutoff]
        with self._log_path.open("w", encoding="utf-8") as f:
            for e in kept:
                f.write(json.dumps(e) + "\n")
        return len(entries) - len(kept)


class RunRecorder:
    """Track the in-flight run and never let history failures break a command."""

    def __init__(self, history: Optional[RunHistory]) -> None:
        self._history = history
        self._lock = threading.Lock()
        self._entry: Optional[int] = None
        self._started = 0.0

    def start(self, command: str, config_path: Optional[Path] = None, out_dir: Optional[Path] = None, seeds: int = 1):
        if self._history is None:
            return
        try:
            entry = self._history.record_start(command, config_path, out_dir, seeds)
        except Exception as e:
            logger.debug("history unavailable: %s", e)
            return
        with self._lock:
            self._entry = entry
            self._started = time.time()

    def finish(self, status: str, rows: int = 0, error_msg: Optional[str] = None) -> None:
        with self._lock:
            entry, started = self._entry, self._started
            self._entry = None
        if self._history is None or entry is None:
            return
        try:
            self._history.record_finish(entry, status, rows, time.time() - started, error_msg)
        except Exception as e:
            logger.debug("history update failed: %s", e)

    def interrupt(self, reason: str = "interrupted") -> None:
        self.finish("interrupted", error_msg=reason)
