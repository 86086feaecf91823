"""
Command-line interface for fixdiff.

This is the main entry point for the application.
"""

import argparse
import json
import logging
import shutil
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional

from fixdiff import __author__, __license__, __url__, __version__
from fixdiff.checks import SUITES, run_suite
from fixdiff.config import (
    TOML_AVAILABLE,
    Config,
    apply_config_to_args,
    get_app_dirs,
    load_config_file,
    save_default_config,
)
from fixdiff.errors import ConfigError, FixdiffError
from fixdiff.experiments import PROBLEMS, run_elastic, run_poisoning, solve_problem
from fixdiff.history import SQLITE_AVAILABLE, RunHistory, RunRecorder
from fixdiff.log import clean_old_logs, setup_logging
from fixdiff.ui import make_progress

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_INTERRUPTED = 130

EXPERIMENTS = {"elastic": run_elastic, "poisoning": run_poisoning}

# CLI dest -> Config attribute, for flags that override the config files
CLI_OVERRIDES = {
    "seeds": "seeds",
    "seed": "seed",
    "workers": "workers",
    "timing": "timing",
    "out": "out_dir",
    "schedule": "schedule",
}


# -------------------- ARGUMENT PARSING --------------------


def _common_parser() -> argparse.ArgumentParser:
    """Options shared by the commands that run computations."""
    common = argparse.ArgumentParser(add_help=False)

    cfg_group = common.add_argument_group("Configuration")
    cfg_group.add_argument("--config", type=Path, metavar="FILE", help="Extra config file (TOML or INI)")
    cfg_group.add_argument("--seed", type=int, default=None, help="Base seed")
    cfg_group.add_argument(
        "--schedule", choices=["theory", "preset"], default=None, help="Decreasing step-size schedule"
    )

    run_group = common.add_argument_group("Execution")
    run_group.add_argument("--workers", type=int, default=None, metavar="N", help="Parallel sweep cells (0 = auto)")
    run_group.add_argument(
        "--timing", action="store_true", default=None, help="Write measured wall_ms instead of 0 to runs.csv"
    )
    run_group.add_argument("--no-progress", action="store_true", help="Disable progress output")
    run_group.add_argument("-d", "--debug", action="store_true", default=argparse.SUPPRESS, help="Debug logging")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fixdiff",
        description="Conservative derivatives of nonsmooth fixed points: ITD, AID, NSID and bilevel experiments.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s exp elastic --out results/       # Elastic-net sweeps (ITD / AID / NSID / SID)
  %(prog)s exp poisoning --seeds 10         # Data-poisoning sweep over 10 seeds
  %(prog)s check excess                     # Property suite, one line per check
  %(prog)s solve --problem poisoning        # Single solve with reference constants
  %(prog)s history 50                       # Last 50 runs
  %(prog)s --show-dirs                      # Show config/state/log directories
        """,
    )

    parser.add_argument(
        "-V",
        "--version",
        action="version",
        version=f"%(prog)s {__version__}\nAuthor: {__author__}\nLicense: {__license__}\nURL: {__url__}",
    )
    parser.add_argument("-d", "--debug", action="store_true", help="Debug logging")

    util_group = parser.add_argument_group("Utility commands")
    util_group.add_argument("--show-dirs", action="store_true", help="Show XDG directories used by fixdiff")
    util_group.add_argument("--clean-logs", type=int, metavar="DAYS", help="Remove log files older than DAYS")

    common = _common_parser()
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    exp = sub.add_parser("exp", parents=[common], help="Run an experiment sweep")
    exp.add_argument("experiment", choices=sorted(EXPERIMENTS), help="Which experiment")
    exp.add_argument("--out", type=Path, default=None, metavar="DIR", help="Output directory")
    exp.add_argument("--seeds", type=int, default=None, metavar="N", help="Number of seeds")

    check = sub.add_parser("check", parents=[common], help="Run a property suite")
    check.add_argument("suite", choices=list(SUITES), help="Which suite")

    solve = sub.add_parser("solve", parents=[common], help="Solve one problem and report its constants")
    solve.add_argument("--problem", choices=PROBLEMS, default="elastic")
    solve.add_argument("--outer-steps", type=int, default=0, metavar="N", help="Projected hypergradient steps")
    solve.add_argument("--outer-lr", type=float, default=0.01, metavar="X", help="Outer step size")
    solve.add_argument("--json", action="store_true", help="Print the report as JSON")

    hist = sub.add_parser("history", help="Show or clean the run history")
    hist.add_argument("limit", nargs="?", type=int, default=20, help="Number of runs to show")
    hist.add_argument("--stats", action="store_true", help="Show counts by status and command")
    hist.add_argument("--clean", type=int, metavar="DAYS", help="Remove entries older than DAYS")
    return parser


def parse_args(args: Optional[List[str]] = None) -> argparse.Namespace:
    return build_parser().parse_args(args)


# -------------------- CONFIG --------------------


def build_config(args: argparse.Namespace, app_dirs: Dict[str, Path]) -> Config:
    """
    Layer defaults < system file < user file < --config < explicit flags.

    Raises ConfigError with the dotted field path on bad input.
    """
    cfg = Config()
    save_default_config(app_dirs["config"])
    file_config = load_config_file(app_dirs["config"], extra=getattr(args, "config", None))

    explicit: Dict[str, Any] = {}
    for dest, attr in CLI_OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is not None:
            explicit[attr] = str(value) if attr == "out_dir" else value
    if getattr(args, "no_progress", False):
        explicit["progress"] = False
    if getattr(args, "debug", False):
        explicit["debug"] = True

    apply_config_to_args(file_config, cfg, set(explicit))
    for attr, value in explicit.items():
        setattr(cfg, attr, value)
    cfg.validate()
    return cfg


# -------------------- UTILITY COMMANDS --------------------


def handle_utility_commands(args: argparse.Namespace, app_dirs: Dict[str, Path]) -> Optional[int]:
    """Handle flags that print something and exit."""
    if args.show_dirs:
        print("fixdiff directories:")
        print()
        print("User directories (XDG):")
        print(f"  Config:  {app_dirs['config']}")
        print(f"  State:   {app_dirs['state']}")
        print(f"  Logs:    {app_dirs['logs']}")
        print(f"  Cache:   {app_dirs['cache']}")
        print()
        print(f"TOML config support: {'yes' if TOML_AVAILABLE else 'no (INI fallback)'}")
        print(f"History backend:     {'sqlite' if SQLITE_AVAILABLE else 'jsonl'}")
        return EXIT_OK

    if args.clean_logs is not None:
        removed = clean_old_logs(app_dirs["logs"], args.clean_logs)
        print(f"Removed {removed} log files older than {args.clean_logs} days")
        return EXIT_OK
    return None


def cmd_history(args: argparse.Namespace, history: RunHistory) -> int:
    if args.clean is not None:
        removed = history.clean_old(args.clean)
        print(f"Removed {removed} history entries")
        return EXIT_OK

    if args.stats:
        stats = history.get_stats()
        by_status = stats.get("by_status", {})
        total = sum(by_status.values())
        print("Run statistics:")
        print("-" * 40)
        print(f"  Total runs:  {total}")
        for status, count in sorted(by_status.items()):
            pct = (count / total * 100) if total > 0 else 0
            print(f"    {status:12} {count:5} ({pct:.1f}%)")
        for command, count in sorted(stats.get("by_command", {}).items()):
            print(f"    {command:20} {count:5}")
        total_time = stats.get("total_elapsed_s", 0.0)
        print(f"  Rows written:  {stats.get('total_rows', 0)}")
        print(f"  Total time:    {total_time:.1f}s ({total_time / 3600:.1f}h)")
        return EXIT_OK

    limit = min(max(1, args.limit), 1000)
    recent = history.get_recent(limit)
    if not recent:
        print("No run history found.")
        return EXIT_OK

    term_cols = shutil.get_terminal_size((80, 20)).columns
    print(f"Recent runs (last {len(recent)}):")
    print("-" * min(80, term_cols - 1))
    for entry in recent:
        status = entry.get("status", "?")
        started = (entry.get("started_at") or "?")[:19]
        icon = {"done": "✓", "failed": "✗", "interrupted": "⊘", "running": "⚙"}.get(status, "?")
        command = entry.get("command", "?")
        rows = entry.get("rows")
        suffix = f" ({rows} rows)" if rows else ""
        print(f"  {icon} [{started}] {status:11} {command}{suffix}")
    return EXIT_OK


# -------------------- COMMANDS --------------------


def cmd_exp(args: argparse.Namespace, cfg: Config, recorder: RunRecorder) -> int:
    out_dir = Path(cfg.out_dir)
    recorder.start(f"exp {args.experiment}", args.config, out_dir, cfg.seeds)
    start = time.time()
    output = EXPERIMENTS[args.experiment](cfg, out_dir, make_progress(cfg.progress))
    if output.interrupted:
        recorder.interrupt()
        print(f"Interrupted: partial results in {out_dir}", file=sys.stderr)
        return EXIT_INTERRUPTED
    recorder.finish("done", rows=output.rows)
    for path in output.files:
        print(path)
    print(f"{output.rows} rows in {time.time() - start:.1f}s")
    return EXIT_OK


def cmd_check(args: argparse.Namespace, cfg: Config, recorder: RunRecorder) -> int:
    recorder.start(f"check {args.suite}", args.config, None, 1)
    results = run_suite(args.suite, seed=cfg.seed)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        recorder.finish("failed", rows=len(results), error_msg=f"{len(failed)} checks failed")
        return EXIT_FAILED
    recorder.finish("done", rows=len(results))
    return EXIT_OK


def _format_value(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, list):
        if not value:
            return "[]"
        return f"{len(value)} steps, {_format_value(value[0])} -> {_format_value(value[-1])}"
    return str(value)


def cmd_solve(args: argparse.Namespace, cfg: Config, recorder: RunRecorder) -> int:
    recorder.start(f"solve {args.problem}", args.config, None, 1)
    report = solve_problem(cfg, args.problem, outer_steps=args.outer_steps, outer_lr=args.outer_lr)
    if args.json:
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        width = max(len(k) for k in report)
        for key, value in report.items():
            print(f"  {key:{width}}  {_format_value(value)}")
    recorder.finish("done", rows=1)
    return EXIT_OK


COMMANDS = {"exp": cmd_exp, "check": cmd_check, "solve": cmd_solve}


# -------------------- MAIN --------------------


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)
    app_dirs = get_app_dirs()

    result = handle_utility_commands(args, app_dirs)
    if result is not None:
        return result
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG

    history = RunHistory(app_dirs["state"])
    if args.command == "history":
        return cmd_history(args, history)

    try:
        cfg = build_config(args, app_dirs)
    except ConfigError as e:
        print(f"Config error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    level = logging.DEBUG if cfg.debug else logging.WARNING
    log_path = setup_logging(level, app_dirs["logs"], tag=args.command)
    logger.debug("log file: %s", log_path)

    recorder = RunRecorder(history)
    try:
        return COMMANDS[args.command](args, cfg, recorder)
    except KeyboardInterrupt:
        recorder.interrupt()
        print("Interrupted", file=sys.stderr)
        return EXIT_INTERRUPTED
    except ConfigError as e:
        recorder.finish("failed", error_msg=str(e))
        print(f"Config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FixdiffError as e:
        recorder.finish("failed", error_msg=str(e))
        logger.debug("command failed", exc_info=True)
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
