"""
Console progress for sweeps.

Provides a Rich progress bar and a plain line-per-cell fallback.
"""

import importlib.util

from fixdiff.ui.plain import PlainProgress, fmt_hms, mkbar

# Check if Rich is available using importlib
RICH_AVAILABLE = importlib.util.find_spec("rich") is not None

__all__ = [
    "RICH_AVAILABLE",
    "PlainProgress",
    "fmt_hms",
    "mkbar",
    "make_progress",
]

if RICH_AVAILABLE:
    from fixdiff.ui.rich_progress import RichSweepProgress  # noqa: F401

    __all__.append("RichSweepProgress")


def make_progress(enabled: bool = True):
    """Rich progress on a colour-capable TTY, plain output otherwise."""
    if enabled and RICH_AVAILABLE:
        from fixdiff.ui.rich_progress import RichSweepProgress, should_use_color

        if should_use_color():
            return RichSweepProgress()
    return PlainProgress(enabled)
