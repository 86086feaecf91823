"""
Minimal self-contained SVG line plots (polylines, axes, legend).

Output is a pure function of the inputs so reruns produce identical bytes.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")

MARGIN_LEFT = 70
MARGIN_RIGHT = 160
MARGIN_TOP = 40
MARGIN_BOTTOM = 50


@dataclass(frozen=True)
class Series:
    label: str
    xs: Sequence[float]
    ys: Sequence[float]
    dashed: bool = False


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _nice_ticks(lo: float, hi: float, count: int = 5) -> List[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=mag * 10)
    first = math.ceil(lo / step) * step
    ticks = []
    v = first
    while v <= hi + 1e-9 * step:
        ticks.append(round(v, 12))
        v += step
    return ticks


def _points(s: Series, log_y: bool) -> List[Tuple[float, float]]:
    pts = []
    for x, y in zip(s.xs, s.ys):
        y = float(y)
        if not math.isfinite(y) or (log_y and y <= 0):
            continue
        pts.append((float(x), math.log10(y) if log_y else y))
    return pts


def line_plot(
    series: Sequence[Series],
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    log_y: bool = True,
    vlines: Sequence[Tuple[float, str]] = (),
    width: int = 720,
    height: int = 440,
    path: Optional[Union[str, Path]] = None,
) -> str:
    """
    Render series as an SVG document; non-positive or non-finite y values are skipped.

    With log_y the axis carries one tick per power of ten. vlines draws
    dashed vertical markers with labels.
    """
    all_pts = [_points(s, log_y) for s in series]
    flat = [p for pts in all_pts for p in pts]
    xs = [p[0] for p in flat] + [v[0] for v in vlines]
    ys = [p[1] for p in flat]
    x_lo, x_hi = (min(xs), max(xs)) if xs else (0.0, 1.0)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if ys:
        y_lo, y_hi = min(ys), max(ys)
    else:
        y_lo, y_hi = 0.0, 1.0
    if log_y:
        y_lo, y_hi = math.floor(y_lo), math.ceil(y_hi)
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    pw = width - MARGIN_LEFT - MARGIN_RIGHT
    ph = height - MARGIN_TOP - MARGIN_BOTTOM

    def sx(x: float) -> float:
        return MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * pw

    def sy(y: float) -> float:
        return MARGIN_TOP + (1.0 - (y - y_lo) / (y_hi - y_lo)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]

    for xt in _nice_ticks(x_lo, x_hi):
        px = sx(xt)
        out.append(f'<line x1="{px:.2f}" y1="{MARGIN_TOP + ph}" x2="{px:.2f}" y2="{MARGIN_TOP + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{px:.2f}" y="{MARGIN_TOP + ph + 18}" text-anchor="middle">{_fmt(xt)}</text>')

    y_ticks = range(int(y_lo), int(y_hi) + 1) if log_y else _nice_ticks(y_lo, y_hi)
    for yt in y_ticks:
        py = sy(yt)
        label = f"1e{int(yt)}" if log_y else _fmt(yt)
        out.append(f'<line x1="{MARGIN_LEFT - 5}" y1="{py:.2f}" x2="{MARGIN_LEFT + pw}" y2="{py:.2f}" stroke="#dddddd"/>')
        out.append(f'<text x="{MARGIN_LEFT - 8}" y="{py + 4:.2f}" text-anchor="end">{label}</text>')

    out.append(
        f'<text x="{MARGIN_LEFT + pw / 2:.1f}" y="{height - 12}" text-anchor="middle">{escape(xlabel)}</text>'
    )
    out.append(
        f'<text x="16" y="{MARGIN_TOP + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {MARGIN_TOP + ph / 2:.1f})">{escape(ylabel)}</text>'
    )

    for x, label in vlines:
        px = sx(float(x))
        out.append(
            f'<line x1="{px:.2f}" y1="{MARGIN_TOP}" x2="{px:.2f}" y2="{MARGIN_TOP + ph}" '
            f'stroke="#555555" stroke-dasharray="6,4"/>'
        )
        out.append(f'<text x="{px + 4:.2f}" y="{MARGIN_TOP + 12}">{escape(label)}</text>')

    for i, (s, pts) in enumerate(zip(series, all_pts)):
        color = PALETTE[i % len(PALETTE)]
        if pts:
            coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
            dash = ' stroke-dasharray="4,3"' if s.dashed else ""
            out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
        ly = MARGIN_TOP + 14 + 16 * i
        lx = MARGIN_LEFT + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly}">{escape(s.label)}</text>')

    out.append("</svg>")
    doc = "\n".join(out) + "\n"
    if path is not None:
        Path(path).write_text(doc)
    return doc
