"""Self-contained SVG line charts.

Charts are a viewing convenience; the CSV files are the contract.  Writing
the SVG by hand keeps the output byte-deterministic and dependency-free.
"""

from __future__ import annotations

import math
from pathlib import Path

__all__ = ["line_chart"]

_WIDTH, _HEIGHT = 720, 480
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 72, 24, 40, 56
_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _ticks_linear(lo: float, hi: float, count: int = 6) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min(s * mag for s in (1, 2, 5, 10) if s * mag >= raw)
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * step:
        ticks.append(t)
        t += step
    return ticks


def _ticks_log(lo: float, hi: float) -> list[float]:
    lo_e = math.floor(math.log10(lo))
    hi_e = math.ceil(math.log10(hi))
    return [10.0**e for e in range(lo_e, hi_e + 1)]


def line_chart(
    path: str | Path,
    series: list[tuple[str, list[float], list[float]]],
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    logy: bool = False,
) -> Path:
    """Write a line chart of (label, xs, ys) series and return the path.

    With ``logy`` the y values must be positive; non-positive points are
    dropped from the drawing (they still exist in the CSVs).
    """
    pts = []
    for _, xs, ys in series:
        for x, y in zip(xs, ys):
            if y is None or not math.isfinite(y) or not math.isfinite(x):
                continue
            if logy and y <= 0:
                continue
            pts.append((float(x), float(y)))
    if not pts:
        raise ValueError("nothing to plot")
    x_lo, x_hi = min(p[0] for p in pts), max(p[0] for p in pts)
    y_lo, y_hi = min(p[1] for p in pts), max(p[1] for p in pts)
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    if logy:
        ly_lo, ly_hi = math.log10(y_lo), math.log10(y_hi)
        if ly_hi <= ly_lo:
            ly_hi = ly_lo + 1.0
    elif y_hi <= y_lo:
        y_hi = y_lo + 1.0

    plot_w = _WIDTH - _MARGIN_L - _MARGIN_R
    plot_h = _HEIGHT - _MARGIN_T - _MARGIN_B

    def sx(x: float) -> float:
        return _MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y: float) -> float:
        if logy:
            frac = (math.log10(y) - ly_lo) / (ly_hi - ly_lo)
        else:
            frac = (y - y_lo) / (y_hi - y_lo)
        return _MARGIN_T + (1.0 - frac) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}" font-family="Helvetica, Arial, sans-serif">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<text x="{_WIDTH / 2}" y="24" text-anchor="middle" font-size="15">{title}</text>',
    ]
    y_ticks = _ticks_log(y_lo, y_hi) if logy else _ticks_linear(y_lo, y_hi)
    for ty in y_ticks:
        if logy and not (y_lo <= ty <= y_hi * 1.0000001):
            if ty < y_lo / 1.0000001 or ty > y_hi * 1.0000001:
                continue
        yy = sy(ty)
        parts.append(
            f'<line x1="{_MARGIN_L}" y1="{_fmt(yy)}" x2="{_WIDTH - _MARGIN_R}" y2="{_fmt(yy)}" '
            'stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{_MARGIN_L - 6}" y="{_fmt(yy + 4)}" text-anchor="end" font-size="11">{_fmt(ty)}</text>'
        )
    for tx in _ticks_linear(x_lo, x_hi):
        xx = sx(tx)
        parts.append(
            f'<line x1="{_fmt(xx)}" y1="{_MARGIN_T}" x2="{_fmt(xx)}" y2="{_HEIGHT - _MARGIN_B}" '
            'stroke="#eeeeee" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{_fmt(xx)}" y="{_HEIGHT - _MARGIN_B + 16}" text-anchor="middle" font-size="11">{_fmt(tx)}</text>'
        )
    parts.append(
        f'<rect x="{_MARGIN_L}" y="{_MARGIN_T}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="#333333" stroke-width="1"/>'
    )
    for i, (label, xs, ys) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        coords = [
            f"{_fmt(sx(float(x)))},{_fmt(sy(float(y)))}"
            for x, y in zip(xs, ys)
            if y is not None and math.isfinite(y) and (not logy or y > 0)
        ]
        if coords:
            parts.append(
                f'<polyline points="{" ".join(coords)}" fill="none" stroke="{color}" stroke-width="1.6"/>'
            )
        ly = _MARGIN_T + 16 + 16 * i
        lx = _WIDTH - _MARGIN_R - 170
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 24}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 30}" y="{ly}" font-size="12">{label}</text>')
    parts.append(
        f'<text x="{_WIDTH / 2}" y="{_HEIGHT - 16}" text-anchor="middle" font-size="12">{xlabel}</text>'
    )
    parts.append(
        f'<text x="18" y="{_HEIGHT / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 18 {_HEIGHT / 2})">{ylabel}</text>'
    )
    parts.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(parts) + "\n", encoding="utf-8", newline="\n")
    return path
