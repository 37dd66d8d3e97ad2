"""Standalone SVG charts for run logs. No plotting dependency needed.

The charts are plain line plots with a left axis, bottom axis and legend,
meant for eyeballing a run: levels over time, consumer delivery over time.
Output is a complete SVG document string.
"""
from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_MARGIN_L = 62.0
_MARGIN_R = 16.0
_MARGIN_T = 34.0
_MARGIN_B = 42.0


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(1, n)
    mag = 10.0 ** int(f"{raw:e}".split("e")[1])
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    else:
        step = 10.0 * mag
    first = step * round(lo / step)
    if first < lo - 1e-9:
        first += step
    ticks = []
    v = first
    while v <= hi + 1e-9:
        ticks.append(round(v, 10))
        v += step
    return ticks


def line_chart(
    series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
    title: str,
    x_label: str = "time (s)",
    y_label: str = "",
    width: int = 860,
    height: int = 360,
) -> str:
    """``series`` is (label, xs, ys) triples sharing one coordinate frame."""
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys]
    if not xs_all:
        raise ValueError("no data to plot")
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.04 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad
    plot_w = width - _MARGIN_L - _MARGIN_R
    plot_h = height - _MARGIN_T - _MARGIN_B

    def px(x: float) -> float:
        return _MARGIN_L + (x - x_lo) / (x_hi - x_lo or 1.0) * plot_w

    def py(y: float) -> float:
        return _MARGIN_T + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h

    parts: list[str] = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}" '
        f'font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{_MARGIN_L}" y="20" font-size="15" font-weight="bold">'
        f"{_esc(title)}</text>",
    ]
    for yt in _nice_ticks(y_lo, y_hi):
        y = py(yt)
        parts.append(
            f'<line x1="{_MARGIN_L}" y1="{y:.1f}" x2="{width - _MARGIN_R}" '
            f'y2="{y:.1f}" stroke="#e0e0e0"/>'
        )
        parts.append(
            f'<text x="{_MARGIN_L - 8}" y="{y + 4:.1f}" text-anchor="end">'
            f"{_fmt(yt)}</text>"
        )
    for xt in _nice_ticks(x_lo, x_hi, 6):
        x = px(xt)
        parts.append(
            f'<line x1="{x:.1f}" y1="{_MARGIN_T}" x2="{x:.1f}" '
            f'y2="{height - _MARGIN_B}" stroke="#f0f0f0"/>'
        )
        parts.append(
            f'<text x="{x:.1f}" y="{height - _MARGIN_B + 18}" '
            f'text-anchor="middle">{_fmt(xt)}</text>'
        )
    parts.append(
        f'<rect x="{_MARGIN_L}" y="{_MARGIN_T}" width="{plot_w}" '
        f'height="{plot_h}" fill="none" stroke="#808080"/>'
    )
    for i, (label, xs, ys) in enumerate(series):
        color = _COLORS[i % len(_COLORS)]
        points = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs, ys))
        parts.append(
            f'<polyline points="{points}" fill="none" stroke="{color}" '
            f'stroke-width="1.5"/>'
        )
        lx = _MARGIN_L + 10 + i * 150
        parts.append(
            f'<line x1="{lx}" y1="{height - 12}" x2="{lx + 18}" '
            f'y2="{height - 12}" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{lx + 24}" y="{height - 8}">{_esc(label)}</text>'
        )
    parts.append(
        f'<text x="{width - _MARGIN_R}" y="{height - _MARGIN_B + 34}" '
        f'text-anchor="end" fill="#606060">{_esc(x_label)}</text>'
    )
    if y_label:
        parts.append(
            f'<text x="14" y="{_MARGIN_T - 10}" fill="#606060">'
            f"{_esc(y_label)}</text>"
        )
    parts.append("</svg>")
    return "\n".join(parts)


def _esc(text: str) -> str:
    return (
        text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
    )


def _fmt(v: float) -> str:
    if v == int(v) and abs(v) < 1e9:
        return str(int(v))
    return f"{v:g}"


def plot_run(log, out_dir: str | Path) -> list[Path]:
    """Write the standard chart set for one run log; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t = log.column("time_s")
    written: list[Path] = []

    level_series = []
    for name in log.columns:
        if name.startswith("truth:"):
            level_series.append((name.split(":", 1)[1], t, log.column(name)))
    for name in log.columns:
        if name.startswith("pub:"):
            tag = name.split(":", 1)[1]
            level_series.append((f"{tag} (published)", t, log.column(name)))
    p = out / "levels.svg"
    p.write_text(
        line_chart(level_series, "Tank levels", y_label="% of span"),
        encoding="utf-8",
    )
    written.append(p)

    supply_series = [
        ("consumer supply", t, log.column("consumer_supply_lpm")),
    ]
    for name in log.columns:
        if name.startswith("fit:"):
            supply_series.append((name.split(":", 1)[1], t, log.column(name)))
    p = out / "flows.svg"
    p.write_text(
        line_chart(supply_series, "Delivery and metered flows", y_label="L/min"),
        encoding="utf-8",
    )
    written.append(p)
    return written
