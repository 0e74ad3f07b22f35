"""Minimal SVG line and bar charts. Output depends only on the inputs."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
W, H = 640, 400
ML, MR, MT, MB = 70, 150, 40, 50


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _range(vals):
    vals = [v for v in vals if math.isfinite(v)]
    lo, hi = (min(vals), max(vals)) if vals else (0.0, 1.0)
    if lo == hi:
        pad = abs(lo) * 0.1 or 1.0
        lo, hi = lo - pad, hi + pad
    return lo, hi


def _frame(title, xlabel, ylabel, ylo, yhi) -> list[str]:
    pw, ph = W - ML - MR, H - MT - MB
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{ML}" y1="{MT + ph}" x2="{ML + pw}" y2="{MT + ph}" stroke="black"/>',
        f'<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{MT + ph}" stroke="black"/>',
        f'<text x="{ML + pw / 2}" y="{H - 10}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="15" y="{MT + ph / 2}" text-anchor="middle" transform="rotate(-90 15 {MT + ph / 2})">{escape(ylabel)}</text>',
    ]
    for i in range(5):
        v = ylo + (yhi - ylo) * i / 4
        y = MT + ph - ph * i / 4
        out.append(f'<text x="{ML - 5}" y="{_fmt(y + 4)}" text-anchor="end">{v:.3g}</text>')
        out.append(f'<line x1="{ML}" y1="{_fmt(y)}" x2="{ML + pw}" y2="{_fmt(y)}" stroke="#ddd"/>')
    return out


def _legend(names, colors) -> list[str]:
    out = []
    for i, (n, c) in enumerate(zip(names, colors)):
        y = MT + 10 + 18 * i
        out.append(f'<rect x="{W - MR + 10}" y="{y - 8}" width="12" height="10" fill="{c}"/>')
        out.append(f'<text x="{W - MR + 28}" y="{y + 1}">{escape(n)}</text>')
    return out


def line_chart(series: dict, title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """``series`` maps a name to ``(xs, ys)``."""
    xs_all = [x for xs, _ in series.values() for x in xs]
    ys_all = [y for _, ys in series.values() for y in ys]
    xlo, xhi = _range(xs_all)
    ylo, yhi = _range(ys_all)
    pw, ph = W - ML - MR, H - MT - MB
    sx = lambda x: ML + (x - xlo) / (xhi - xlo) * pw
    sy = lambda y: MT + ph - (y - ylo) / (yhi - ylo) * ph
    out = _frame(title, xlabel, ylabel, ylo, yhi)
    for x in sorted(set(xs_all)):
        out.append(f'<text x="{_fmt(sx(x))}" y="{MT + ph + 15}" text-anchor="middle">{x:.3g}</text>')
    colors = [PALETTE[i % len(PALETTE)] for i in range(len(series))]
    for (name, (xs, ys)), c in zip(series.items(), colors):
        pts = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(xs, ys) if math.isfinite(y))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{c}" stroke-width="2"/>')
        for x, y in zip(xs, ys):
            if math.isfinite(y):
                out.append(f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="3" fill="{c}"/>')
    out += _legend(list(series), colors)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def bar_chart(groups: dict, colors=None, title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """Grouped bars; ``groups`` maps a series name to one value per category."""
    names = list(groups)
    colors = colors or [PALETTE[i % len(PALETTE)] for i in range(len(names))]
    n_cat = max(len(v) for v in groups.values())
    ylo, yhi = _range([0.0, *(v for vals in groups.values() for v in vals)])
    ylo = min(ylo, 0.0)
    pw, ph = W - ML - MR, H - MT - MB
    sy = lambda y: MT + ph - (y - ylo) / (yhi - ylo) * ph
    slot = pw / n_cat
    bw = slot / (len(names) + 1)
    out = _frame(title, xlabel, ylabel, ylo, yhi)
    for k, (name, c) in enumerate(zip(names, colors)):
        for i, v in enumerate(groups[name]):
            x = ML + i * slot + (k + 0.5) * bw
            y0, y1 = sy(max(v, 0.0)), sy(min(v, 0.0))
            out.append(f'<rect x="{_fmt(x)}" y="{_fmt(y0)}" width="{_fmt(bw)}" height="{_fmt(max(y1 - y0, 0.0))}" fill="{c}"/>')
    step = max(1, n_cat // 10)
    for i in range(0, n_cat, step):
        out.append(f'<text x="{_fmt(ML + (i + 0.5) * slot)}" y="{MT + ph + 15}" text-anchor="middle">{i}</text>')
    out += _legend(names, colors)
    out.append("</svg>")
    return "\n".join(out) + "\n"
