"""Dependency-free SVG line plots with byte-stable output."""
from __future__ import annotations

import math
from html import escape
from pathlib import Path
from typing import Mapping, Sequence

from .nn.tensor import ContractError

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
WIDTH, HEIGHT = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 64, 150, 36, 48


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _tick(v: float) -> str:
    return f"{v:.4g}"


def _clean(values: Sequence[float]) -> list[tuple[int, float]]:
    return [(i, float(v)) for i, v in enumerate(values) if math.isfinite(float(v))]


def render_svg(series: Mapping[str, Sequence[float]], title: str = "", xlabel: str = "epoch", ylabel: str = "") -> str:
    """SVG text for one polyline per named series, x = 1-based index."""
    if not series or all(len(_clean(v)) == 0 for v in series.values()):
        raise ContractError("nothing to plot: empty series")
    points = {name: _clean(vals) for name, vals in series.items()}
    xs = [i + 1 for pts in points.values() for i, _ in pts]
    ys = [v for pts in points.values() for _, v in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x0 == x1:
        x0, x1 = x0 - 1, x1 + 1
    if y0 == y1:
        pad = abs(y0) * 0.1 or 1.0
        y0, y1 = y0 - pad, y1 + pad
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def sx(x):
        return LEFT + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return TOP + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="22" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="black"/>',
    ]
    for k in range(5):
        yv = y0 + (y1 - y0) * k / 4
        xv = x0 + (x1 - x0) * k / 4
        out.append(f'<text x="{LEFT - 6}" y="{_fmt(sy(yv) + 4)}" text-anchor="end" font-family="sans-serif" font-size="10">{_tick(yv)}</text>')
        out.append(f'<text x="{_fmt(sx(xv))}" y="{TOP + ph + 16}" text-anchor="middle" font-family="sans-serif" font-size="10">{_tick(xv)}</text>')
    out.append(f'<text x="{LEFT + pw // 2}" y="{HEIGHT - 10}" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(xlabel)}</text>')
    out.append(
        f'<text x="16" y="{TOP + ph // 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {TOP + ph // 2})">{escape(ylabel)}</text>'
    )
    for n, (name, pts) in enumerate(points.items()):
        color = PALETTE[n % len(PALETTE)]
        coords = [(sx(i + 1), sy(v)) for i, v in pts]
        if len(coords) == 1:
            cx, cy = coords[0]
            out.append(f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="3" fill="{color}"/>')
        elif coords:
            path = " ".join(f"{_fmt(cx)},{_fmt(cy)}" for cx, cy in coords)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        ly = TOP + 14 + 18 * n
        lx = LEFT + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly}" font-family="sans-serif" font-size="11">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_curves(series: Mapping[str, Sequence[float]], path, title: str = "", xlabel: str = "epoch", ylabel: str = "") -> Path:
    path = Path(path)
    path.write_text(render_svg(series, title, xlabel, ylabel), encoding="utf-8")
    return path


def plot_signals(signals, path, title: str = "", names: Sequence[str] | None = None) -> Path:
    """One polyline per signal, x = bin index (1-based)."""
    names = names or [f"signal {i + 1}" for i in range(len(signals))]
    return plot_curves({n: list(s) for n, s in zip(names, signals)}, path, title, xlabel="Doppler bin", ylabel="amplitude")
