"""Minimal static SVG output: line charts and marching-squares contour plots.

Numbers are written with fixed precision so that identical data gives
byte-identical files.
"""
from __future__ import annotations

import math
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .errors import InvalidInputError

WIDTH, HEIGHT = 640, 420
MARGIN = 60
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")
LEVEL_COLORS = {-1.0: "#08306b", -0.1: "#4292c6", 0.0: "#000000", 0.1: "#ef6548", 1.0: "#7f0000"}


def _fmt(v: float) -> str:
    return f"{v:.3f}"


class _Frame:
    """Maps data coordinates onto the plotting rectangle."""

    def __init__(self, xlim, ylim):
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        if self.x1 == self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 == self.y0:
            self.y1 = self.y0 + 1.0

    def px(self, x: float) -> float:
        return MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2 * MARGIN)

    def py(self, y: float) -> float:
        return HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2 * MARGIN)


def _axes(frame: _Frame, title: str, xlabel: str, ylabel: str) -> list[str]:
    left, right = MARGIN, WIDTH - MARGIN
    top, bottom = MARGIN, HEIGHT - MARGIN
    out = [
        f'<rect x="{left}" y="{top}" width="{right - left}" height="{bottom - top}" fill="none" stroke="#444"/>',
        f'<text x="{WIDTH / 2}" y="{MARGIN / 2}" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 15}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="15" y="{HEIGHT / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 15 {HEIGHT / 2})">{escape(ylabel)}</text>',
    ]
    for i in range(5):
        xv = frame.x0 + (frame.x1 - frame.x0) * i / 4
        yv = frame.y0 + (frame.y1 - frame.y0) * i / 4
        out.append(f'<text x="{_fmt(frame.px(xv))}" y="{bottom + 16}" text-anchor="middle" font-size="10">{xv:.3g}</text>')
        out.append(f'<text x="{left - 6}" y="{_fmt(frame.py(yv) + 3)}" text-anchor="end" font-size="10">{yv:.3g}</text>')
    return out


def _document(body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">'
    )
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>', *body, "</svg>"]) + "\n"


def _limits(values: Sequence[float]) -> tuple[float, float]:
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return 0.0, 1.0
    lo, hi = min(finite), max(finite)
    pad = 0.05 * (hi - lo) if hi > lo else 0.5
    return lo - pad, hi + pad


def line_chart(
    series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
    title: str = "",
    xlabel: str = "k",
    ylabel: str = "",
) -> str:
    """Polylines for ``(label, xs, ys)`` series; non-finite points break the line."""
    xs_all = [float(v) for _, xs, _ in series for v in xs]
    ys_all = [float(v) for _, _, ys in series for v in ys]
    frame = _Frame(_limits(xs_all), _limits(ys_all))
    body = _axes(frame, title, xlabel, ylabel)
    for i, (label, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        segments, cur = [], []
        for x, y in zip(xs, ys):
            if math.isfinite(x) and math.isfinite(y):
                cur.append(f"{_fmt(frame.px(x))},{_fmt(frame.py(y))}")
            elif cur:
                segments.append(cur)
                cur = []
        if cur:
            segments.append(cur)
        for seg in segments:
            body.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(seg)}"/>')
        ly = MARGIN + 14 * (i + 1)
        body.append(f'<line x1="{WIDTH - MARGIN - 110}" y1="{ly - 4}" x2="{WIDTH - MARGIN - 95}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        body.append(f'<text x="{WIDTH - MARGIN - 90}" y="{ly}" font-size="10">{escape(label)}</text>')
    return _document(body)


def _interp(p, q, vp: float, vq: float, level: float):
    t = 0.5 if vq == vp else (level - vp) / (vq - vp)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def marching_squares(xs, ys, Z, level: float) -> list[tuple[tuple[float, float], tuple[float, float]]]:
    """Line segments of the ``level`` set of ``Z[i, j]`` sampled at ``(xs[i], ys[j])``.

    Cells with a non-finite corner are skipped. Saddle cells are resolved with
    the cell-centre average.
    """
    Z = np.asarray(Z, dtype=float)
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if Z.shape != (len(xs), len(ys)):
        raise InvalidInputError("grid shape mismatch")
    segs = []
    for i in range(len(xs) - 1):
        for j in range(len(ys) - 1):
            # corners counter-clockwise: (i,j) (i+1,j) (i+1,j+1) (i,j+1)
            pts = [(xs[i], ys[j]), (xs[i + 1], ys[j]), (xs[i + 1], ys[j + 1]), (xs[i], ys[j + 1])]
            vals = [Z[i, j], Z[i + 1, j], Z[i + 1, j + 1], Z[i, j + 1]]
            if not all(math.isfinite(v) for v in vals):
                continue
            code = sum(1 << k for k, v in enumerate(vals) if v > level)
            if code in (0, 15):
                continue
            crossings = {}
            for e in range(4):
                a, b = e, (e + 1) % 4
                if (vals[a] > level) != (vals[b] > level):
                    crossings[e] = _interp(pts[a], pts[b], vals[a], vals[b], level)
            edges = sorted(crossings)
            if len(edges) == 2:
                segs.append((crossings[edges[0]], crossings[edges[1]]))
            elif len(edges) == 4:
                centre_high = sum(vals) / 4.0 > level
                corner0_high = vals[0] > level
                if centre_high == corner0_high:
                    segs.append((crossings[0], crossings[1]))
                    segs.append((crossings[2], crossings[3]))
                else:
                    segs.append((crossings[3], crossings[0]))
                    segs.append((crossings[1], crossings[2]))
    return segs


def contour_chart(
    xs,
    ys,
    Z,
    levels: Sequence[float],
    title: str = "",
    xlabel: str = "x",
    ylabel: str = "theta",
    mask: Optional[np.ndarray] = None,
) -> str:
    """Contour lines of ``Z`` at ``levels``; ``mask`` marks cells drawn as infeasible (grey dots)."""
    frame = _Frame((float(np.min(xs)), float(np.max(xs))), (float(np.min(ys)), float(np.max(ys))))
    body = _axes(frame, title, xlabel, ylabel)
    Z = np.asarray(Z, dtype=float)
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            if not math.isfinite(Z[i, j]) or (mask is not None and mask[i, j]):
                body.append(f'<circle cx="{_fmt(frame.px(x))}" cy="{_fmt(frame.py(y))}" r="1.5" fill="#bbb"/>')
    for n, level in enumerate(levels):
        color = LEVEL_COLORS.get(float(level), PALETTE[n % len(PALETTE)])
        for p, q in marching_squares(xs, ys, Z, level):
            body.append(
                f'<line x1="{_fmt(frame.px(p[0]))}" y1="{_fmt(frame.py(p[1]))}" '
                f'x2="{_fmt(frame.px(q[0]))}" y2="{_fmt(frame.py(q[1]))}" stroke="{color}" stroke-width="1.2"/>'
            )
        ly = MARGIN + 14 * (n + 1)
        body.append(f'<line x1="{WIDTH - MARGIN - 70}" y1="{ly - 4}" x2="{WIDTH - MARGIN - 55}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        body.append(f'<text x="{WIDTH - MARGIN - 50}" y="{ly}" font-size="10">{level:g}</text>')
    return _document(body)
