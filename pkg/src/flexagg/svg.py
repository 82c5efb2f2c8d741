"""Minimal SVG plotting: polygons, polylines, markers and grouped bars on linear axes.

Coordinates are formatted with fixed precision so identical data gives
identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from html import escape

import numpy as np

WIDTH, HEIGHT = 640, 480
MARGIN = dict(left=70, right=170, top=30, bottom=55)


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _nice_ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((s * mag for s in (1, 2, 2.5, 5, 10) if s * mag >= raw), default=10 * mag)
    start = np.ceil(lo / step) * step
    ticks = np.arange(start, hi + 1e-9 * step, step)
    return np.round(ticks, 12)


@dataclass
class Plot:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    items: list[tuple] = field(default_factory=list)
    legend: list[tuple[str, str, str]] = field(default_factory=list)

    def polygon(self, pts, fill: str, stroke: str, label: str = "", opacity: float = 0.35):
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        if len(pts):
            self.items.append(("polygon", pts, fill, stroke, opacity))
            if label:
                self.legend.append(("rect", fill, label))

    def line(self, pts, stroke: str, label: str = "", closed: bool = False, dash: str = ""):
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        if len(pts):
            if closed:
                pts = np.vstack([pts, pts[:1]])
            self.items.append(("line", pts, stroke, dash))
            if label:
                self.legend.append(("line", stroke, label))

    def markers(self, pts, color: str, shape: str = "circle", label: str = "", size: float = 4.0):
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        if len(pts):
            self.items.append(("markers", pts, color, shape, size))
            if label:
                self.legend.append((shape, color, label))

    def _bounds(self):
        pts = np.vstack([it[1] for it in self.items]) if self.items else np.zeros((1, 2))
        pts = pts[np.all(np.isfinite(pts), axis=1)]
        if not len(pts):
            pts = np.zeros((1, 2))
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        pad = np.maximum((hi - lo) * 0.05, 1e-6)
        return lo - pad, hi + pad

    def render(self) -> str:
        lo, hi = self._bounds()
        x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
        y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]

        def tx(p):
            p = np.asarray(p, dtype=float)
            sx = x0 + (p[..., 0] - lo[0]) / (hi[0] - lo[0]) * (x1 - x0)
            sy = y0 + (p[..., 1] - lo[1]) / (hi[1] - lo[1]) * (y1 - y0)
            return np.stack([sx, sy], axis=-1)

        out = [_header(self.title)]
        out.append(_axes(lo, hi, x0, x1, y0, y1, self.xlabel, self.ylabel))
        for it in self.items:
            kind, pts = it[0], tx(it[1])
            path = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in pts)
            if kind == "polygon":
                _, _, fill, stroke, op = it
                out.append(f'<polygon points="{path}" fill="{fill}" fill-opacity="{op}" '
                           f'stroke="{stroke}" stroke-width="1"/>')
            elif kind == "line":
                _, _, stroke, dash = it
                extra = f' stroke-dasharray="{dash}"' if dash else ""
                out.append(f'<polyline points="{path}" fill="none" stroke="{stroke}" stroke-width="1.5"{extra}/>')
            else:
                _, _, color, shape, size = it
                out.extend(_marker(x, y, shape, color, size) for x, y in pts)
        out.append(_legend(self.legend, x1 + 12, y1 + 6))
        out.append("</svg>\n")
        return "\n".join(out)


def _header(title: str) -> str:
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">\n'
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>\n'
            f'<text x="{WIDTH / 2 - MARGIN["right"] / 2:.1f}" y="18" text-anchor="middle" '
            f'font-size="13">{escape(title)}</text>')


def _axes(lo, hi, x0, x1, y0, y1, xlabel, ylabel) -> str:
    parts = [f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}" fill="none" stroke="black"/>']
    for v in _nice_ticks(lo[0], hi[0]):
        x = x0 + (v - lo[0]) / (hi[0] - lo[0]) * (x1 - x0)
        parts.append(f'<line x1="{_fmt(x)}" y1="{y0}" x2="{_fmt(x)}" y2="{y0 + 4}" stroke="black"/>'
                     f'<text x="{_fmt(x)}" y="{y0 + 16}" text-anchor="middle">{v:g}</text>')
    for v in _nice_ticks(lo[1], hi[1]):
        y = y0 + (v - lo[1]) / (hi[1] - lo[1]) * (y1 - y0)
        parts.append(f'<line x1="{x0 - 4}" y1="{_fmt(y)}" x2="{x0}" y2="{_fmt(y)}" stroke="black"/>'
                     f'<text x="{x0 - 7}" y="{_fmt(y + 4)}" text-anchor="end">{v:g}</text>')
    parts.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{y0 + 38}" text-anchor="middle">{escape(xlabel)}</text>')
    parts.append(f'<text transform="translate({x0 - 50},{(y0 + y1) / 2:.1f}) rotate(-90)" '
                 f'text-anchor="middle">{escape(ylabel)}</text>')
    return "\n".join(parts)


def _marker(x, y, shape, color, size) -> str:
    if shape == "square":
        return (f'<rect x="{_fmt(x - size)}" y="{_fmt(y - size)}" width="{_fmt(2 * size)}" '
                f'height="{_fmt(2 * size)}" fill="{color}"/>')
    if shape == "triangle":
        pts = f"{_fmt(x)},{_fmt(y - size)} {_fmt(x - size)},{_fmt(y + size)} {_fmt(x + size)},{_fmt(y + size)}"
        return f'<polygon points="{pts}" fill="{color}"/>'
    return f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="{_fmt(size)}" fill="{color}"/>'


def _legend(entries, x, y) -> str:
    parts = []
    for k, (shape, color, label) in enumerate(entries):
        yy = y + 18 * k
        if shape == "rect":
            parts.append(f'<rect x="{x}" y="{yy - 5}" width="12" height="10" fill="{color}" fill-opacity="0.5"/>')
        elif shape == "line":
            parts.append(f'<line x1="{x}" y1="{yy}" x2="{x + 12}" y2="{yy}" stroke="{color}" stroke-width="2"/>')
        else:
            parts.append(_marker(x + 6, yy, shape, color, 4))
        parts.append(f'<text x="{x + 18}" y="{yy + 4}">{escape(label)}</text>')
    return "\n".join(parts)


def bar_chart(categories: list[str], series: dict[str, np.ndarray], colors: dict[str, str],
              title: str = "", ylabel: str = "", log_scale: bool = False,
              threshold: float | None = None) -> str:
    """Grouped bars, one group per category and one bar per series.

    ``threshold`` draws a dashed reference line (and keeps it in range).
    """
    n, k = len(categories), max(len(series), 1)
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"] - 60, MARGIN["top"]
    vals = np.concatenate([np.asarray(v, dtype=float) for v in series.values()]) if series else np.zeros(1)
    if log_scale:
        pos = vals[vals > 0]
        if threshold is not None and threshold > 0:
            pos = np.append(pos, threshold)
        lo = np.floor(np.log10(pos.min()) - 0.5) if len(pos) else -6.0
        hi = np.ceil(np.log10(max(pos.max(), 10 ** (lo + 1)))) if len(pos) else 0.0
        scale = lambda v: (np.log10(max(v, 10 ** lo)) - lo) / (hi - lo)
        ticks = [(10 ** e, (e - lo) / (hi - lo)) for e in np.arange(lo, hi + 1)]
    else:
        top = max(float(np.nanmax(vals)) if len(vals) else 1.0, threshold or 0.0, 1e-12)
        scale = lambda v: max(v, 0.0) / top
        ticks = [(t, t / top) for t in _nice_ticks(0.0, top)]
    out = [_header(title),
           f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}" fill="none" stroke="black"/>']
    for v, s in ticks:
        y = y0 + s * (y1 - y0)
        out.append(f'<line x1="{x0 - 4}" y1="{_fmt(y)}" x2="{x1}" y2="{_fmt(y)}" stroke="#ddd"/>'
                   f'<text x="{x0 - 7}" y="{_fmt(y + 4)}" text-anchor="end">{v:g}</text>')
    slot = (x1 - x0) / max(n, 1)
    width = slot * 0.8 / k
    for i, cat in enumerate(categories):
        for j, (name, v) in enumerate(series.items()):
            h = scale(float(v[i])) * (y0 - y1)
            x = x0 + i * slot + slot * 0.1 + j * width
            out.append(f'<rect x="{_fmt(x)}" y="{_fmt(y0 - h)}" width="{_fmt(width)}" '
                       f'height="{_fmt(h)}" fill="{colors.get(name, "gray")}"/>')
        cx = x0 + (i + 0.5) * slot
        out.append(f'<text transform="translate({_fmt(cx)},{y0 + 8}) rotate(60)" '
                   f'font-size="8">{escape(cat)}</text>')
    if threshold is not None:
        y = y0 - scale(threshold) * (y0 - y1)
        out.append(f'<line x1="{x0}" y1="{_fmt(y)}" x2="{x1}" y2="{_fmt(y)}" stroke="black" '
                   f'stroke-dasharray="5 3"/>')
    out.append(f'<text transform="translate({x0 - 50},{(y0 + y1) / 2:.1f}) rotate(-90)" '
               f'text-anchor="middle">{escape(ylabel)}</text>')
    out.append(_legend([("rect", colors.get(s, "gray"), s) for s in series], x1 + 12, y1 + 6))
    out.append("</svg>\n")
    return "\n".join(out)
