"""Minimal static SVG emission for line charts and arm stick figures."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"]
W, H = 640, 360
PAD_L, PAD_R, PAD_T, PAD_B = 60, 20, 30, 40


def _f(x: float) -> str:
    return f"{x:.2f}"


def _span(lo: float, hi: float) -> tuple[float, float]:
    if not np.isfinite(lo) or not np.isfinite(hi):
        return 0.0, 1.0
    if hi - lo < 1e-12:
        return lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


class _Axes:
    def __init__(self, x0, y0, w, h, xr, yr):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.xr, self.yr = xr, yr

    def px(self, x):
        return self.x0 + (x - self.xr[0]) / (self.xr[1] - self.xr[0]) * self.w

    def py(self, y):
        return self.y0 + self.h - (y - self.yr[0]) / (self.yr[1] - self.yr[0]) * self.h

    def frame(self, title, xlabel, ylabel) -> list[str]:
        x0, y0, w, h = self.x0, self.y0, self.w, self.h
        out = [f'<rect x="{_f(x0)}" y="{_f(y0)}" width="{_f(w)}" height="{_f(h)}" fill="none" stroke="#444"/>']
        for frac in (0.0, 0.5, 1.0):
            xv = self.xr[0] + frac * (self.xr[1] - self.xr[0])
            yv = self.yr[0] + frac * (self.yr[1] - self.yr[0])
            out.append(f'<text x="{_f(self.px(xv))}" y="{_f(y0 + h + 14)}" font-size="10" '
                       f'text-anchor="middle">{xv:.3g}</text>')
            out.append(f'<text x="{_f(x0 - 4)}" y="{_f(self.py(yv) + 3)}" font-size="10" '
                       f'text-anchor="end">{yv:.3g}</text>')
        out.append(f'<text x="{_f(x0 + w / 2)}" y="{_f(y0 - 8)}" font-size="12" '
                   f'text-anchor="middle">{escape(title)}</text>')
        out.append(f'<text x="{_f(x0 + w / 2)}" y="{_f(y0 + h + 30)}" font-size="11" '
                   f'text-anchor="middle">{escape(xlabel)}</text>')
        out.append(f'<text x="12" y="{_f(y0 + h / 2)}" font-size="11" text-anchor="middle" '
                   f'transform="rotate(-90 12 {_f(y0 + h / 2)})">{escape(ylabel)}</text>')
        return out

    def polyline(self, xs, ys, color, dash=None, width=1.5) -> str:
        pts = " ".join(f"{_f(self.px(x))},{_f(self.py(y))}" for x, y in zip(xs, ys))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>'


def _doc(width, height, body) -> str:
    return (f'<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n'
            '<rect width="100%" height="100%" fill="white"/>\n' + "\n".join(body) + "\n</svg>\n")


def _legend(labels, x, y) -> list[str]:
    out = []
    for i, label in enumerate(labels):
        c = PALETTE[i % len(PALETTE)]
        yy = y + 14 * i
        out.append(f'<line x1="{x}" y1="{yy}" x2="{x + 16}" y2="{yy}" stroke="{c}" stroke-width="2"/>')
        out.append(f'<text x="{x + 20}" y="{yy + 4}" font-size="10">{escape(label)}</text>')
    return out


def line_chart(x, series: dict, title: str = "", xlabel: str = "", ylabel: str = "",
               hlines=(), logy: bool = False) -> str:
    """One polyline per entry of ``series``, sharing abscissa ``x``."""
    x = np.asarray(x, dtype=float)
    ys = {k: np.asarray(v, dtype=float) for k, v in series.items()}
    if logy:
        ys = {k: np.log10(np.maximum(v, 1e-300)) for k, v in ys.items()}
        ylabel = f"log10 {ylabel}".strip()
    allv = np.concatenate([v for v in ys.values()] + [np.asarray(hlines, dtype=float)])
    ax = _Axes(PAD_L, PAD_T, W - PAD_L - PAD_R, H - PAD_T - PAD_B,
               _span(x.min(), x.max()), _span(np.nanmin(allv), np.nanmax(allv)))
    body = ax.frame(title, xlabel, ylabel)
    for yv in hlines:
        body.append(ax.polyline([x.min(), x.max()], [yv, yv], "#888", dash="4 3", width=1))
    for i, (label, y) in enumerate(ys.items()):
        body.append(ax.polyline(x, y, PALETTE[i % len(PALETTE)]))
    body += _legend(list(ys), W - PAD_R - 110, PAD_T + 12)
    return _doc(W, H, body)


def panels(x, rows: list[dict], titles: list[str], xlabel: str = "", hlines=(),
           dashed: list[dict] | None = None) -> str:
    """Stacked line-chart panels; ``dashed`` adds dotted reference series per panel."""
    ph = 170
    body = []
    x = np.asarray(x, dtype=float)
    for r, series in enumerate(rows):
        extra = (dashed or [{}] * len(rows))[r]
        allv = np.concatenate([np.asarray(v, float) for v in (*series.values(), *extra.values())]
                              + [np.asarray(hlines, float)])
        ax = _Axes(PAD_L, PAD_T + r * ph, W - PAD_L - PAD_R, ph - 50,
                   _span(x.min(), x.max()), _span(allv.min(), allv.max()))
        body += ax.frame(titles[r], xlabel if r == len(rows) - 1 else "", "")
        for yv in hlines:
            body.append(ax.polyline([x.min(), x.max()], [yv, yv], "#888", dash="4 3", width=1))
        for i, (label, y) in enumerate(series.items()):
            c = PALETTE[i % len(PALETTE)]
            body.append(ax.polyline(x, y, c))
            if label in extra:
                body.append(ax.polyline(x, extra[label], c, dash="2 2", width=1))
        body += _legend(list(series), W - PAD_R - 110, PAD_T + r * ph + 12)
    return _doc(W, PAD_T + len(rows) * ph, body)


def stick_figures(frames: list[np.ndarray], title: str = "", surface=None) -> str:
    """Planar link polylines, one per frame; frames are (n+1, 2) point arrays.

    For spatial data pass (n+1, 3) arrays; xy and xz projections are drawn side by side.
    """
    dim = frames[0].shape[1]
    views = [(0, 1)] if dim == 2 else [(0, 1), (0, 2)]
    names = "xyz"
    size = 360
    body = []
    for v, (i, j) in enumerate(views):
        pts = np.vstack([f[:, [i, j]] for f in frames])
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        c, r = (lo + hi) / 2, max(float(np.max(hi - lo)) / 2, 1e-6) * 1.1
        ax = _Axes(PAD_L + v * size, PAD_T, size - 80, size - 80, (c[0] - r, c[0] + r), (c[1] - r, c[1] + r))
        body += ax.frame(f"{title} ({names[i]}{names[j]})".strip(), names[i], names[j])
        if surface is not None:
            s = np.asarray(surface)[:, [i, j]]
            body.append(ax.polyline(s[:, 0], s[:, 1], "#999", dash="3 3", width=1))
        for k, f in enumerate(frames):
            shade = int(200 - 200 * k / max(len(frames) - 1, 1))
            color = f"rgb({shade},{shade},255)" if k not in (0, len(frames) - 1) else PALETTE[1 if k else 0]
            body.append(ax.polyline(f[:, i], f[:, j], color))
    return _doc(PAD_L + len(views) * size, size, body)
