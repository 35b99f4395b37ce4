"""Dependency-free SVG figures for the standard diagnostics.

Output is a deterministic function of the inputs (fixed number formatting),
so repeated runs produce byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from html import escape

import numpy as np

PALETTE = ("#1f5a96", "#c0392b", "#2e8b57", "#8e44ad", "#d68910", "#566573")
PANEL_W, PANEL_H, MARGIN = 280, 220, 42


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _tick(v: float) -> str:
    return f"{v:.3g}"


@dataclass
class Panel:
    title: str
    xlabel: str = ""
    ylabel: str = ""
    items: list = field(default_factory=list)

    def line(self, x, y, color=0, dashed=False):
        self.items.append(("line", np.asarray(x, float), np.asarray(y, float), color, dashed))
        return self

    def scatter(self, x, y, color=0, radius=1.8):
        self.items.append(("scatter", np.asarray(x, float), np.asarray(y, float), color, radius))
        return self

    def band(self, x, lower, upper, color=5):
        self.items.append(("band", np.asarray(x, float), np.asarray(lower, float), np.asarray(upper, float), color))
        return self

    def errorbars(self, x, lower, upper, color=0):
        self.items.append(("errorbars", np.asarray(x, float), np.asarray(lower, float), np.asarray(upper, float), color))
        return self

    def bars(self, edges, heights, color=0):
        self.items.append(("bars", np.asarray(edges, float), np.asarray(heights, float), color))
        return self

    def _extent(self):
        xs, ys = [], []
        for it in self.items:
            kind = it[0]
            if kind in ("line", "scatter"):
                xs.append(it[1])
                ys.append(it[2])
            elif kind in ("band", "errorbars"):
                xs.append(it[1])
                ys.extend([it[2], it[3]])
            elif kind == "bars":
                xs.append(it[1])
                ys.extend([it[2], np.zeros(1)])
        xs = np.concatenate([a.ravel() for a in xs]) if xs else np.zeros(1)
        ys = np.concatenate([a.ravel() for a in ys]) if ys else np.zeros(1)
        xs, ys = xs[np.isfinite(xs)], ys[np.isfinite(ys)]
        x0, x1 = (xs.min(), xs.max()) if xs.size else (0.0, 1.0)
        y0, y1 = (ys.min(), ys.max()) if ys.size else (0.0, 1.0)
        if x1 == x0:
            x0, x1 = x0 - 0.5, x1 + 0.5
        if y1 == y0:
            y0, y1 = y0 - 0.5, y1 + 0.5
        pad = 0.04 * (y1 - y0)
        return x0, x1, y0 - pad, y1 + pad

    def render(self, ox: float, oy: float) -> list[str]:
        x0, x1, y0, y1 = self._extent()
        w, h = PANEL_W - 2 * MARGIN + 20, PANEL_H - 2 * MARGIN
        left, top = ox + MARGIN, oy + MARGIN - 10

        def px(v):
            return left + (np.asarray(v) - x0) / (x1 - x0) * w

        def py(v):
            return top + h - (np.asarray(v) - y0) / (y1 - y0) * h

        out = [
            f'<rect x="{_fmt(left)}" y="{_fmt(top)}" width="{_fmt(w)}" height="{_fmt(h)}" fill="none" stroke="#999"/>',
            f'<text x="{_fmt(left + w / 2)}" y="{_fmt(top - 6)}" text-anchor="middle" font-size="12">{escape(self.title)}</text>',
            f'<text x="{_fmt(left + w / 2)}" y="{_fmt(top + h + 28)}" text-anchor="middle" font-size="10">{escape(self.xlabel)}</text>',
            f'<text x="{_fmt(left - 30)}" y="{_fmt(top + h / 2)}" text-anchor="middle" font-size="10" '
            f'transform="rotate(-90 {_fmt(left - 30)} {_fmt(top + h / 2)})">{escape(self.ylabel)}</text>',
        ]
        for frac in (0.0, 0.5, 1.0):
            xv, yv = x0 + frac * (x1 - x0), y0 + frac * (y1 - y0)
            out.append(f'<text x="{_fmt(px(xv))}" y="{_fmt(top + h + 12)}" text-anchor="middle" font-size="9">{_tick(xv)}</text>')
            out.append(f'<text x="{_fmt(left - 4)}" y="{_fmt(py(yv) + 3)}" text-anchor="end" font-size="9">{_tick(yv)}</text>')
        for it in self.items:
            kind = it[0]
            if kind == "line":
                _, x, y, c, dashed = it
                ok = np.isfinite(x) & np.isfinite(y)
                pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(px(x[ok]), py(y[ok])))
                dash = ' stroke-dasharray="4 3"' if dashed else ""
                out.append(f'<polyline points="{pts}" fill="none" stroke="{PALETTE[c % len(PALETTE)]}" stroke-width="1.4"{dash}/>')
            elif kind == "scatter":
                _, x, y, c, r = it
                col = PALETTE[c % len(PALETTE)]
                for a, b in zip(px(x), py(y)):
                    if np.isfinite(a) and np.isfinite(b):
                        out.append(f'<circle cx="{_fmt(a)}" cy="{_fmt(b)}" r="{r}" fill="{col}" fill-opacity="0.6"/>')
            elif kind == "band":
                _, x, lo, hi, c = it
                pts = [f"{_fmt(a)},{_fmt(b)}" for a, b in zip(px(x), py(hi))]
                pts += [f"{_fmt(a)},{_fmt(b)}" for a, b in zip(px(x[::-1]), py(lo[::-1]))]
                out.append(f'<polygon points="{" ".join(pts)}" fill="{PALETTE[c % len(PALETTE)]}" fill-opacity="0.18" stroke="none"/>')
            elif kind == "errorbars":
                _, x, lo, hi, c = it
                col = PALETTE[c % len(PALETTE)]
                for a, b0, b1 in zip(px(x), py(lo), py(hi)):
                    out.append(f'<line x1="{_fmt(a)}" y1="{_fmt(b0)}" x2="{_fmt(a)}" y2="{_fmt(b1)}" stroke="{col}" stroke-opacity="0.35"/>')
            elif kind == "bars":
                _, edges, heights, c = it
                col = PALETTE[c % len(PALETTE)]
                for e0, e1, hv in zip(edges[:-1], edges[1:], heights):
                    xa, xb, yt, yb = px(e0), px(e1), py(hv), py(0.0)
                    out.append(f'<rect x="{_fmt(xa)}" y="{_fmt(yt)}" width="{_fmt(xb - xa)}" height="{_fmt(yb - yt)}" fill="{col}" fill-opacity="0.6"/>')
        return out


class Figure:
    def __init__(self, title: str = "", ncols: int = 3):
        self.title = title
        self.ncols = ncols
        self.panels: list[Panel] = []

    def panel(self, title: str, xlabel: str = "", ylabel: str = "") -> Panel:
        p = Panel(title, xlabel, ylabel)
        self.panels.append(p)
        return p

    def to_svg(self) -> str:
        n = max(len(self.panels), 1)
        cols = min(self.ncols, n)
        rows = -(-n // cols)
        head = 24 if self.title else 0
        width, height = cols * PANEL_W, rows * PANEL_H + head
        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
        ]
        if self.title:
            parts.append(f'<text x="{width / 2:.1f}" y="16" text-anchor="middle" font-size="14">{escape(self.title)}</text>')
        for i, p in enumerate(self.panels):
            parts.extend(p.render((i % cols) * PANEL_W, head + (i // cols) * PANEL_H))
        parts.append("</svg>")
        return "\n".join(parts) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_svg())


# -- standard figures ------------------------------------------------------------


def loss_figure(loss, val_loss=None) -> Figure:
    fig = Figure("Training loss", ncols=1)
    p = fig.panel("loss", "epoch", "loss")
    epochs = np.arange(1, len(loss) + 1)
    p.line(epochs, loss, 0)
    if val_loss:
        p.line(epochs, val_loss, 1, dashed=True)
    return fig


def ecdf_figure(bands_by_name: dict) -> Figure:
    fig = Figure("Rank ECDF difference")
    for name, b in bands_by_name.items():
        p = fig.panel(name, "fractional rank", "ECDF difference" if b.difference else "ECDF")
        p.band(b.z, b.lower, b.upper)
        p.line(b.z, b.ecdf[:, 0], 0)
    return fig


def recovery_figure(recovery_by_name: dict) -> Figure:
    fig = Figure("Recovery")
    for name, (truth, center, lo, hi, r) in recovery_by_name.items():
        p = fig.panel(f"{name}  r={r:.3f}", "ground truth", "estimate")
        p.errorbars(truth, lo, hi)
        p.scatter(truth, center)
        span = [float(np.min(truth)), float(np.max(truth))]
        p.line(span, span, 5, dashed=True)
    return fig


def zscore_figure(zscore_by_name: dict) -> Figure:
    fig = Figure("Posterior z-score vs contraction")
    for name, (contraction, z) in zscore_by_name.items():
        fig.panel(name, "contraction", "z-score").scatter(contraction, z)
    return fig


def pairs_figure(draws: np.ndarray, names: list[str], bins: int = 30) -> Figure:
    """Histograms on the diagonal, scatter of draws off the diagonal."""
    d = draws.shape[1]
    fig = Figure("Posterior pairs", ncols=d)
    for i in range(d):
        for j in range(d):
            if i == j:
                heights, edges = np.histogram(draws[:, i], bins=bins, density=True)
                fig.panel(names[i], names[i]).bars(edges, heights)
            else:
                fig.panel(f"{names[j]} vs {names[i]}", names[j], names[i]).scatter(draws[:, j], draws[:, i], radius=1.0)
    return fig
