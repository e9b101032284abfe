"""Minimal deterministic SVG plots: PR curves and histogram + KDE panels."""
from __future__ import annotations

from html import escape
from typing import Mapping, Sequence

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79")


def _f(v: float) -> str:
    return f"{v:.2f}"


class _Panel:
    def __init__(self, x: float, y: float, w: float, h: float, xlim, ylim):
        self.x, self.y, self.w, self.h = x, y, w, h
        self.xlim, self.ylim = xlim, ylim

    def px(self, xv: float) -> float:
        lo, hi = self.xlim
        return self.x + (xv - lo) / ((hi - lo) or 1.0) * self.w

    def py(self, yv: float) -> float:
        lo, hi = self.ylim
        return self.y + self.h - (yv - lo) / ((hi - lo) or 1.0) * self.h

    def frame(self, title: str, xlabel: str, ylabel: str) -> list[str]:
        out = [
            f'<rect x="{_f(self.x)}" y="{_f(self.y)}" width="{_f(self.w)}" height="{_f(self.h)}" '
            'fill="none" stroke="#333" stroke-width="1"/>',
            f'<text x="{_f(self.x + self.w / 2)}" y="{_f(self.y - 8)}" text-anchor="middle" '
            f'font-size="13">{escape(title)}</text>',
            f'<text x="{_f(self.x + self.w / 2)}" y="{_f(self.y + self.h + 34)}" text-anchor="middle" '
            f'font-size="11">{escape(xlabel)}</text>',
            f'<text x="{_f(self.x - 38)}" y="{_f(self.y + self.h / 2)}" text-anchor="middle" font-size="11" '
            f'transform="rotate(-90 {_f(self.x - 38)} {_f(self.y + self.h / 2)})">{escape(ylabel)}</text>',
        ]
        for t in np.linspace(*self.xlim, 5):
            out.append(f'<text x="{_f(self.px(t))}" y="{_f(self.y + self.h + 14)}" text-anchor="middle" '
                       f'font-size="9">{t:g}</text>')
        for t in np.linspace(*self.ylim, 5):
            out.append(f'<text x="{_f(self.x - 4)}" y="{_f(self.py(t) + 3)}" text-anchor="end" '
                       f'font-size="9">{t:.3g}</text>')
        return out

    def polyline(self, xs, ys, color: str, width: float = 1.5) -> str:
        pts = " ".join(f"{_f(self.px(a))},{_f(self.py(b))}" for a, b in zip(xs, ys))
        return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"/>'


def _doc(width: int, height: int, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif">')
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>'] + body + ["</svg>"]) + "\n"


def _legend(x: float, y: float, labels: Sequence[str], colors: Sequence[str]) -> list[str]:
    out = []
    for i, (lab, col) in enumerate(zip(labels, colors)):
        yy = y + 14 * i
        out.append(f'<rect x="{_f(x)}" y="{_f(yy - 8)}" width="10" height="10" fill="{col}"/>')
        out.append(f'<text x="{_f(x + 14)}" y="{_f(yy + 1)}" font-size="10">{escape(lab)}</text>')
    return out


def pr_curves_svg(curves: Mapping[str, tuple[Sequence[float], Sequence[float]]], title: str = "Precision-Recall") -> str:
    """``curves`` maps a label to (recall, precision) point lists."""
    panel = _Panel(60, 40, 420, 320, (0.0, 1.0), (0.0, 1.0))
    body = panel.frame(title, "Recall", "Precision")
    labels, colors = [], []
    for i, (name, (rec, prec)) in enumerate(curves.items()):
        if len(rec) == 0:
            continue
        col = PALETTE[i % len(PALETTE)]
        # step plot starting from (0, first precision)
        xs, ys = [0.0], [prec[0]]
        for r, p in zip(rec, prec):
            xs += [r, r]
            ys += [ys[-1], p]
        body.append(panel.polyline(xs, ys, col))
        labels.append(name)
        colors.append(col)
    body += _legend(495, 50, labels, colors)
    return _doc(620, 400, body)


def kde(values: Sequence[float], grid: np.ndarray) -> np.ndarray:
    """Gaussian KDE with Scott's bandwidth; zero curve for fewer than two distinct values."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2 or np.ptp(v) == 0:
        return np.zeros_like(grid)
    bw = v.std(ddof=1) * v.size ** (-1 / 5)
    z = (grid[:, None] - v[None, :]) / bw
    return np.exp(-0.5 * z * z).sum(axis=1) / (v.size * bw * np.sqrt(2 * np.pi))


def histogram_panel(panel_x: float, groups: Mapping[str, Sequence[float]], title: str, xlabel: str,
                    bins: int = 20) -> list[str]:
    allv = np.concatenate([np.asarray(v, float) for v in groups.values() if len(v)]) if groups else np.zeros(0)
    if allv.size == 0:
        lo, hi = 0.0, 1.0
    else:
        lo, hi = float(allv.min()), float(allv.max())
        if hi == lo:
            hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    counts = {k: np.histogram(v, bins=edges)[0] for k, v in groups.items()}
    binw = edges[1] - edges[0]
    grid = np.linspace(lo, hi, 120)
    dens = {k: kde(v, grid) * len(v) * binw for k, v in groups.items()}
    ymax = max([1.0] + [float(c.max()) for c in counts.values() if c.size] + [float(d.max()) for d in dens.values()])
    panel = _Panel(panel_x, 40, 360, 300, (lo, hi), (0.0, ymax * 1.05))
    body = panel.frame(title, xlabel, "Count")
    for i, (name, c) in enumerate(counts.items()):
        col = PALETTE[i % len(PALETTE)]
        for j, n in enumerate(c):
            if n == 0:
                continue
            x0, x1 = panel.px(edges[j]), panel.px(edges[j + 1])
            y1 = panel.py(n)
            body.append(f'<rect x="{_f(x0)}" y="{_f(y1)}" width="{_f(x1 - x0)}" '
                        f'height="{_f(panel.py(0) - y1)}" fill="{col}" fill-opacity="0.35"/>')
        body.append(panel.polyline(grid, dens[name], col, 2.0))
    body += _legend(panel_x + 250, 55, list(counts), PALETTE)
    return body


def distribution_svg(age_by_gender: Mapping[str, Sequence[float]],
                     tss_by_gender: Mapping[str, Sequence[float]]) -> str:
    """Two panels: age histogram by gender, TSS histogram by gender, each with KDE overlays."""
    body = histogram_panel(60, age_by_gender, "Age by gender", "Age (years)")
    body += histogram_panel(500, tss_by_gender, "Total Sharp Score by gender", "TSS")
    return _doc(900, 400, body)
