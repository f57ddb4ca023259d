"""Self-contained SVG bar and scatter plots with +-1 std error bars."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

W, H = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 40, 70


def _nice_ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    step = 10 ** math.floor(math.log10((hi - lo) / n))
    for m in (1, 2, 5, 10):
        if (hi - lo) / (m * step) <= n:
            step *= m
            break
    return np.arange(math.floor(lo / step) * step, hi + 0.5 * step, step)


class _Frame:
    def __init__(self, title: str, xlabel: str, ylabel: str, ylo: float, yhi: float):
        self.ticks = _nice_ticks(ylo, yhi)
        self.ylo, self.yhi = float(self.ticks[0]), float(self.ticks[-1])
        self.parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
                      f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">',
                      f'<rect width="{W}" height="{H}" fill="white"/>',
                      f'<text x="{W / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
                      f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle">{escape(xlabel)}</text>',
                      f'<text x="16" y="{H / 2}" text-anchor="middle" '
                      f'transform="rotate(-90 16 {H / 2})">{escape(ylabel)}</text>']
        x0, x1, y0 = LEFT, W - RIGHT, H - BOTTOM
        self.parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>')
        self.parts.append(f'<line x1="{x0}" y1="{TOP}" x2="{x0}" y2="{y0}" stroke="black"/>')
        for t in self.ticks:
            y = self.y(t)
            self.parts.append(f'<line x1="{x0 - 4}" y1="{y:.2f}" x2="{x0}" y2="{y:.2f}" stroke="black"/>')
            self.parts.append(f'<text x="{x0 - 6}" y="{y + 4:.2f}" text-anchor="end">{t:g}</text>')

    def y(self, v: float) -> float:
        return H - BOTTOM - (v - self.ylo) / (self.yhi - self.ylo) * (H - BOTTOM - TOP)

    def errbar(self, x: float, m: float, s: float):
        if s > 0:
            lo, hi = self.y(m - s), self.y(m + s)
            self.parts.append(f'<line x1="{x:.2f}" y1="{lo:.2f}" x2="{x:.2f}" y2="{hi:.2f}" stroke="black"/>')
            for yy in (lo, hi):
                self.parts.append(f'<line x1="{x - 4:.2f}" y1="{yy:.2f}" x2="{x + 4:.2f}" y2="{yy:.2f}" '
                                  f'stroke="black"/>')

    def text(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _range(means, stds):
    m, s = np.asarray(means, float), np.asarray(stds, float)
    return min(0.0, float(np.min(m - s))), max(float(np.max(m + s)), 1e-9)


def bar_plot(labels, means, stds, *, title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """Bars at the means with +-1 std whiskers."""
    if not len(labels) == len(means) == len(stds) or not len(labels):
        raise ValueError("labels, means and stds need equal non-zero length")
    f = _Frame(title, xlabel, ylabel, *_range(means, stds))
    slot = (W - LEFT - RIGHT) / len(labels)
    for i, (lab, m, s) in enumerate(zip(labels, means, stds)):
        cx = LEFT + (i + 0.5) * slot
        top, base = f.y(max(m, 0.0)), f.y(min(m, 0.0))
        f.parts.append(f'<rect x="{cx - 0.35 * slot:.2f}" y="{top:.2f}" width="{0.7 * slot:.2f}" '
                       f'height="{base - top:.2f}" fill="#7fa6cf"/>')
        f.errbar(cx, m, s)
        f.parts.append(f'<text x="{cx:.2f}" y="{H - BOTTOM + 16}" text-anchor="middle" '
                       f'font-size="{10 if len(labels) > 12 else 12}">{escape(str(lab))}</text>')
    return f.text()


def scatter_plot(x, means, stds, *, title: str = "", xlabel: str = "", ylabel: str = "", line=None,
                 band=None) -> str:
    """Points with +-1 std whiskers; optional ``line`` (xs, ys) and ``band`` (xs, lo, hi)."""
    x = np.asarray(x, float)
    means, stds = np.asarray(means, float), np.asarray(stds, float)
    if not x.size == means.size == stds.size or not x.size:
        raise ValueError("x, means and stds need equal non-zero length")
    ylo, yhi = _range(means, stds)
    if band is not None:
        ylo, yhi = min(ylo, float(np.min(band[1]))), max(yhi, float(np.max(band[2])))
    f = _Frame(title, xlabel, ylabel, ylo, yhi)
    xt = _nice_ticks(float(x.min()), float(x.max()))
    xlo, xhi = float(xt[0]), float(xt[-1])

    def px(v):
        return LEFT + (v - xlo) / (xhi - xlo) * (W - LEFT - RIGHT)

    for t in xt:
        f.parts.append(f'<text x="{px(t):.2f}" y="{H - BOTTOM + 16}" text-anchor="middle">{t:g}</text>')
    if band is not None:
        bx, lo, hi = (np.asarray(v, float) for v in band)
        pts = [f"{px(a):.2f},{f.y(b):.2f}" for a, b in zip(bx, hi)]
        pts += [f"{px(a):.2f},{f.y(b):.2f}" for a, b in zip(bx[::-1], lo[::-1])]
        f.parts.append(f'<polygon points="{" ".join(pts)}" fill="#cfdcec" stroke="none"/>')
    if line is not None:
        pts = " ".join(f"{px(a):.2f},{f.y(b):.2f}" for a, b in zip(*line))
        f.parts.append(f'<polyline points="{pts}" fill="none" stroke="#c0392b" stroke-width="1.5"/>')
    for a, m, s in zip(x, means, stds):
        f.errbar(px(a), m, s)
        f.parts.append(f'<circle cx="{px(a):.2f}" cy="{f.y(m):.2f}" r="3.5" fill="#2c5d8f"/>')
    return f.text()
