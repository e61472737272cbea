"""Minimal static SVG line and scatter plots for stage diagnostics."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT, MARGIN = 520, 400, 55
COLOURS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]


class Plot:
    """Accumulates layers and renders them to one SVG document.

    Layers: ``scatter`` (points), ``line`` (polyline) and ``marker`` (a
    single highlighted point). Axis limits cover every layer.
    """

    def __init__(self, title="", xlabel="", ylabel="", logx=False):
        self.title, self.xlabel, self.ylabel, self.logx = title, xlabel, ylabel, logx
        self.layers = []

    def scatter(self, x, y, colour="#999999", label=None, max_points=4000):
        x, y = np.asarray(x, float), np.asarray(y, float)
        if x.size > max_points:
            # evenly thinned for file size; deterministic
            idx = np.linspace(0, x.size - 1, max_points).astype(int)
            x, y = x[idx], y[idx]
        self.layers.append(("scatter", x, y, colour, label))
        return self

    def line(self, x, y, colour=None, label=None):
        colour = colour or COLOURS[sum(1 for l in self.layers if l[0] == "line") % len(COLOURS)]
        self.layers.append(("line", np.asarray(x, float), np.asarray(y, float), colour, label))
        return self

    def marker(self, x, y, colour="#000000", label=None):
        self.layers.append(("marker", np.atleast_1d(float(x)), np.atleast_1d(float(y)), colour, label))
        return self

    def _limits(self):
        xs = np.concatenate([self._tx(l[1]) for l in self.layers]) if self.layers else np.zeros(1)
        ys = np.concatenate([l[2] for l in self.layers]) if self.layers else np.zeros(1)
        ok = np.isfinite(xs) & np.isfinite(ys)
        xs, ys = (xs[ok], ys[ok]) if ok.any() else (np.zeros(1), np.zeros(1))
        lim = []
        for v in (xs, ys):
            lo, hi = float(v.min()), float(v.max())
            if hi <= lo:
                lo, hi = lo - 0.5, hi + 0.5
            pad = 0.03 * (hi - lo)
            lim.append((lo - pad, hi + pad))
        return lim

    def _tx(self, x):
        return np.log10(np.where(x > 0, x, np.nan)) if self.logx else x

    def render(self) -> str:
        (x0, x1), (y0, y1) = self._limits()
        pw, ph = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN

        def px(x):
            return MARGIN + (self._tx(x) - x0) / (x1 - x0) * pw

        def py(y):
            return HEIGHT - MARGIN - (y - y0) / (y1 - y0) * ph

        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
            f'<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>',
            f'<text x="{WIDTH / 2:.1f}" y="{MARGIN / 2:.1f}" text-anchor="middle" font-size="13">'
            f"{escape(self.title)}</text>",
            f'<text x="{WIDTH / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(self.xlabel)}</text>',
            f'<text x="14" y="{HEIGHT / 2:.1f}" text-anchor="middle" '
            f'transform="rotate(-90 14 {HEIGHT / 2:.1f})">{escape(self.ylabel)}</text>',
        ]
        for k in range(5):
            fx = x0 + (x1 - x0) * k / 4
            fy = y0 + (y1 - y0) * k / 4
            lab = f"{10 ** fx:.3g}" if self.logx else f"{fx:.3g}"
            xx = MARGIN + pw * k / 4
            yy = HEIGHT - MARGIN - ph * k / 4
            out.append(f'<text x="{xx:.1f}" y="{HEIGHT - MARGIN + 14}" text-anchor="middle">{lab}</text>')
            out.append(f'<text x="{MARGIN - 4}" y="{yy + 4:.1f}" text-anchor="end">{fy:.3g}</text>')
        legend = []
        for kind, x, y, colour, label in self.layers:
            ok = np.isfinite(self._tx(x)) & np.isfinite(y)
            X, Y = px(x[ok]), py(y[ok])
            if kind == "scatter":
                out.extend(
                    f'<circle cx="{a:.1f}" cy="{b:.1f}" r="1.2" fill="{colour}" fill-opacity="0.5"/>'
                    for a, b in zip(X, Y)
                )
            elif kind == "line" and X.size:
                pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(X, Y))
                out.append(f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
            elif kind == "marker" and X.size:
                out.append(f'<circle cx="{X[0]:.1f}" cy="{Y[0]:.1f}" r="4" fill="{colour}"/>')
            if label:
                legend.append((label, colour))
        for i, (label, colour) in enumerate(legend):
            yy = MARGIN + 14 + 14 * i
            out.append(f'<rect x="{MARGIN + 8}" y="{yy - 8}" width="10" height="3" fill="{colour}"/>')
            out.append(f'<text x="{MARGIN + 22}" y="{yy - 4}">{escape(label)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.render())
