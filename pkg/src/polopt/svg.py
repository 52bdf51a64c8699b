"""Tiny SVG writer for the experiment figures (arrows, polylines, panel grids).

Presentation only: nothing downstream reads these files.
"""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


def _f(x):
    return f"{x:.2f}"


class Canvas:
    def __init__(self, width, height):
        self.width, self.height = width, height
        self.items = []

    def line(self, x1, y1, x2, y2, stroke="#000", width=1.0):
        self.items.append(f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
                          f'stroke="{stroke}" stroke-width="{width}"/>')

    def rect(self, x, y, w, h, stroke="#000", fill="none"):
        self.items.append(f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" '
                          f'stroke="{stroke}" fill="{fill}"/>')

    def polyline(self, points, stroke="#000", width=1.5):
        if len(points) < 2:
            return
        pts = " ".join(f"{_f(x)},{_f(y)}" for x, y in points)
        self.items.append(f'<polyline points="{pts}" fill="none" stroke="{stroke}" stroke-width="{width}"/>')

    def arrow(self, x, y, dx, dy, stroke="#000", head=3.0):
        """Shaft from (x, y) to (x+dx, y+dy) with a two-stroke head."""
        x2, y2 = x + dx, y + dy
        self.line(x, y, x2, y2, stroke, 1.0)
        length = math.hypot(dx, dy)
        if length == 0:
            return
        ux, uy = dx / length, dy / length
        for side in (1, -1):
            hx = x2 - head * (ux + 0.5 * side * uy)
            hy = y2 - head * (uy - 0.5 * side * ux)
            self.line(x2, y2, hx, hy, stroke, 1.0)

    def dot(self, x, y, r=2.5, fill="#000"):
        self.items.append(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="{r}" fill="{fill}"/>')

    def text(self, x, y, s, size=11, anchor="middle"):
        self.items.append(f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}" '
                          f'font-family="sans-serif" text-anchor="{anchor}">{escape(str(s))}</text>')

    def to_string(self):
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
                f'viewBox="0 0 {self.width} {self.height}">')
        body = "\n".join(self.items)
        return f'{head}\n<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n'

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.to_string())


class Panel:
    """Axis box mapping data coordinates onto a region of the canvas."""

    def __init__(self, canvas, x, y, w, h, xlim, ylim, title=""):
        self.c, self.x, self.y, self.w, self.h = canvas, x, y, w, h
        self.xlim, self.ylim = xlim, ylim
        canvas.rect(x, y, w, h)
        if title:
            canvas.text(x + w / 2, y - 5, title)

    def map(self, u, v):
        (x0, x1), (y0, y1) = self.xlim, self.ylim
        px = self.x + (u - x0) / (x1 - x0) * self.w
        py = self.y + self.h - (v - y0) / (y1 - y0) * self.h
        return px, py

    def ticks(self, xlabel="", ylabel=""):
        (x0, x1), (y0, y1) = self.xlim, self.ylim
        self.c.text(self.x, self.y + self.h + 12, f"{x0:g}", 9)
        self.c.text(self.x + self.w, self.y + self.h + 12, f"{x1:g}", 9)
        self.c.text(self.x - 3, self.y + self.h, f"{y0:g}", 9, "end")
        self.c.text(self.x - 3, self.y + 8, f"{y1:g}", 9, "end")
        if xlabel:
            self.c.text(self.x + self.w / 2, self.y + self.h + 14, xlabel, 10)
        if ylabel:
            self.c.text(self.x - 4, self.y + self.h / 2, ylabel, 10, "end")


def _grid_layout(n, cols, size, pad=40):
    rows = max(1, math.ceil(n / cols))
    width = cols * (size + pad) + pad
    height = rows * (size + pad) + pad
    cells = [(pad + (i % cols) * (size + pad), pad + (i // cols) * (size + pad)) for i in range(n)]
    return Canvas(width, height), cells


def _arrows(panel, rows, stroke, scale):
    for r in rows:
        if not r[10]:
            continue
        px, py = panel.map(r[3], r[4])
        panel.c.arrow(px, py, scale * r[5], -scale * r[6], stroke)


def vector_field_figure(rows, methods, path, marks=(), cols=4, size=200):
    """One panel per method; ``marks`` are (k0, k1) points drawn as dots."""
    canvas, cells = _grid_layout(len(methods), cols, size)
    stable = [r for r in rows if r[10]]
    k0s = [r[3] for r in rows]
    k1s = [r[4] for r in rows]
    xlim, ylim = (min(k0s), max(k0s)), (min(k1s), max(k1s))
    n_side = max(2, int(round(math.sqrt(len(rows) / max(1, len(methods))))))
    scale = 0.4 * size / n_side
    for (x, y), method in zip(cells, methods):
        panel = Panel(canvas, x, y, size, size, xlim, ylim, method)
        panel.ticks()
        _arrows(panel, [r for r in stable if r[0] == method], "#1f77b4", scale)
        for k0, k1 in marks:
            panel.c.dot(*panel.map(k0, k1), fill="#d62728")
    canvas.save(path)


def gap_figure(runs, path, size=260):
    """Log10 optimality gap vs iteration, one panel per setup."""
    setups = list(dict.fromkeys(r.setup for r in runs))
    canvas, cells = _grid_layout(len(setups), len(setups), size)
    floor = 1e-16
    for (x, y), setup in zip(cells, setups):
        mine = [r for r in runs if r.setup == setup]
        n_max = max(len(r.gaps) for r in mine)
        logs = [np.log10(np.maximum(np.asarray(r.gaps, dtype=float), floor)) for r in mine]
        lo, hi = min(float(v.min()) for v in logs), max(float(v.max()) for v in logs)
        panel = Panel(canvas, x, y, size, size, (0, max(1, n_max - 1)), (lo, hi + 1e-9), setup)
        panel.ticks("iteration", "log10 gap")
        for i, (run, v) in enumerate(zip(mine, logs)):
            colour = PALETTE[i % len(PALETTE)]
            panel.c.polyline([panel.map(t, g) for t, g in enumerate(v)], colour)
            panel.c.text(x + size - 4, y + 14 + 12 * i, run.method, 9, "end")
            panel.c.line(x + size - 3, y + 10 + 12 * i, x + size, y + 10 + 12 * i, colour, 3)
    canvas.save(path)


def sweep_figure(fields, path, size=180):
    """α rows × γ columns; ∇J_γ arrows in blue, ∇J_μ arrows in red."""
    alphas = list(dict.fromkeys(a for a, _, _ in fields))
    gammas = list(dict.fromkeys(g for _, g, _ in fields))
    canvas, cells = _grid_layout(len(fields), len(gammas), size)
    lookup = {(a, g): rows for a, g, rows in fields}
    for (x, y), (a, g) in zip(cells, [(a, g) for a in alphas for g in gammas]):
        rows = lookup[(a, g)]
        k0s = [r[3] for r in rows]
        k1s = [r[4] for r in rows]
        panel = Panel(canvas, x, y, size, size, (min(k0s), max(k0s)), (min(k1s), max(k1s)),
                      f"alpha={a:g}, gamma={g:g}")
        n_side = max(2, int(round(math.sqrt(len([r for r in rows if r[0] == "grad_J_gamma"])))))
        scale = 0.4 * size / n_side
        _arrows(panel, [r for r in rows if r[0] == "grad_J_gamma"], PALETTE[0], scale)
        _arrows(panel, [r for r in rows if r[0] == "grad_J_mu"], PALETTE[1], scale)
    canvas.save(path)
