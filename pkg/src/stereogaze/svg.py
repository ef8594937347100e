"""Minimal SVG 1.1 writer (rect, line and text only) for heatmaps and bar charts."""

from __future__ import annotations

from typing import Sequence
from xml.sax.saxutils import escape


def _n(v: float) -> str:
    """Fixed two-decimal coordinates keep the output byte-stable."""
    return f"{v:.2f}"


class Svg:
    def __init__(self, width: float, height: float):
        self.width = width
        self.height = height
        self.items: list[str] = []

    def rect(self, x, y, w, h, fill: str, stroke: str = "none") -> None:
        self.items.append(f'<rect x="{_n(x)}" y="{_n(y)}" width="{_n(w)}" height="{_n(h)}" '
                          f'fill="{fill}" stroke="{stroke}"/>')

    def line(self, x1, y1, x2, y2, stroke: str = "#000", width: float = 1.0) -> None:
        self.items.append(f'<line x1="{_n(x1)}" y1="{_n(y1)}" x2="{_n(x2)}" y2="{_n(y2)}" '
                          f'stroke="{stroke}" stroke-width="{_n(width)}"/>')

    def text(self, x, y, s: str, size: float = 12, anchor: str = "start", rotate: float = 0.0) -> None:
        rot = f' transform="rotate({_n(rotate)} {_n(x)} {_n(y)})"' if rotate else ""
        self.items.append(f'<text x="{_n(x)}" y="{_n(y)}" font-family="sans-serif" font-size="{_n(size)}" '
                          f'text-anchor="{anchor}"{rot}>{escape(s)}</text>')

    def to_string(self) -> str:
        head = ('<?xml version="1.0" encoding="UTF-8"?>\n'
                f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_n(self.width)}" '
                f'height="{_n(self.height)}" viewBox="0 0 {_n(self.width)} {_n(self.height)}">\n')
        return head + "\n".join(self.items) + "\n</svg>\n"


def diverging_color(v: float) -> str:
    """Blue (-1) through white (0) to red (+1); NaN is grey."""
    if v != v:
        return "#bbbbbb"
    v = max(-1.0, min(1.0, v))
    if v >= 0:
        r, g, b = 255, round(255 * (1 - v)), round(255 * (1 - v))
    else:
        r, g, b = round(255 * (1 + v)), round(255 * (1 + v)), 255
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap(matrix, labels: Sequence[str], title: str = "", cell: float = 56.0) -> str:
    n = len(labels)
    left, top = 110.0, 40.0 + (20.0 if title else 0.0)
    svg = Svg(left + n * cell + 20, top + n * cell + 90)
    if title:
        svg.text(svg.width / 2, 24, title, size=15, anchor="middle")
    for i in range(n):
        for j in range(n):
            v = float(matrix[i][j])
            x, y = left + j * cell, top + i * cell
            svg.rect(x, y, cell, cell, diverging_color(v), stroke="#ffffff")
            svg.text(x + cell / 2, y + cell / 2 + 4, "n/a" if v != v else f"{v:.2f}", size=11, anchor="middle")
        svg.text(left - 6, top + i * cell + cell / 2 + 4, labels[i], size=12, anchor="end")
        svg.text(left + i * cell + cell / 2, top + n * cell + 14, labels[i], size=12, anchor="end", rotate=-45)
    return svg.to_string()


def bar_chart(values: Sequence[float], labels: Sequence[str], title: str = "",
              bar_width: float = 48.0, height: float = 220.0) -> str:
    n = len(values)
    left, top = 50.0, 30.0 + (20.0 if title else 0.0)
    svg = Svg(left + n * (bar_width + 14) + 20, top + height + 90)
    if title:
        svg.text(svg.width / 2, 24, title, size=15, anchor="middle")
    vmax = max([float(v) for v in values] + [1e-12])
    base = top + height
    svg.line(left, base, left + n * (bar_width + 14), base)
    svg.line(left, top, left, base)
    for k in range(5):
        frac = k / 4
        y = base - frac * height
        svg.line(left - 4, y, left, y)
        svg.text(left - 6, y + 4, f"{frac * vmax:.2f}", size=10, anchor="end")
    for i, (v, name) in enumerate(zip(values, labels)):
        h = float(v) / vmax * height
        x = left + 7 + i * (bar_width + 14)
        svg.rect(x, base - h, bar_width, h, "#4477aa")
        svg.text(x + bar_width / 2, base - h - 4, f"{float(v):.3f}", size=10, anchor="middle")
        svg.text(x + bar_width / 2, base + 14, name, size=12, anchor="end", rotate=-45)
    return svg.to_string()
