"""Bare-bones SVG line chart, enough to eyeball a loss curve."""
from __future__ import annotations

from html import escape

WIDTH, HEIGHT, PAD = 640, 400, 50


def line_chart_svg(xs, ys, title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    xs, ys = list(map(float, xs)), list(map(float, ys))
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(0.0, min(ys)), max(ys)
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def px(x):
        return PAD + (x - x0) / (x1 - x0) * (WIDTH - 2 * PAD)

    def py(y):
        return HEIGHT - PAD - (y - y0) / (y1 - y0) * (HEIGHT - 2 * PAD)

    pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
    left, right, top, bottom = PAD, WIDTH - PAD, PAD, HEIGHT - PAD
    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{bottom}" x2="{left}" y2="{top}" stroke="black"/>',
        f'<text x="{left}" y="{bottom + 20}" font-size="12">{x0:g}</text>',
        f'<text x="{right}" y="{bottom + 20}" font-size="12" text-anchor="end">{x1:g}</text>',
        f'<text x="{left - 5}" y="{bottom}" font-size="12" text-anchor="end">{y0:g}</text>',
        f'<text x="{left - 5}" y="{top + 4}" font-size="12" text-anchor="end">{y1:g}</text>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 10}" font-size="13" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="15" y="{HEIGHT / 2}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 15 {HEIGHT / 2})">{escape(ylabel)}</text>',
        f'<text x="{WIDTH / 2}" y="25" font-size="15" text-anchor="middle">{escape(title)}</text>',
        f'<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{pts}"/>',
        "</svg>",
        "",
    ])
