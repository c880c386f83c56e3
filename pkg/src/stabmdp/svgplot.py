"""Hand-rolled SVG charts; deterministic output, no plotting dependency.

Supports exactly what the figure reproductions need: polylines with dash
patterns, scatter markers, filled polygons, horizontal guides, axes with
tick labels and a legend box.
"""

from __future__ import annotations

import numpy as np


def _fmt(value: float) -> str:
    return f"{value:.6g}"


class Chart:
    def __init__(self, width=640, height=440, title="", xlabel="", ylabel=""):
        self.width = width
        self.height = height
        self.title = title
        self.xlabel = xlabel
        self.ylabel = ylabel
        self.margin_left = 62.0
        self.margin_right = 18.0
        self.margin_top = 30.0 if title else 16.0
        self.margin_bottom = 48.0
        self._elements: list[str] = []
        self._legend: list[tuple[str, str, str | None]] = []
        self._xlim = None
        self._ylim = None
        self._seen: list[tuple[float, float]] = []

    # -- data window -------------------------------------------------------

    def set_limits(self, xlim=None, ylim=None):
        if xlim is not None:
            self._xlim = (float(xlim[0]), float(xlim[1]))
        if ylim is not None:
            self._ylim = (float(ylim[0]), float(ylim[1]))

    def _track(self, xs, ys):
        for x, y in zip(np.atleast_1d(xs), np.atleast_1d(ys)):
            if np.isfinite(x) and np.isfinite(y):
                self._seen.append((float(x), float(y)))

    def _window(self):
        if self._xlim is not None and self._ylim is not None:
            return self._xlim, self._ylim
        if not self._seen:
            return (0.0, 1.0), (0.0, 1.0)
        xs = [p[0] for p in self._seen]
        ys = [p[1] for p in self._seen]
        xlim = self._xlim or _padded(min(xs), max(xs))
        ylim = self._ylim or _padded(min(ys), max(ys))
        return xlim, ylim

    def _mapper(self):
        (x0, x1), (y0, y1) = self._window()
        span_x = (x1 - x0) or 1.0
        span_y = (y1 - y0) or 1.0
        plot_w = self.width - self.margin_left - self.margin_right
        plot_h = self.height - self.margin_top - self.margin_bottom

        def to_px(x, y):
            px = self.margin_left + (x - x0) / span_x * plot_w
            py = self.height - self.margin_bottom - (y - y0) / span_y * plot_h
            return px, py

        return to_px

    # -- drawing primitives (evaluated lazily at render time) ---------------

    def polyline(self, xs, ys, color, width=1.6, dash=None, label=None):
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        self._track(xs, ys)
        self._elements.append(("line", xs, ys, color, width, dash))
        if label:
            self._legend.append((label, color, dash))

    def scatter(self, xs, ys, color, radius=2.4, label=None, opacity=1.0):
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        self._track(xs, ys)
        self._elements.append(("dots", xs, ys, color, radius, opacity))
        if label:
            self._legend.append((label, color, None))

    def polygon(self, pts, fill, stroke="none", opacity=0.5, label=None):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        self._track(pts[:, 0], pts[:, 1])
        self._elements.append(("poly", pts, fill, stroke, opacity))
        if label:
            self._legend.append((label, fill, None))

    def hline(self, y, color="#555555", dash="4,3", label=None):
        self._elements.append(("hline", float(y), color, dash))
        self._track([], [])
        if label:
            self._legend.append((label, color, dash))

    # -- rendering -----------------------------------------------------------

    def to_svg(self) -> str:
        to_px = self._mapper()
        (x0, x1), (y0, y1) = self._window()
        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
            f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">',
            f'<rect width="{self.width}" height="{self.height}" fill="white"/>',
        ]
        body = []
        for el in self._elements:
            kind = el[0]
            if kind == "line":
                _, xs, ys, color, width, dash = el
                pts = " ".join(
                    f"{_fmt(px)},{_fmt(py)}"
                    for px, py in (to_px(x, y) for x, y in zip(xs, ys)
                                   if np.isfinite(x) and np.isfinite(y))
                )
                dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
                body.append(
                    f'<polyline points="{pts}" fill="none" stroke="{color}" '
                    f'stroke-width="{width}"{dash_attr}/>'
                )
            elif kind == "dots":
                _, xs, ys, color, radius, opacity = el
                for x, y in zip(xs, ys):
                    px, py = to_px(x, y)
                    body.append(
                        f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="{radius}" '
                        f'fill="{color}" fill-opacity="{opacity}"/>'
                    )
            elif kind == "poly":
                _, pts, fill, stroke, opacity = el
                path = " ".join(
                    f"{_fmt(px)},{_fmt(py)}" for px, py in (to_px(x, y) for x, y in pts)
                )
                body.append(
                    f'<polygon points="{path}" fill="{fill}" fill-opacity="{opacity}" '
                    f'stroke="{stroke}"/>'
                )
            elif kind == "hline":
                _, y, color, dash = el
                px0, py = to_px(x0, y)
                px1, _ = to_px(x1, y)
                body.append(
                    f'<line x1="{_fmt(px0)}" y1="{_fmt(py)}" x2="{_fmt(px1)}" '
                    f'y2="{_fmt(py)}" stroke="{color}" stroke-dasharray="{dash}"/>'
                )
        out.extend(self._axes(to_px, (x0, x1), (y0, y1)))
        out.extend(body)
        out.extend(self._legend_box())
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def _axes(self, to_px, xlim, ylim):
        out = []
        left = self.margin_left
        bottom = self.height - self.margin_bottom
        right = self.width - self.margin_right
        top = self.margin_top
        out.append(
            f'<rect x="{_fmt(left)}" y="{_fmt(top)}" width="{_fmt(right - left)}" '
            f'height="{_fmt(bottom - top)}" fill="none" stroke="#222222"/>'
        )
        font = 'font-family="Helvetica,Arial,sans-serif" font-size="12"'
        for tick in np.linspace(xlim[0], xlim[1], 5):
            px, _ = to_px(tick, ylim[0])
            out.append(
                f'<line x1="{_fmt(px)}" y1="{_fmt(bottom)}" x2="{_fmt(px)}" '
                f'y2="{_fmt(bottom + 4)}" stroke="#222222"/>'
            )
            out.append(
                f'<text x="{_fmt(px)}" y="{_fmt(bottom + 17)}" text-anchor="middle" '
                f"{font}>{_fmt(tick)}</text>"
            )
        for tick in np.linspace(ylim[0], ylim[1], 5):
            _, py = to_px(xlim[0], tick)
            out.append(
                f'<line x1="{_fmt(left - 4)}" y1="{_fmt(py)}" x2="{_fmt(left)}" '
                f'y2="{_fmt(py)}" stroke="#222222"/>'
            )
            out.append(
                f'<text x="{_fmt(left - 7)}" y="{_fmt(py + 4)}" text-anchor="end" '
                f"{font}>{_fmt(tick)}</text>"
            )
        if self.xlabel:
            out.append(
                f'<text x="{_fmt((left + right) / 2)}" y="{_fmt(self.height - 10)}" '
                f'text-anchor="middle" {font}>{self.xlabel}</text>'
            )
        if self.ylabel:
            cx, cy = 16, (top + bottom) / 2
            out.append(
                f'<text x="{_fmt(cx)}" y="{_fmt(cy)}" text-anchor="middle" {font} '
                f'transform="rotate(-90 {_fmt(cx)} {_fmt(cy)})">{self.ylabel}</text>'
            )
        if self.title:
            out.append(
                f'<text x="{_fmt((left + right) / 2)}" y="20" text-anchor="middle" '
                f'{font} font-weight="bold">{self.title}</text>'
            )
        return out

    def _legend_box(self):
        if not self._legend:
            return []
        font = 'font-family="Helvetica,Arial,sans-serif" font-size="12"'
        x = self.width - self.margin_right - 180
        y = self.margin_top + 10
        out = [
            f'<rect x="{x - 8}" y="{y - 12}" width="186" '
            f'height="{18 * len(self._legend) + 8}" fill="white" '
            f'fill-opacity="0.85" stroke="#bbbbbb"/>'
        ]
        for i, (label, color, dash) in enumerate(self._legend):
            yy = y + 18 * i
            dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
            out.append(
                f'<line x1="{x}" y1="{yy}" x2="{x + 26}" y2="{yy}" '
                f'stroke="{color}" stroke-width="2.5"{dash_attr}/>'
            )
            out.append(f'<text x="{x + 32}" y="{yy + 4}" {font}>{label}</text>')
        return out

    def save(self, path):
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(self.to_svg())


def _padded(lo: float, hi: float) -> tuple[float, float]:
    span = (hi - lo) or max(abs(lo), 1.0)
    return lo - 0.06 * span, hi + 0.06 * span
