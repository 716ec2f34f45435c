"""Hand-rolled SVG 1.1 plot emission.

Plots are built by pure string formatting with fixed-precision coordinates,
so identical inputs produce byte-identical files (an acceptance-tested
property). Two plot kinds: per-dimension time series with a shaded band
envelope (its polygon has exactly 2*N vertices for an N-step trajectory),
and a top-down x-y projection of the trajectory with region outlines
(rectangles for boxes, circles for ball-union projections).
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import InvalidInput
from .geometry import POSE_DIMS, Trajectory
from .regions import BallUnion, BinUnionProduct, Box

_W, _H = 640, 280
_MARGIN = 42


def _fmt(v: float) -> str:
    return f"{v:.4f}"


class _Axes:
    """Linear data-to-viewport mapping with padded ranges."""

    def __init__(self, x_range, y_range):
        x0, x1 = x_range
        y0, y1 = y_range
        if x1 <= x0:
            x1 = x0 + 1.0
        if y1 <= y0:
            y1 = y0 + 1.0
        pad_x = 0.03 * (x1 - x0)
        pad_y = 0.08 * (y1 - y0)
        self.x0, self.x1 = x0 - pad_x, x1 + pad_x
        self.y0, self.y1 = y0 - pad_y, y1 + pad_y

    def x(self, v):
        return _MARGIN + (np.asarray(v) - self.x0) / (self.x1 - self.x0) * (_W - 2 * _MARGIN)

    def y(self, v):
        return _H - _MARGIN - (np.asarray(v) - self.y0) / (self.y1 - self.y0) * (
            _H - 2 * _MARGIN
        )

    def scale(self) -> float:
        return (_W - 2 * _MARGIN) / (self.x1 - self.x0)


def _header(title: str) -> list[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<rect x="{_MARGIN}" y="{_MARGIN}" width="{_W - 2 * _MARGIN}" '
        f'height="{_H - 2 * _MARGIN}" fill="none" stroke="#888" stroke-width="1"/>',
        f'<text x="{_MARGIN}" y="{_MARGIN - 10}" font-family="monospace" '
        f'font-size="12">{title}</text>',
    ]


def _polyline(xs, ys, color: str, width: float = 1.2) -> str:
    points = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in zip(xs, ys))
    return (
        f'<polyline points="{points}" fill="none" stroke="{color}" '
        f'stroke-width="{width}"/>'
    )


def band_series_svg(t, lower, upper, center=None, title: str = "") -> str:
    """Time series with a shaded band; polygon = upper path + reversed lower."""
    t = np.asarray(t, dtype=float)
    parts = _header(title)
    if t.size and lower is not None:
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        if lower.shape != t.shape or upper.shape != t.shape:
            raise InvalidInput("band arrays must match the time axis")
        finite = np.concatenate([lower, upper])
        y_range = (float(finite.min()), float(finite.max()))
        if center is not None:
            c = np.asarray(center, dtype=float)
            y_range = (min(y_range[0], float(c.min())), max(y_range[1], float(c.max())))
        ax = _Axes((float(t.min()), float(t.max())), y_range)
        xs = ax.x(t)
        poly = " ".join(
            f"{_fmt(x)},{_fmt(y)}" for x, y in zip(xs, ax.y(upper))
        )
        poly += " " + " ".join(
            f"{_fmt(x)},{_fmt(y)}" for x, y in zip(xs[::-1], ax.y(lower)[::-1])
        )
        parts.append(
            f'<polygon points="{poly}" fill="#aaccee" fill-opacity="0.55" stroke="none"/>'
        )
        if center is not None:
            parts.append(_polyline(xs, ax.y(np.asarray(center, dtype=float)), "#224488"))
        parts.append(
            f'<text x="{_MARGIN}" y="{_H - 12}" font-family="monospace" font-size="10">'
            f"y:[{_fmt(y_range[0])},{_fmt(y_range[1])}] t:[{_fmt(float(t.min()))},{_fmt(float(t.max()))}]</text>"
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _region_outlines_xy(region) -> list[tuple]:
    """Project a region onto the x-y plane as drawable primitives."""
    if isinstance(region, Box):
        return [("rect", region.lower[0], region.lower[1], region.upper[0], region.upper[1])]
    if isinstance(region, BinUnionProduct):
        out = []
        for ax in region.intervals[0]:
            for ay in region.intervals[1]:
                out.append(("rect", ax[0], ay[0], ax[1], ay[1]))
        return out
    if isinstance(region, BallUnion):
        return [
            ("circle", c[0], c[1], region.radius) for c in np.atleast_2d(region.centers)
        ]
    raise InvalidInput(f"cannot outline {type(region).__name__}")


def topdown_svg(trajectory: Trajectory, regions=(), title: str = "top-down x-y") -> str:
    """Top-down x-y trajectory with region outlines."""
    xy = trajectory.poses[:, :2]
    xs_all = [xy[:, 0]]
    ys_all = [xy[:, 1]]
    prims: list[tuple] = []
    for region in regions:
        for prim in _region_outlines_xy(region):
            prims.append(prim)
            if prim[0] == "rect":
                xs_all.append(np.array([prim[1], prim[3]]))
                ys_all.append(np.array([prim[2], prim[4]]))
            else:
                xs_all.append(np.array([prim[1] - prim[3], prim[1] + prim[3]]))
                ys_all.append(np.array([prim[2] - prim[3], prim[2] + prim[3]]))
    x_cat = np.concatenate(xs_all)
    y_cat = np.concatenate(ys_all)
    ax = _Axes((float(x_cat.min()), float(x_cat.max())), (float(y_cat.min()), float(y_cat.max())))
    parts = _header(title)
    for prim in prims:
        if prim[0] == "rect":
            x0, y1 = ax.x(prim[1]), ax.y(prim[2])
            x1, y0 = ax.x(prim[3]), ax.y(prim[4])
            parts.append(
                f'<rect x="{_fmt(x0)}" y="{_fmt(y0)}" width="{_fmt(x1 - x0)}" '
                f'height="{_fmt(y1 - y0)}" fill="none" stroke="#cc6633" stroke-width="0.8"/>'
            )
        else:
            r = prim[3] * ax.scale()
            parts.append(
                f'<circle cx="{_fmt(ax.x(prim[1]))}" cy="{_fmt(ax.y(prim[2]))}" '
                f'r="{_fmt(r)}" fill="none" stroke="#cc6633" stroke-width="0.8"/>'
            )
    parts.append(_polyline(ax.x(xy[:, 0]), ax.y(xy[:, 1]), "#224488"))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_plots(trajectory: Trajectory, band, regions, out_dir, prefix: str = "") -> list[Path]:
    """Write per-dimension band plots and the top-down projection.

    ``band`` may be None (axes-only plots); ``regions`` is an iterable of
    region objects to outline on the top-down view. Output is deterministic
    per input. Returns the written paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    t = trajectory.timestamps
    for d, name in enumerate(POSE_DIMS):
        if band is None:
            svg = band_series_svg(t, None, None, title=f"{prefix}{name}")
        else:
            lower = np.atleast_2d(band.lower)[:, d]
            upper = np.atleast_2d(band.upper)[:, d]
            svg = band_series_svg(
                t, lower, upper, center=trajectory.poses[:, d], title=f"{prefix}{name}"
            )
        path = out_dir / f"{prefix}band_{name}.svg"
        path.write_text(svg, encoding="utf-8")
        written.append(path)
    path = out_dir / f"{prefix}topdown.svg"
    path.write_text(topdown_svg(trajectory, regions or ()), encoding="utf-8")
    written.append(path)
    return written
