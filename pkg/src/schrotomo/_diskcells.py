"""Exact intersection geometry between axis-aligned grid cells and a disk.

Everything here is closed-form circle/rectangle geometry used to build
conservative quadrature weights and finite-volume closures on a masked
Cartesian grid.  All areas and lengths are exact up to rounding, which is
what lets volume quadrature on the disk stay second order.
"""
from __future__ import annotations

import math

import numpy as np

__all__ = [
    "circle_rect_area",
    "segment_inside_length",
    "cell_arc_length",
    "clipped_cell_areas",
]


def _chord_antiderivative(u: float, r: float) -> float:
    # antiderivative of sqrt(r^2 - u^2), clamped to the circle's extent
    u = min(max(u, -r), r)
    return 0.5 * (u * math.sqrt(max(r * r - u * u, 0.0)) + r * r * math.asin(u / r))


def _strip_area_below(x0: float, x1: float, y: float, r: float) -> float:
    """Area of {(u,v): x0<=u<=x1, -g(u)<=v<=min(y,g(u))} with g = sqrt(r^2-u^2)."""
    a, b = max(x0, -r), min(x1, r)
    if a >= b or y <= -r:
        return 0.0
    if y >= r:
        return 2.0 * (_chord_antiderivative(b, r) - _chord_antiderivative(a, r))
    s = math.sqrt(r * r - y * y)
    area = 0.0
    ia, ib = max(a, -s), min(b, s)
    if ia < ib:
        # inside |u| <= s the upper limit is y itself
        area += y * (ib - ia) + (_chord_antiderivative(ib, r) - _chord_antiderivative(ia, r))
    if y > 0.0:
        # outside the chord the full vertical extent 2 g(u) is below y
        for lo, hi in ((a, min(b, -s)), (max(a, s), b)):
            if lo < hi:
                area += 2.0 * (_chord_antiderivative(hi, r) - _chord_antiderivative(lo, r))
    return area


def circle_rect_area(x0: float, x1: float, y0: float, y1: float, r: float) -> float:
    """Exact area of [x0,x1] x [y0,y1] intersected with the disk of radius r."""
    if x0 >= x1 or y0 >= y1:
        return 0.0
    area = _strip_area_below(x0, x1, y1, r) - _strip_area_below(x0, x1, y0, r)
    return min(max(area, 0.0), (x1 - x0) * (y1 - y0))


def segment_inside_length(fixed: float, lo: float, hi: float, r: float) -> float:
    """Length of the segment {x=fixed, lo<=y<=hi} inside the disk of radius r.

    By symmetry the same routine serves horizontal segments with the roles
    of the coordinates swapped.
    """
    d2 = r * r - fixed * fixed
    if d2 <= 0.0 or lo >= hi:
        return 0.0
    g = math.sqrt(d2)
    return max(0.0, min(hi, g) - max(lo, -g))


def cell_arc_length(x0: float, x1: float, y0: float, y1: float, r: float) -> float:
    """Arc length of the circle |x| = r inside the rectangle [x0,x1] x [y0,y1]."""
    crossings: list[float] = []
    for xf in (x0, x1):
        if abs(xf) < r:
            t = math.acos(max(-1.0, min(1.0, xf / r)))
            crossings.extend((t, -t))
    for yf in (y0, y1):
        if abs(yf) < r:
            t = math.asin(max(-1.0, min(1.0, yf / r)))
            crossings.extend((t, math.pi - t))
    angles = sorted(a % (2.0 * math.pi) for a in crossings)
    if not angles:
        # circle either misses the cell entirely or lies inside it (impossible
        # for cells smaller than the circle); test one point
        probe = (r, 0.0)
        inside = x0 <= probe[0] <= x1 and y0 <= probe[1] <= y1
        return 2.0 * math.pi * r if inside else 0.0
    angles.append(angles[0] + 2.0 * math.pi)
    total = 0.0
    eps = 1e-12 * max(1.0, r)
    for a, b in zip(angles[:-1], angles[1:]):
        mid = 0.5 * (a + b)
        px, py = r * math.cos(mid), r * math.sin(mid)
        if x0 - eps <= px <= x1 + eps and y0 - eps <= py <= y1 + eps:
            total += (b - a) * r
    return total


def clipped_cell_areas(xs: np.ndarray, h: float, r: float) -> np.ndarray:
    """Exact areas of every grid cell clipped against the disk of radius r.

    Cells are squares of side h centered on the tensor grid ``xs x xs``.
    Cells fully inside get h^2, fully outside get 0, and the O(N) cut cells
    get the closed-form intersection area.

    Parameters
    ----------
    xs : 1d array of node coordinates (same in both axes).
    h : grid spacing.
    r : disk radius.
    """
    n = xs.size
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    rho = np.hypot(X, Y)
    half_diag = h * math.sqrt(0.5)
    areas = np.zeros((n, n))
    areas[rho <= r - half_diag] = h * h
    cut = (rho > r - half_diag) & (rho < r + half_diag)
    for i, j in zip(*np.nonzero(cut)):
        areas[i, j] = circle_rect_area(
            xs[i] - 0.5 * h, xs[i] + 0.5 * h, xs[j] - 0.5 * h, xs[j] + 0.5 * h, r
        )
    return areas
