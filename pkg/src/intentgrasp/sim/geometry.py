"""Convex polygon helpers for the planar x-z world.

Polygons are tuples of counter-clockwise ``(x, z)`` vertex pairs.  They have
four vertices, so plain Python arithmetic beats numpy here by a wide margin;
use :func:`as_array` where vectorised code (rendering) needs an array.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

Poly = tuple[tuple[float, float], ...]


def rect(cx: float, cz: float, half_w: float, half_h: float, angle: float = 0.0) -> Poly:
    """Rectangle centred at ``(cx, cz)`` rotated counter-clockwise by ``angle``."""
    c, s = math.cos(angle), math.sin(angle)
    out = []
    for lx, lz in ((-half_w, -half_h), (half_w, -half_h), (half_w, half_h), (-half_w, half_h)):
        out.append((cx + c * lx - s * lz, cz + s * lx + c * lz))
    return tuple(out)


def box(x0: float, z0: float, x1: float, z1: float) -> Poly:
    return ((x0, z0), (x1, z0), (x1, z1), (x0, z1))


def translate(poly: Poly, dx: float, dz: float = 0.0) -> Poly:
    return tuple((x + dx, z + dz) for x, z in poly)


def as_array(poly: Sequence) -> np.ndarray:
    return np.asarray(poly, dtype=np.float64).reshape(-1, 2)


def centroid(poly: Poly) -> tuple[float, float]:
    """Area centroid (shoelace)."""
    a = cx = cz = 0.0
    n = len(poly)
    for i in range(n):
        x0, z0 = poly[i]
        x1, z1 = poly[(i + 1) % n]
        cr = x0 * z1 - x1 * z0
        a += cr
        cx += (x0 + x1) * cr
        cz += (z0 + z1) * cr
    if abs(a) < 1e-300:
        return (sum(p[0] for p in poly) / n, sum(p[1] for p in poly) / n)
    return (cx / (3 * a), cz / (3 * a))


def extent(poly: Poly, axis) -> tuple[float, float]:
    ax, az = float(axis[0]), float(axis[1])
    proj = [x * ax + z * az for x, z in poly]
    return min(proj), max(proj)


def bounds(poly: Poly) -> tuple[float, float, float, float]:
    xs = [p[0] for p in poly]
    zs = [p[1] for p in poly]
    return min(xs), min(zs), max(xs), max(zs)


def edge_normals(poly: Poly) -> list[tuple[float, float]]:
    out = []
    n = len(poly)
    for i in range(n):
        x0, z0 = poly[i]
        x1, z1 = poly[(i + 1) % n]
        nx, nz = -(z1 - z0), x1 - x0
        norm = math.hypot(nx, nz)
        if norm > 0:
            out.append((nx / norm, nz / norm))
    return out


def separation(a: Poly, b: Poly) -> float:
    """Positive when the shapes are apart, negative when their interiors overlap.

    A negative value is the penetration depth along the least-penetrating
    separating-axis candidate.  Positive values are only a lower bound on the
    true gap (a bounding-box test short-circuits the common case).
    """
    ax0, az0, ax1, az1 = bounds(a)
    bx0, bz0, bx1, bz1 = bounds(b)
    box_gap = max(bx0 - ax1, ax0 - bx1, bz0 - az1, az0 - bz1)
    if box_gap > 0:
        return box_gap
    best = -math.inf
    for axis in edge_normals(a) + edge_normals(b):
        a0, a1 = extent(a, axis)
        b0, b1 = extent(b, axis)
        best = max(best, b0 - a1, a0 - b1)
    return best


def overlaps(a: Poly, b: Poly, tol: float = 0.0) -> bool:
    return separation(a, b) < -tol


def span_at_height(poly: Poly, z: float) -> tuple[float, float] | None:
    """``(xmin, xmax)`` of the horizontal section at height ``z``, or None."""
    xs = []
    n = len(poly)
    for i in range(n):
        x0, z0 = poly[i]
        x1, z1 = poly[(i + 1) % n]
        if z0 == z1:
            if z0 == z:
                xs.append(x0)
                xs.append(x1)
            continue
        if min(z0, z1) <= z <= max(z0, z1):
            xs.append(x0 + (z - z0) / (z1 - z0) * (x1 - x0))
    return (min(xs), max(xs)) if xs else None


def span_at_x(poly: Poly, x: float) -> tuple[float, float] | None:
    """``(zmin, zmax)`` of the vertical section at ``x``, or None."""
    return span_at_height(tuple((p[1], p[0]) for p in poly), x)


def push_distance(pusher: Poly, obj: Poly, direction: int) -> float:
    """Translation of ``obj`` along ``direction`` (+1 right, -1 left) that clears ``pusher``.

    For convex shapes the required shift is a concave piecewise-linear
    function of height, so its maximum sits at a vertex height inside the
    shared z-range.  Returns 0 when the shapes do not share a z-interval of
    positive length.
    """
    lo = max(min(p[1] for p in pusher), min(p[1] for p in obj))
    hi = min(max(p[1] for p in pusher), max(p[1] for p in obj))
    if hi <= lo:
        return 0.0
    heights = [p[1] for p in pusher + obj if lo <= p[1] <= hi] + [lo, hi]
    need = -math.inf
    for z in heights:
        p, o = span_at_height(pusher, z), span_at_height(obj, z)
        if p is None or o is None:
            continue
        need = max(need, p[1] - o[0] if direction > 0 else o[1] - p[0])
    return max(0.0, need)


def drop_clearance(mover: Poly, obstacle: Poly) -> float:
    """How far ``mover`` can descend before touching ``obstacle`` (inf if never)."""
    lo = max(min(p[0] for p in mover), min(p[0] for p in obstacle))
    hi = min(max(p[0] for p in mover), max(p[0] for p in obstacle))
    if hi <= lo:
        return math.inf
    xs = [p[0] for p in mover + obstacle if lo <= p[0] <= hi] + [lo, hi]
    gap = math.inf
    for x in xs:
        m, o = span_at_x(mover, x), span_at_x(obstacle, x)
        if m is None or o is None:
            continue
        gap = min(gap, m[0] - o[1])
    return gap
