"""Planar geometry shared by the simulator, the rasterizer and the planner.

World frame: x east, y north, heading measured counter-clockwise from +x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def wrap_angle(a):
    """Wrap an angle (or array of angles) into [-pi, pi)."""
    return (np.asarray(a) + math.pi) % (2.0 * math.pi) - math.pi


def cumulative_length(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        return np.zeros(0)
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def polyline_length(points: np.ndarray) -> float:
    s = cumulative_length(points)
    return float(s[-1]) if len(s) else 0.0


def interpolate(points: np.ndarray, s_query, cum: np.ndarray | None = None) -> np.ndarray:
    """Points at arclengths ``s_query`` along a polyline (clamped to its ends)."""
    points = np.asarray(points, dtype=np.float64)
    if cum is None:
        cum = cumulative_length(points)
    s_query = np.clip(np.asarray(s_query, dtype=np.float64), 0.0, cum[-1])
    x = np.interp(s_query, cum, points[:, 0])
    y = np.interp(s_query, cum, points[:, 1])
    return np.stack([x, y], axis=-1)


def heading_at(points: np.ndarray, s: float, cum: np.ndarray | None = None) -> float:
    points = np.asarray(points, dtype=np.float64)
    if cum is None:
        cum = cumulative_length(points)
    i = int(np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(points) - 2))
    d = points[i + 1] - points[i]
    return math.atan2(d[1], d[0])


def resample(points: np.ndarray, spacing: float) -> np.ndarray:
    """Resample a polyline at (near) uniform arclength spacing.

    The segment count is ``round(length / spacing)`` so every gap is within a
    few percent of ``spacing`` for polylines longer than a handful of spacings.
    """
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        return points.copy()
    cum = cumulative_length(points)
    n = max(1, int(round(cum[-1] / spacing)))
    return interpolate(points, np.linspace(0.0, cum[-1], n + 1), cum)


def offset_polyline(points: np.ndarray, offset: float) -> np.ndarray:
    """Offset a polyline to its right by ``offset`` metres (negative = left).

    Interior vertices use the averaged normal of the two adjacent segments,
    scaled so straight runs and right angles keep a constant offset.
    """
    points = np.asarray(points, dtype=np.float64)
    d = np.diff(points, axis=0)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    right = np.stack([d[:, 1], -d[:, 0]], axis=1)
    normals = np.empty_like(points)
    normals[0] = right[0]
    normals[-1] = right[-1]
    if len(points) > 2:
        avg = right[:-1] + right[1:]
        avg /= np.linalg.norm(avg, axis=1, keepdims=True)
        cos_half = np.sum(avg * right[1:], axis=1, keepdims=True)
        normals[1:-1] = avg / np.maximum(cos_half, 0.2)
    return points + offset * normals


def project_to_polyline(points: np.ndarray, p, cum: np.ndarray | None = None,
                        lo: int = 0, hi: int | None = None) -> tuple[float, float, int]:
    """Closest point of a polyline to ``p``.

    Returns ``(arclength, distance, segment_index)``; only segments
    ``lo .. hi-1`` are searched.
    """
    points = np.asarray(points, dtype=np.float64)
    if cum is None:
        cum = cumulative_length(points)
    if hi is None:
        hi = len(points) - 1
    lo = max(0, min(lo, len(points) - 2))
    hi = max(lo + 1, min(hi, len(points) - 1))
    a = points[lo:hi]
    b = points[lo + 1:hi + 1]
    ab = b - a
    denom = np.maximum(np.sum(ab * ab, axis=1), 1e-12)
    t = np.clip(np.sum((np.asarray(p) - a) * ab, axis=1) / denom, 0.0, 1.0)
    closest = a + t[:, None] * ab
    dist = np.linalg.norm(closest - np.asarray(p), axis=1)
    k = int(np.argmin(dist))
    seg_len = cum[lo + k + 1] - cum[lo + k]
    return float(cum[lo + k] + t[k] * seg_len), float(dist[k]), lo + k


@dataclass(frozen=True)
class OrientedRect:
    """Rectangle with centre, heading and half-extents (along, across)."""

    x: float
    y: float
    heading: float
    half_length: float
    half_width: float

    def corners(self) -> np.ndarray:
        return rect_corners(self.x, self.y, self.heading, self.half_length, self.half_width)

    def to_local(self, px: float, py: float) -> tuple[float, float]:
        c, s = math.cos(self.heading), math.sin(self.heading)
        dx, dy = px - self.x, py - self.y
        return c * dx + s * dy, -s * dx + c * dy

    def contains(self, px: float, py: float) -> bool:
        u, v = self.to_local(px, py)
        return abs(u) <= self.half_length and abs(v) <= self.half_width


def rect_corners(x, y, heading, half_length, half_width) -> np.ndarray:
    """Corners of an oriented rectangle in counter-clockwise order, shape (4, 2)."""
    c, s = math.cos(heading), math.sin(heading)
    f = np.array([c, s]) * half_length
    l = np.array([-s, c]) * half_width
    ctr = np.array([x, y], dtype=np.float64)
    return np.stack([ctr + f - l, ctr + f + l, ctr - f + l, ctr - f - l])


def convex_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex polygons. Touching counts as overlap."""
    for poly in (a, b):
        edges = np.roll(poly, -1, axis=0) - poly
        axes = np.stack([-edges[:, 1], edges[:, 0]], axis=1)
        for ax in axes:
            pa = a @ ax
            pb = b @ ax
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def points_in_convex(quads: np.ndarray, p) -> np.ndarray:
    """Boolean per polygon: is ``p`` inside (or on) each convex CCW polygon in ``quads`` (N, K, 2)."""
    a = quads
    b = np.roll(quads, -1, axis=1)
    cross = (b[..., 0] - a[..., 0]) * (p[1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (p[0] - a[..., 0])
    return np.all(cross >= -1e-12, axis=1)
