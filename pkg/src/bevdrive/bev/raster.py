"""Ego-anchored grid frame and exact polygon rasterization.

A cell is filled iff its centre lies inside the polygon. Centres exactly on
an edge are resolved toward the lower index: a polygon spanning ``[lo, hi]``
along an axis claims centres ``c`` with ``lo < c <= hi``.
"""

from __future__ import annotations

import math

import numpy as np

GRID = 192
CELL = 0.2
CELLS_PER_M = 5.0
AHEAD = 30.4
BEHIND = 8.0
HALF_WIDTH = 19.2
EGO_CELL = (152, 96)

# transformed coordinates are snapped to this many fractional bits of a cell so
# that equal geometry in different absolute positions rasterizes identically
_SNAP = float(2 ** 20)


def to_grid_coords(ego_pose, points) -> np.ndarray:
    """Continuous grid coordinates ``(u, v)`` of world points; u runs left to right, v top to bottom."""
    ex, ey, h = ego_pose
    pts = np.asarray(points, dtype=np.float64)
    dx = pts[..., 0] - ex
    dy = pts[..., 1] - ey
    c, s = math.cos(h), math.sin(h)
    forward = c * dx + s * dy
    left = -s * dx + c * dy
    u = (HALF_WIDTH - left) * CELLS_PER_M
    v = (AHEAD - forward) * CELLS_PER_M
    out = np.stack([u, v], axis=-1)
    return np.round(out * _SNAP) / _SNAP


def world_to_grid(ego_pose, point) -> tuple[int, int] | None:
    """Cell ``(row, col)`` holding a world point, or ``None`` when it falls outside the grid."""
    u, v = to_grid_coords(ego_pose, np.asarray(point, dtype=np.float64))
    if not (0.0 <= u < GRID and 0.0 <= v < GRID):
        return None
    return int(math.floor(v)), int(math.floor(u))


def grid_to_world(ego_pose, row: float, col: float) -> np.ndarray:
    """World position of continuous grid coordinates (use ``r + 0.5`` for a cell centre)."""
    ex, ey, h = ego_pose
    left = HALF_WIDTH - col / CELLS_PER_M
    forward = AHEAD - row / CELLS_PER_M
    c, s = math.cos(h), math.sin(h)
    return np.array([ex + c * forward - s * left, ey + s * forward + c * left])


def fill_convex(polys: np.ndarray, shape=(GRID, GRID), out: np.ndarray | None = None,
                planes: np.ndarray | None = None) -> np.ndarray:
    """Rasterize convex polygons given in grid coordinates, shape (N, K, 2) as (u, v).

    Vertex order may be either orientation. Returns (or updates) a uint8 mask.
    With ``planes`` (one index per polygon) ``out`` is a stack of masks and
    each polygon lands on its own plane.
    """
    if out is None:
        out = np.zeros(shape if planes is None else (int(np.max(planes)) + 1, *shape), dtype=np.uint8)
    H, W = out.shape[-2:]
    polys = np.asarray(polys, dtype=np.float64)
    if polys.size == 0:
        return out
    if planes is None:
        planes = np.zeros(len(polys), dtype=np.int64)
    planes = np.asarray(planes, dtype=np.int64)
    vmin = polys[..., 1].min(axis=1)
    vmax = polys[..., 1].max(axis=1)
    umin = polys[..., 0].min(axis=1)
    umax = polys[..., 0].max(axis=1)
    keep = (vmax > 0.0) & (vmin < H) & (umax > 0.0) & (umin < W)
    polys, vmin, vmax, planes = polys[keep], vmin[keep], vmax[keep], planes[keep]
    if len(polys) == 0:
        return out
    r0 = np.maximum(np.floor(vmin - 0.5).astype(np.int64) + 1, 0)
    r1 = np.minimum(np.floor(vmax - 0.5).astype(np.int64), H - 1)
    counts = np.maximum(r1 - r0 + 1, 0)
    if counts.sum() == 0:
        return out
    pid = np.repeat(np.arange(len(polys)), counts)
    starts = np.repeat(r0, counts)
    offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    rows = starts + offsets
    yc = rows + 0.5
    plane = planes[pid]

    a = polys[pid]
    b = np.roll(a, -1, axis=1)
    ya, yb = a[..., 1], b[..., 1]
    lo = np.minimum(ya, yb)
    hi = np.maximum(ya, yb)
    hits = (lo < yc[:, None]) & (yc[:, None] <= hi) & (ya != yb)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (yc[:, None] - ya) / (yb - ya)
        x = a[..., 0] + t * (b[..., 0] - a[..., 0])
    xl = np.where(hits, x, np.inf).min(axis=1)
    xr = np.where(hits, x, -np.inf).max(axis=1)
    valid = np.isfinite(xl) & np.isfinite(xr)
    rows, xl, xr, plane = rows[valid], xl[valid], xr[valid], plane[valid]
    c0 = np.maximum(np.floor(xl - 0.5).astype(np.int64) + 1, 0)
    c1 = np.minimum(np.floor(xr - 0.5).astype(np.int64), W - 1)
    ok = c1 >= c0
    rows, c0, c1, plane = rows[ok], c0[ok], c1[ok], plane[ok]
    lengths = c1 - c0 + 1
    total = int(lengths.sum())
    base = (plane * H + rows) * W + c0
    offsets = np.arange(total) - np.repeat(np.cumsum(lengths) - lengths, lengths)
    out.reshape(-1)[np.repeat(base, lengths) + offsets] = 1
    return out


def segment_rects(points: np.ndarray, half_width: float, extend: float = 0.0) -> np.ndarray:
    """Rectangles stroking each polyline segment, shape (n-1, 4, 2), in the points' frame.

    ``extend`` lengthens every rectangle at both ends, covering the joints of
    bent polylines.
    """
    p = np.asarray(points, dtype=np.float64)
    if len(p) < 2:
        return np.zeros((0, 4, 2))
    a, b = p[:-1], p[1:]
    d = b - a
    n = np.linalg.norm(d, axis=1, keepdims=True)
    keep = n[:, 0] > 1e-9
    a, b, d, n = a[keep], b[keep], d[keep], n[keep]
    d = d / n
    perp = np.stack([-d[:, 1], d[:, 0]], axis=1) * half_width
    a = a - d * extend
    b = b + d * extend
    return np.stack([a - perp, b - perp, b + perp, a + perp], axis=1)


def stroke_polyline(ego_pose, points, width: float, extend: float = 0.0,
                    out: np.ndarray | None = None) -> np.ndarray:
    rects = segment_rects(points, width / 2.0, extend)
    if len(rects) == 0:
        return out if out is not None else np.zeros((GRID, GRID), dtype=np.uint8)
    return fill_convex(to_grid_coords(ego_pose, rects), out=out)
