"""Desired-route channel and the target-heatmap alternative."""

from __future__ import annotations

import math

import numpy as np

from ..bev.raster import AHEAD, CELL, CELLS_PER_M, GRID, HALF_WIDTH, stroke_polyline
from ..geometry import interpolate, project_to_polyline
from .planner import Route

ROUTE_WIDTH = 0.6
HEATMAP_SIGMA = 2.0


def remaining_polyline(route: Route, start_s: float) -> np.ndarray:
    """Route polyline from arclength ``start_s`` to the end."""
    if route.empty:
        return np.zeros((0, 2))
    start_s = min(max(start_s, 0.0), route.length)
    head = interpolate(route.polyline, start_s, route.cum)[None]
    tail = route.polyline[route.cum > start_s + 1e-9]
    return np.vstack([head, tail])


def render_route_mask(route: Route, ego_pose, start_s: float | None = None,
                      width: float = ROUTE_WIDTH) -> np.ndarray:
    """Stroke the route from the ego's position onward into a 192x192 binary channel.

    Without ``start_s`` the ego is projected onto the route. Every stroke
    segment is extended by one cell at both ends so bends stay closed.
    """
    if route.empty:
        return np.zeros((GRID, GRID), dtype=np.uint8)
    if start_s is None:
        start_s, _, _ = project_to_polyline(route.polyline, ego_pose[:2], route.cum)
    pts = remaining_polyline(route, start_s)
    return stroke_polyline(ego_pose, pts, width, extend=CELL)


def render_target_heatmap(next_wp_local, sigma: float = HEATMAP_SIGMA) -> np.ndarray:
    """Gaussian bump (peak 1) at the cell of an ego-frame waypoint (x forward, y left).

    A waypoint outside the grid is clamped onto the nearest boundary cell.
    """
    x, y = float(next_wp_local[0]), float(next_wp_local[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError("waypoint must be finite")
    col = int(np.clip(math.floor((HALF_WIDTH - y) * CELLS_PER_M), 0, GRID - 1))
    row = int(np.clip(math.floor((AHEAD - x) * CELLS_PER_M), 0, GRID - 1))
    s = sigma * CELLS_PER_M
    r = np.arange(GRID, dtype=np.float64)
    gr = np.exp(-0.5 * ((r - row) / s) ** 2)
    gc = np.exp(-0.5 * ((r - col) / s) ** 2)
    return np.outer(gr, gc).astype(np.float32)
