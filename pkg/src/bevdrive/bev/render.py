"""Rendering of the road, lane-line and temporally stacked dynamic channels."""

from __future__ import annotations

from collections import deque

import numpy as np

from ..geometry import cumulative_length, interpolate, rect_corners
from ..world.sim import WorldSnapshot
from ..world.town import DASHED, SOLID, TownMap
from .raster import CELL, GRID, fill_convex, segment_rects, to_grid_coords

N_CHANNELS = 15
ROAD, ROUTE, LANES = 0, 1, 2
VEHICLES = slice(3, 7)
PEDESTRIANS = slice(7, 11)
STOP_ZONES = slice(11, 15)
CHANNEL_NAMES = (
    ["road", "route", "lanes"]
    + [f"vehicle{k}" for k in range(4)]
    + [f"ped{k}" for k in range(4)]
    + [f"stop{k}" for k in range(4)]
)
DEFAULT_STRIDE = 4

# radius around the ego beyond which geometry cannot touch the grid
_VIEW_RADIUS = float(np.hypot(30.4, 19.2)) + 1.0
_DASH = 2 * CELL


def _dash_pieces(points: np.ndarray) -> list[np.ndarray]:
    """Split a boundary polyline into alternating 2-cell on / 2-cell off pieces."""
    cum = cumulative_length(points)
    pieces = []
    s = 0.0
    while s < cum[-1]:
        e = min(s + _DASH, cum[-1])
        inner = points[(cum > s) & (cum < e)]
        piece = np.vstack([interpolate(points, s, cum)[None], inner, interpolate(points, e, cum)[None]])
        pieces.append(piece)
        s += 2 * _DASH
    return pieces


class _StaticCache:
    def __init__(self, town: TownMap):
        quads, _ = town.lane_quads()
        self.road = quads
        self.road_center = quads.mean(axis=1) if len(quads) else np.zeros((0, 2))
        self.road_radius = (np.linalg.norm(quads - self.road_center[:, None], axis=2).max(axis=1)
                            if len(quads) else np.zeros(0))
        strokes = []
        for lane in town.lanes:
            for kind, line in ((lane.left_kind, lane.left_boundary), (lane.right_kind, lane.right_boundary)):
                if kind == SOLID:
                    strokes.append(segment_rects(line, CELL / 2))
                elif kind == DASHED:
                    strokes.extend(segment_rects(p, CELL / 2) for p in _dash_pieces(line))
        self.lines = np.concatenate(strokes) if strokes else np.zeros((0, 4, 2))
        self.line_center = self.lines.mean(axis=1) if len(self.lines) else np.zeros((0, 2))
        self.line_radius = (np.linalg.norm(self.lines - self.line_center[:, None], axis=2).max(axis=1)
                            if len(self.lines) else np.zeros(0))


def _static_cache(town: TownMap) -> _StaticCache:
    cache = getattr(town, "_bev_static", None)
    if cache is None:
        cache = _StaticCache(town)
        town._bev_static = cache
    return cache


def _visible(centers: np.ndarray, radii: np.ndarray, ego_pose) -> np.ndarray:
    d = np.hypot(centers[:, 0] - ego_pose[0], centers[:, 1] - ego_pose[1])
    return d <= _VIEW_RADIUS + radii


def render_static_channels(town: TownMap | None, ego_pose) -> tuple[np.ndarray, np.ndarray]:
    """Road and lane-line channels (uint8, 192x192) for an ego pose."""
    road = np.zeros((GRID, GRID), dtype=np.uint8)
    lines = np.zeros((GRID, GRID), dtype=np.uint8)
    if town is None or not town.lanes:
        return road, lines
    cache = _static_cache(town)
    vis = _visible(cache.road_center, cache.road_radius, ego_pose)
    fill_convex(to_grid_coords(ego_pose, cache.road[vis]), out=road)
    if len(cache.lines):
        vis = _visible(cache.line_center, cache.line_radius, ego_pose)
        fill_convex(to_grid_coords(ego_pose, cache.lines[vis]), out=lines)
    return road, lines


def _rects_of(actors) -> np.ndarray:
    if not actors:
        return np.zeros((0, 4, 2))
    return np.stack([rect_corners(a.x, a.y, a.heading, a.half_length, a.half_width) for a in actors])


def _snapshot_polys(snap: WorldSnapshot) -> list[np.ndarray]:
    polys = [_rects_of(snap.vehicles), _rects_of(snap.pedestrians)]
    if snap.red_lights:
        lights = {light.id: light for light in snap.town.traffic_lights}
        polys.append(np.stack([lights[i].stop_zone.corners() for i in snap.red_lights]))
    else:
        polys.append(np.zeros((0, 4, 2)))
    return polys


def render_snapshot_dynamic(snap: WorldSnapshot | None, ego_pose) -> np.ndarray:
    """(vehicle, pedestrian, stop-zone) masks of one snapshot in the given ego frame."""
    out = np.zeros((3, GRID, GRID), dtype=np.uint8)
    if snap is None:
        return out
    _fill_planes(ego_pose, [(i, p) for i, p in enumerate(_snapshot_polys(snap))], out)
    return out


def _fill_planes(ego_pose, jobs, out) -> None:
    polys = [p for _, p in jobs if len(p)]
    if not polys:
        return
    planes = np.concatenate([np.full(len(p), i) for i, p in jobs if len(p)])
    fill_convex(to_grid_coords(ego_pose, np.concatenate(polys)), out=out, planes=planes)


class History:
    """Ring buffer of world snapshots, newest first, for temporal stacking."""

    def __init__(self, stride: int = DEFAULT_STRIDE, slots: int = 4):
        if stride < 1:
            raise ValueError("stride must be >= 1")
        self.stride = stride
        self.slots = slots
        self._buf: deque = deque(maxlen=stride * (slots - 1) + 1)

    def push(self, item) -> None:
        self._buf.appendleft(item)

    def fill(self, item) -> None:
        self._buf.clear()
        for _ in range(self._buf.maxlen):
            self._buf.append(item)

    def __len__(self) -> int:
        return len(self._buf)

    @property
    def current(self):
        return self._buf[0]

    def slot(self, k: int):
        """Item ``k * stride`` steps in the past, or ``None`` if not recorded yet."""
        i = k * self.stride
        return self._buf[i] if i < len(self._buf) else None

    def items(self) -> list:
        return [self.slot(k) for k in range(self.slots)]


def render_dynamic_channels(history: History, ego_pose=None) -> np.ndarray:
    """12 channels: 4 vehicle, 4 pedestrian, 4 stop-zone slots (newest first).

    Historical snapshots are drawn in the current ego frame; absent slots stay zero.
    """
    if len(history) == 0:
        raise ValueError("history holds no snapshots")
    if ego_pose is None:
        ego_pose = history.current.ego.pose
    out = np.zeros((12, GRID, GRID), dtype=np.uint8)
    jobs = []
    for k, snap in enumerate(history.items()):
        if snap is None:
            continue
        v, p, z = _snapshot_polys(snap)
        jobs += [(k, v), (4 + k, p), (8 + k, z)]
    _fill_planes(ego_pose, jobs, out)
    return out
