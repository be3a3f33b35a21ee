"""Privileged desired-route planning over the lane graph."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from ..geometry import cumulative_length, resample
from ..world.town import TownMap

ROUTE_SPACING = 0.2
SNAP_RADIUS = 5.0


class PlanningError(RuntimeError):
    """A mission waypoint could not be reached; ``index`` names the first failing one."""

    def __init__(self, index: int, reason: str = "unreachable"):
        super().__init__(f"waypoint {index} {reason}")
        self.index = index


@dataclass
class Route:
    lane_path: list[tuple[int, float, float]] = field(default_factory=list)
    polyline: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        self.polyline = np.asarray(self.polyline, dtype=np.float64).reshape(-1, 2)
        self.cum = cumulative_length(self.polyline) if len(self.polyline) else np.zeros(0)

    @property
    def length(self) -> float:
        return float(self.cum[-1]) if len(self.cum) else 0.0

    @property
    def empty(self) -> bool:
        return len(self.polyline) < 2

    def lane_ids(self) -> list[int]:
        return [lane_id for lane_id, _, _ in self.lane_path]


def _lane_dijkstra(town: TownMap, start: tuple[int, float], goal: tuple[int, float]):
    """Cheapest lane sequence from a lane position to another; ties prefer lower lane ids."""
    l0, s0 = start
    l1, s1 = goal
    if l0 == l1 and s1 >= s0 - 1e-9:
        return [(l0, s0, max(s0, s1))], max(0.0, s1 - s0)
    first = town.lane(l0)
    head = first.length - s0
    dist: dict[int, float] = {}
    prev: dict[int, int] = {}
    heap: list[tuple[float, int]] = []
    for nxt in sorted(first.successors):
        if nxt not in dist or head < dist[nxt] - 1e-9:
            dist[nxt] = head
            prev[nxt] = l0
            heapq.heappush(heap, (head, nxt))
    done: set[int] = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done or d > dist[u] + 1e-9:
            continue
        done.add(u)
        if u == l1:
            break
        nd = d + town.lane(u).length
        for v in sorted(town.lane(u).successors):
            if v in done:
                continue
            if v not in dist or nd < dist[v] - 1e-9 or (abs(nd - dist[v]) <= 1e-9 and u < prev[v]):
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    if l1 not in done:
        return None, None
    chain = [l1]
    while chain[-1] != l0 or len(chain) == 1:
        p = prev[chain[-1]]
        chain.append(p)
        if p == l0:
            break
    chain.reverse()
    path = [(l0, s0, first.length)]
    path += [(lid, 0.0, town.lane(lid).length) for lid in chain[1:-1]]
    path.append((l1, 0.0, s1))
    return path, dist[l1] + s1


def path_cost(town: TownMap, start: tuple[int, float], goal: tuple[int, float], lanes: list[int]) -> float:
    """Length of driving ``lanes`` (first = start lane, last = goal lane)."""
    if len(lanes) == 1:
        return goal[1] - start[1]
    cost = town.lane(lanes[0]).length - start[1]
    cost += sum(town.lane(l).length for l in lanes[1:-1])
    return cost + goal[1]


def route_polyline(town: TownMap, lane_path) -> np.ndarray:
    """Dense 0.2 m polyline through ``(lane id, s0, s1)`` pieces."""
    pieces = []
    for lane_id, a, b in lane_path:
        if b - a <= 1e-9:
            continue
        pts = town.lane(lane_id).slice(a, b)
        if pieces and np.allclose(pieces[-1][-1], pts[0]):
            pts = pts[1:]
        pieces.append(pts)
    if not pieces:
        return np.zeros((0, 2))
    pts = np.vstack(pieces)
    keep = np.concatenate([[True], np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-9])
    pts = pts[keep]
    if len(pts) < 2:
        return np.zeros((0, 2))
    return resample(pts, ROUTE_SPACING)


def plan_shortest_path(town: TownMap, ego_lane_pos: tuple[int, float], waypoints) -> Route:
    """Shortest lane-graph route from the ego position through ``waypoints`` in order.

    Each waypoint snaps to its nearest lane (within 5 m). Raises
    :class:`PlanningError` naming the first waypoint that cannot be reached.
    """
    cur = (int(ego_lane_pos[0]), float(ego_lane_pos[1]))
    lane_path: list[tuple[int, float, float]] = []
    for i, wp in enumerate(waypoints):
        snapped = town.snap(np.asarray(wp, dtype=np.float64), max_distance=SNAP_RADIUS)
        if snapped is None:
            raise PlanningError(i, f"is farther than {SNAP_RADIUS} m from every lane")
        goal = (snapped[0], snapped[1])
        path, _ = _lane_dijkstra(town, cur, goal)
        if path is None:
            raise PlanningError(i)
        for seg in path:
            if lane_path and lane_path[-1][0] == seg[0] and abs(lane_path[-1][2] - seg[1]) < 1e-9:
                lane_path[-1] = (seg[0], lane_path[-1][1], seg[2])
            else:
                lane_path.append(seg)
        cur = goal
    return Route(lane_path=lane_path, polyline=route_polyline(town, lane_path))
