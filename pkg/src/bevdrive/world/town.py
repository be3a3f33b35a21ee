"""Procedural towns: a lane graph with lane-line geometry, junctions and traffic lights."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..geometry import (
    OrientedRect,
    cumulative_length,
    interpolate,
    offset_polyline,
    resample,
)

SOLID, DASHED, NONE = "solid", "dashed", "none"
BOUNDARY_KINDS = (SOLID, DASHED, NONE)

GREEN, YELLOW, RED = "green", "yellow", "red"
_US = 1_000_000


class TownSpecError(ValueError):
    """Raised when a town spec cannot close into a connected drivable network."""


@dataclass(frozen=True)
class TownSpec:
    """Parameters of a procedural town.

    ``layout="grid"`` builds a ring road around ``blocks`` city blocks and adds
    a fraction ``junction_fraction`` of the interior through-roads; every
    node where three or more roads meet becomes a signalised junction.
    ``layout="straight"`` is a single one-way road, handy for smoke tests.
    ``lanes`` counts lanes per travel direction.
    """

    layout: str = "grid"
    lanes: int = 1
    blocks: tuple[int, int] = (2, 2)
    block_size: float = 60.0
    junction_fraction: float = 1.0
    lane_width: float = 4.0
    straight_length: float = 200.0
    light_schedule: tuple[float, float, float] = (8.0, 2.0, 10.0)
    geo_origin: tuple[float, float] = (49.0, 8.4)

    def validate(self) -> None:
        if self.layout not in ("grid", "straight"):
            raise TownSpecError(f"unknown layout {self.layout!r}")
        if self.lanes < 1:
            raise TownSpecError("lane count must be >= 1")
        if self.lane_width <= 0:
            raise TownSpecError("lane width must be positive")
        if self.layout == "grid":
            if self.blocks[0] < 1 or self.blocks[1] < 1:
                raise TownSpecError("block grid must be at least 1x1")
            if not 0.0 <= self.junction_fraction <= 1.0:
                raise TownSpecError("junction fraction must lie in [0, 1]")
            if self.block_size - 2 * _junction_half_size(self) < 8.0:
                raise TownSpecError(
                    f"block size {self.block_size} m leaves no room between junctions "
                    f"of half-size {_junction_half_size(self):.1f} m"
                )
        elif self.straight_length < 10.0:
            raise TownSpecError("straight road shorter than 10 m")
        if min(self.light_schedule) <= 0:
            raise TownSpecError("light phase durations must be positive")

    @classmethod
    def ring(cls, lanes: int = 1, block_size: float = 60.0) -> "TownSpec":
        return cls(layout="grid", lanes=lanes, blocks=(1, 1), block_size=block_size,
                   junction_fraction=0.0)

    @classmethod
    def straight(cls, lanes: int = 1, length: float = 200.0) -> "TownSpec":
        return cls(layout="straight", lanes=lanes, straight_length=length)


@dataclass
class LaneSegment:
    id: int
    centerline: np.ndarray
    width: float
    successors: list[int] = field(default_factory=list)
    predecessors: list[int] = field(default_factory=list)
    left_boundary: np.ndarray | None = None
    right_boundary: np.ndarray | None = None
    left_kind: str = NONE
    right_kind: str = NONE
    junction: int = -1

    def __post_init__(self):
        self.centerline = np.asarray(self.centerline, dtype=np.float64)
        if self.left_boundary is None:
            self.left_boundary = offset_polyline(self.centerline, -self.width / 2)
        if self.right_boundary is None:
            self.right_boundary = offset_polyline(self.centerline, self.width / 2)
        self._cum = cumulative_length(self.centerline)

    @property
    def length(self) -> float:
        return float(self._cum[-1])

    @property
    def cum(self) -> np.ndarray:
        return self._cum

    def point_at(self, s: float) -> np.ndarray:
        return interpolate(self.centerline, s, self._cum)

    def heading_at(self, s: float) -> float:
        i = int(np.clip(np.searchsorted(self._cum, s, side="right") - 1, 0, len(self.centerline) - 2))
        d = self.centerline[i + 1] - self.centerline[i]
        return math.atan2(d[1], d[0])

    def quads(self) -> np.ndarray:
        """Counter-clockwise quads between consecutive boundary vertices, shape (n-1, 4, 2)."""
        r, l = self.right_boundary, self.left_boundary
        return np.stack([r[:-1], r[1:], l[1:], l[:-1]], axis=1)

    def slice(self, s0: float, s1: float) -> np.ndarray:
        """Centerline points between arclengths s0 <= s1, including both ends."""
        inner = self.centerline[(self._cum > s0) & (self._cum < s1)]
        return np.vstack([self.point_at(s0)[None], inner, self.point_at(s1)[None]])


@dataclass
class TrafficLight:
    """A signal controlling one lane, with its stop zone and a phase clock.

    The clock is kept in integer microseconds so that ticking is exact and
    periodic: advancing by a full cycle returns the identical state.
    """

    id: int
    lane_id: int
    junction: int
    stop_zone: OrientedRect
    schedule: tuple[float, float, float]
    conflict_group: int
    clock_us: int = 0

    @property
    def cycle_us(self) -> int:
        return sum(_to_us(d) for d in self.schedule)

    @property
    def clock(self) -> float:
        return self.clock_us / _US

    @property
    def phase(self) -> str:
        g, y, _ = (_to_us(d) for d in self.schedule)
        if self.clock_us < g:
            return GREEN
        if self.clock_us < g + y:
            return YELLOW
        return RED

    def time_in_phase(self) -> float:
        g, y, _ = (_to_us(d) for d in self.schedule)
        if self.clock_us < g:
            return self.clock_us / _US
        if self.clock_us < g + y:
            return (self.clock_us - g) / _US
        return (self.clock_us - g - y) / _US

    def advance(self, dt: float) -> None:
        self.clock_us = (self.clock_us + _to_us(dt)) % self.cycle_us


@dataclass(frozen=True)
class Junction:
    id: int
    center: tuple[float, float]
    lane_ids: tuple[int, ...]


@dataclass
class TownMap:
    lanes: list[LaneSegment]
    junctions: list[Junction]
    traffic_lights: list[TrafficLight]
    spawn_points: list[tuple[int, float]]
    spec: TownSpec = field(default_factory=TownSpec)
    seed: int = 0

    def __post_init__(self):
        self._by_id = {lane.id: lane for lane in self.lanes}
        self._quads = None
        self._quad_lane = None

    def lane(self, lane_id: int) -> LaneSegment:
        return self._by_id[lane_id]

    @property
    def lane_ids(self) -> list[int]:
        return [lane.id for lane in self.lanes]

    def lane_quads(self) -> tuple[np.ndarray, np.ndarray]:
        """All lane polygons as CCW quads plus the owning lane id of each."""
        if self._quads is None:
            qs, owners = [], []
            for lane in self.lanes:
                q = lane.quads()
                qs.append(q)
                owners.append(np.full(len(q), lane.id))
            self._quads = np.concatenate(qs) if qs else np.zeros((0, 4, 2))
            self._quad_lane = np.concatenate(owners) if owners else np.zeros(0, dtype=int)
        return self._quads, self._quad_lane

    def snap(self, point, max_distance: float = math.inf, heading: float | None = None):
        """Nearest lane to ``point``: returns (lane id, arclength, distance).

        With ``heading`` given, lanes whose direction differs by more than 90
        degrees are skipped. Ties go to the lowest lane id.
        """
        from ..geometry import project_to_polyline, wrap_angle

        best = None
        for lane in self.lanes:
            s, d, _ = project_to_polyline(lane.centerline, point, lane.cum)
            if heading is not None and abs(wrap_angle(lane.heading_at(s) - heading)) > math.pi / 2:
                continue
            if best is None or d < best[2] - 1e-9:
                best = (lane.id, s, d)
        if best is None or best[2] > max_distance:
            return None
        return best

    def centerline_distance(self, point) -> float:
        """Distance from ``point`` to the nearest lane centerline."""
        segs = getattr(self, "_center_segs", None)
        if segs is None:
            a = np.concatenate([lane.centerline[:-1] for lane in self.lanes])
            b = np.concatenate([lane.centerline[1:] for lane in self.lanes])
            segs = self._center_segs = (a, b - a, np.maximum(np.sum((b - a) ** 2, axis=1), 1e-12))
        a, ab, denom = segs
        p = np.asarray(point, dtype=np.float64)
        t = np.clip(np.sum((p - a) * ab, axis=1) / denom, 0.0, 1.0)
        return float(np.sqrt(np.min(np.sum((a + t[:, None] * ab - p) ** 2, axis=1))))

    def reachable_from(self, lane_id: int) -> set[int]:
        seen = {lane_id}
        queue = deque([lane_id])
        while queue:
            cur = queue.popleft()
            for nxt in self.lane(cur).successors:
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        return seen

    def validate(self) -> None:
        ids = set(self._by_id)
        for lane in self.lanes:
            if lane.width <= 0:
                raise TownSpecError(f"lane {lane.id} has non-positive width")
            for other in lane.successors + lane.predecessors:
                if other not in ids:
                    raise TownSpecError(f"lane {lane.id} links to missing lane {other}")
            if not (len(lane.left_boundary) == len(lane.right_boundary) == len(lane.centerline)):
                raise TownSpecError(f"lane {lane.id} boundaries disagree with its centerline")
        reached: set[int] = set()
        for lane_id, _ in self.spawn_points:
            reached |= self.reachable_from(lane_id)
        if reached != ids:
            raise TownSpecError(f"lanes {sorted(ids - reached)} unreachable from any spawn point")
        for light in self.traffic_lights:
            if min(light.schedule) <= 0 or light.stop_zone.half_length <= 0 or light.stop_zone.half_width <= 0:
                raise TownSpecError(f"traffic light {light.id} is malformed")


def _to_us(seconds: float) -> int:
    return int(round(seconds * _US))


def _junction_half_size(spec: TownSpec) -> float:
    return spec.lanes * spec.lane_width + 2.0


def _bezier(p0, c, p1, n=9):
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - t) ** 2 * p0 + 2 * (1 - t) * t * c + t ** 2 * p1


def _bezier3(p0, c0, c1, p1, n=13):
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - t) ** 3 * p0 + 3 * (1 - t) ** 2 * t * c0 + 3 * (1 - t) * t ** 2 * c1 + t ** 3 * p1


def generate_town(seed: int, spec: TownSpec | None = None) -> TownMap:
    """Build a town deterministically from ``(seed, spec)``."""
    spec = spec or TownSpec()
    spec.validate()
    if spec.layout == "straight":
        town = _straight_town(spec)
    else:
        town = _grid_town(seed, spec)
    town.seed = seed
    town.validate()
    return town


def _straight_town(spec: TownSpec) -> TownMap:
    lanes = []
    w = spec.lane_width
    for k in range(spec.lanes):
        y = -(k + 0.5) * w
        pts = np.array([[0.0, y], [spec.straight_length, y]])
        lanes.append(LaneSegment(
            id=k, centerline=resample(pts, 5.0), width=w,
            left_kind=SOLID if k == 0 else DASHED,
            right_kind=SOLID if k == spec.lanes - 1 else NONE,
        ))
    spawns = [(k, 5.0) for k in range(spec.lanes)]
    return TownMap(lanes=lanes, junctions=[], traffic_lights=[], spawn_points=spawns, spec=spec)


def _grid_town(seed: int, spec: TownSpec) -> TownMap:
    rng = np.random.default_rng(seed)
    nx, ny = spec.blocks
    B, w, L = spec.block_size, spec.lane_width, spec.lanes
    J = _junction_half_size(spec)

    edges: set[tuple[tuple[int, int], tuple[int, int]]] = set()

    def add_line(nodes):
        for a, b in zip(nodes[:-1], nodes[1:]):
            edges.add((min(a, b), max(a, b)))

    add_line([(i, 0) for i in range(nx + 1)])
    add_line([(i, ny) for i in range(nx + 1)])
    add_line([(0, j) for j in range(ny + 1)])
    add_line([(nx, j) for j in range(ny + 1)])
    candidates = [("v", i) for i in range(1, nx)] + [("h", j) for j in range(1, ny)]
    n_pick = int(round(spec.junction_fraction * len(candidates)))
    order = rng.permutation(len(candidates))
    for idx in sorted(order[:n_pick]):
        kind, k = candidates[idx]
        if kind == "v":
            add_line([(k, j) for j in range(ny + 1)])
        else:
            add_line([(i, k) for i in range(nx + 1)])

    directed = sorted([e for e in edges] + [(b, a) for a, b in edges])
    degree: dict[tuple[int, int], int] = {}
    for a, b in edges:
        degree[a] = degree.get(a, 0) + 1
        degree[b] = degree.get(b, 0) + 1

    def pos(node):
        return np.array([node[0] * B, node[1] * B], dtype=np.float64)

    lanes: list[LaneSegment] = []
    road_lane: dict[tuple, int] = {}
    for a, b in directed:
        d = (pos(b) - pos(a)) / B
        right = np.array([d[1], -d[0]])
        for k in range(L):
            off = right * (k + 0.5) * w
            pts = np.stack([pos(a) + d * J + off, pos(b) - d * J + off])
            lane = LaneSegment(
                id=len(lanes), centerline=resample(pts, 5.0), width=w,
                left_kind=SOLID if k == 0 else DASHED,
                right_kind=SOLID if k == L - 1 else NONE,
            )
            road_lane[(a, b, k)] = lane.id
            lanes.append(lane)

    junction_nodes = sorted(n for n, deg in degree.items() if deg >= 3)
    junction_id = {n: i for i, n in enumerate(junction_nodes)}
    junction_lanes: dict[int, list[int]] = {i: [] for i in junction_id.values()}

    # without junctions nothing links the two travel directions, so corners get a turnaround
    turnarounds = not junction_nodes
    for node in sorted(degree):
        incoming = [e for e in directed if e[1] == node]
        outgoing = [e for e in directed if e[0] == node]
        for e_in in incoming:
            for e_out in outgoing:
                uturn = e_out[1] == e_in[0]
                if uturn and not turnarounds:
                    continue
                pairs = [(0, 0)] if uturn else [(k, j) for k in range(L) for j in range(L) if abs(k - j) <= 1]
                for k, j in pairs:
                    src = lanes[road_lane[(*e_in, k)]]
                    dst = lanes[road_lane[(*e_out, j)]]
                    p0, p1 = src.centerline[-1], dst.centerline[0]
                    d_in = (pos(e_in[1]) - pos(e_in[0])) / B
                    d_out = (pos(e_out[1]) - pos(e_out[0])) / B
                    if uturn:
                        reach = d_in * J
                        pts = _bezier3(p0, p0 + reach, p1 + reach, p1, n=13)
                    elif np.allclose(d_in, d_out):
                        pts = resample(np.stack([p0, p1]), 2.0)
                    else:
                        # control point where the two lane axes intersect
                        A = np.stack([d_in, -d_out], axis=1)
                        t = np.linalg.solve(A, p1 - p0)
                        pts = _bezier(p0, p0 + d_in * t[0], p1, n=9)
                    conn = LaneSegment(id=len(lanes), centerline=pts, width=w,
                                       junction=junction_id.get(node, -1))
                    src.successors.append(conn.id)
                    conn.predecessors.append(src.id)
                    conn.successors.append(dst.id)
                    dst.predecessors.append(conn.id)
                    lanes.append(conn)
                    if node in junction_id:
                        junction_lanes[junction_id[node]].append(conn.id)

    junctions = [
        Junction(id=junction_id[n], center=tuple(pos(n)), lane_ids=tuple(junction_lanes[junction_id[n]]))
        for n in junction_nodes
    ]

    green, yellow, red = spec.light_schedule
    cycle = green + yellow + red
    lights: list[TrafficLight] = []
    for n in junction_nodes:
        offset = round(float(rng.uniform(0.0, cycle)), 1)
        for e_in in [e for e in directed if e[1] == n]:
            d = (pos(e_in[1]) - pos(e_in[0])) / B
            group = 0 if abs(d[0]) > 0.5 else 1
            heading = math.atan2(d[1], d[0])
            for k in range(L):
                lane = lanes[road_lane[(*e_in, k)]]
                end = lane.centerline[-1]
                zone = OrientedRect(float(end[0] - d[0] * 2.0), float(end[1] - d[1] * 2.0),
                                    heading, 2.0, w / 2)
                light = TrafficLight(
                    id=len(lights), lane_id=lane.id, junction=junction_id[n], stop_zone=zone,
                    schedule=(green, yellow, red), conflict_group=group,
                )
                # staggered start: group g begins g * (green + yellow) seconds later
                light.clock_us = (_to_us(offset) - group * _to_us(green + yellow)) % light.cycle_us
                lights.append(light)

    spawns = [(lid, round(lanes[lid].length / 2, 3)) for lid in sorted(road_lane.values())]
    return TownMap(lanes=lanes, junctions=junctions, traffic_lights=lights, spawn_points=spawns, spec=spec)
