"""The simulation substrate: traffic lights, scripted traffic, pedestrians and infractions."""

from __future__ import annotations

import copy
import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from ..geometry import OrientedRect, convex_overlap, points_in_convex, rect_corners
from .dynamics import EGO, PEDESTRIAN, VEHICLE, ActorState, step_dynamics
from .town import GREEN, RED, YELLOW, TownMap

COLLISION_VEHICLE = "collision_vehicle"
COLLISION_PEDESTRIAN = "collision_pedestrian"
COLLISION_STATIC = "collision_static"
RED_LIGHT = "red_light"
OFF_ROAD = "off_road"
ROUTE_DEVIATION = "route_deviation"
TIMEOUT = "timeout"
INFRACTION_KINDS = (COLLISION_VEHICLE, COLLISION_PEDESTRIAN, COLLISION_STATIC,
                    RED_LIGHT, OFF_ROAD, ROUTE_DEVIATION, TIMEOUT)

DT = 0.1


@dataclass(frozen=True)
class InfractionEvent:
    kind: str
    time: float

    def __post_init__(self):
        if self.kind not in INFRACTION_KINDS:
            raise ValueError(f"unknown infraction kind {self.kind!r}")
        if self.time < 0:
            raise ValueError("infraction time must be non-negative")


@dataclass
class WorldConfig:
    n_vehicles: int = 4
    n_pedestrians: int = 4
    dt: float = DT
    vehicle_speed: float = 5.0
    pedestrian_speed: float = 1.2
    crossing_rate: float = 0.02
    # count yellow as an active stop phase
    yellow_is_active: bool = False


@dataclass(frozen=True)
class WorldSnapshot:
    """Immutable view of one instant, enough for rendering and infraction checks."""

    time: float
    ego: ActorState
    vehicles: tuple[ActorState, ...]
    pedestrians: tuple[ActorState, ...]
    red_lights: tuple[int, ...]
    ego_in_active_zone: bool
    town: TownMap = field(repr=False, compare=False)
    static_obstacles: tuple[OrientedRect, ...] = ()


@dataclass
class _ScriptedVehicle:
    lane_id: int
    s: float
    speed: float
    half_length: float = 2.25
    half_width: float = 1.0


@dataclass
class _Pedestrian:
    origin: np.ndarray
    direction: np.ndarray
    cross: np.ndarray
    length: float
    s: float
    sign: float
    side: float = 0.0
    crossing: int = 0


class World:
    """One simulation instance. Single-threaded; all randomness comes from ``self.rng``."""

    def __init__(self, town: TownMap, seed: int = 0, config: WorldConfig | None = None,
                 ego_spawn: tuple[int, float] | None = None):
        self.town = town
        self.config = config or WorldConfig()
        self.rng = np.random.default_rng(seed)
        self.time = 0.0
        self.steps = 0
        self.lights = copy.deepcopy(town.traffic_lights)
        self._lights_by_lane = {light.lane_id: light for light in self.lights}
        self.static_obstacles: list[OrientedRect] = []
        lane_id, s = ego_spawn if ego_spawn is not None else town.spawn_points[0]
        lane = town.lane(lane_id)
        p = lane.point_at(s)
        self.ego = ActorState(float(p[0]), float(p[1]), lane.heading_at(s), kind=EGO)
        self.vehicles: list[_ScriptedVehicle] = []
        self.pedestrians: list[_Pedestrian] = []
        self._populate()

    # -- population -----------------------------------------------------

    def _road_lanes(self):
        return [lane for lane in self.town.lanes if lane.junction == -1 and lane.length > 12.0]

    def _populate(self) -> None:
        lanes = self._road_lanes()
        ego_xy = np.array([self.ego.x, self.ego.y])
        tries = 0
        while len(self.vehicles) < self.config.n_vehicles and tries < 200 and lanes:
            tries += 1
            lane = lanes[int(self.rng.integers(len(lanes)))]
            s = float(self.rng.uniform(3.0, lane.length - 3.0))
            p = lane.point_at(s)
            if np.linalg.norm(p - ego_xy) < 15.0:
                continue
            if any(np.linalg.norm(self._vehicle_xy(v) - p) < 8.0 for v in self.vehicles):
                continue
            self.vehicles.append(_ScriptedVehicle(lane.id, s, self.config.vehicle_speed * 0.5))
        outer = [lane for lane in lanes if lane.right_kind == "solid"]
        for _ in range(self.config.n_pedestrians if outer else 0):
            lane = outer[int(self.rng.integers(len(outer)))]
            self.pedestrians.append(self._make_pedestrian(lane))

    def _make_pedestrian(self, lane) -> _Pedestrian:
        a, b = lane.right_boundary[0], lane.right_boundary[-1]
        d = (b - a) / np.linalg.norm(b - a)
        right = np.array([d[1], -d[0]])
        spec = self.town.spec
        road_width = spec.lanes * spec.lane_width * (1 if spec.layout == "straight" else 2)
        origin = a + right * 1.5
        length = float(np.linalg.norm(b - a))
        return _Pedestrian(origin=origin, direction=d, cross=-right * (road_width + 3.0),
                           length=length, s=float(self.rng.uniform(0.0, length)),
                           sign=1.0 if self.rng.random() < 0.5 else -1.0)

    def _vehicle_xy(self, v: _ScriptedVehicle) -> np.ndarray:
        return self.town.lane(v.lane_id).point_at(v.s)

    # -- state views ----------------------------------------------------

    def vehicle_states(self) -> tuple[ActorState, ...]:
        out = []
        for v in self.vehicles:
            lane = self.town.lane(v.lane_id)
            p = lane.point_at(v.s)
            out.append(ActorState(float(p[0]), float(p[1]), lane.heading_at(v.s), speed=v.speed,
                                  half_length=v.half_length, half_width=v.half_width, kind=VEHICLE))
        return tuple(out)

    def pedestrian_states(self) -> tuple[ActorState, ...]:
        out = []
        for p in self.pedestrians:
            xy = p.origin + p.direction * p.s + p.cross * p.side
            heading = math.atan2(p.direction[1], p.direction[0]) if not p.crossing else math.atan2(
                p.cross[1] * p.crossing, p.cross[0] * p.crossing)
            out.append(ActorState(float(xy[0]), float(xy[1]), heading,
                                  speed=self.config.pedestrian_speed, half_length=0.3, half_width=0.3,
                                  kind=PEDESTRIAN))
        return tuple(out)

    def red_light_ids(self) -> tuple[int, ...]:
        return tuple(light.id for light in self.lights if light.phase == RED)

    def snapshot(self) -> WorldSnapshot:
        return WorldSnapshot(
            time=self.time, ego=self.ego, vehicles=self.vehicle_states(),
            pedestrians=self.pedestrian_states(), red_lights=self.red_light_ids(),
            ego_in_active_zone=ego_in_active_stop_zone(self), town=self.town,
            static_obstacles=tuple(self.static_obstacles),
        )

    def state_bytes(self) -> bytes:
        parts = [struct.pack("<qd", self.steps, self.time)]
        e = self.ego
        parts.append(struct.pack("<9d", e.x, e.y, e.heading, e.speed, e.lateral_speed,
                                 e.steer, e.throttle, e.brake, e.gear))
        for v in self.vehicles:
            parts.append(struct.pack("<idd", v.lane_id, v.s, v.speed))
        for p in self.pedestrians:
            parts.append(struct.pack("<dddi", p.s, p.sign, p.side, p.crossing))
        for light in self.lights:
            parts.append(struct.pack("<q", light.clock_us))
        return b"".join(parts)

    def state_hash(self) -> str:
        return hashlib.sha256(self.state_bytes()).hexdigest()

    # -- stepping -------------------------------------------------------

    def step(self, ego_action) -> list[InfractionEvent]:
        """Advance one tick. ``ego_action`` is (steer, throttle, brake)."""
        prev = self.snapshot()
        dt = self.config.dt
        self.ego = step_dynamics(self.ego, ego_action, dt)
        self._step_vehicles(dt)
        self._step_pedestrians(dt)
        tick_traffic_lights(self, dt)
        self.steps += 1
        self.time = round(self.steps * dt, 9)
        return detect_infractions(prev, self.snapshot())

    def _step_vehicles(self, dt: float) -> None:
        states = self.vehicle_states()
        others = list(states) + [self.ego] + list(self.pedestrian_states())
        for i, v in enumerate(self.vehicles):
            me = states[i]
            lane = self.town.lane(v.lane_id)
            desired = self.config.vehicle_speed
            c, s_ = math.cos(me.heading), math.sin(me.heading)
            for j, o in enumerate(others):
                if j == i:
                    continue
                dx, dy = o.x - me.x, o.y - me.y
                fwd = c * dx + s_ * dy
                lat = -s_ * dx + c * dy
                if 0.0 < fwd < 14.0 and abs(lat) < 2.0:
                    gap = fwd - me.half_length - o.half_length
                    desired = min(desired, max(0.0, 0.8 * (gap - 2.0)))
            light = self._lights_by_lane.get(v.lane_id)
            if light is not None and light.phase != GREEN:
                to_stop = lane.length - v.half_length - 0.5 - v.s
                brake_dist = v.speed ** 2 / (2 * 6.0)
                if to_stop > -0.5 and (light.phase == RED or to_stop > brake_dist):
                    desired = min(desired, max(0.0, 0.8 * to_stop))
            if desired > v.speed:
                v.speed = min(desired, v.speed + 2.0 * dt)
            else:
                v.speed = max(desired, v.speed - 6.0 * dt)
            v.s += v.speed * dt
            while v.s > lane.length:
                v.s -= lane.length
                if not lane.successors:
                    # dead end: respawn at the start of a random road lane
                    lanes = self._road_lanes()
                    lane = lanes[int(self.rng.integers(len(lanes)))]
                    v.s = 0.0
                else:
                    lane = self.town.lane(lane.successors[int(self.rng.integers(len(lane.successors)))])
                v.lane_id = lane.id

    def _step_pedestrians(self, dt: float) -> None:
        speed = self.config.pedestrian_speed
        for p in self.pedestrians:
            if p.crossing:
                width = float(np.linalg.norm(p.cross))
                p.side += p.crossing * speed * dt / width
                if p.side >= 1.0 or p.side <= 0.0:
                    p.side = min(max(p.side, 0.0), 1.0)
                    p.crossing = 0
                continue
            p.s += p.sign * speed * dt
            if p.s < 0.0 or p.s > p.length:
                p.s = min(max(p.s, 0.0), p.length)
                p.sign = -p.sign
            if self.rng.random() < self.config.crossing_rate * dt:
                p.crossing = 1 if p.side == 0.0 else -1


def tick_traffic_lights(world: World, dt: float) -> World:
    """Advance every light's phase clock by ``dt`` seconds."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    for light in world.lights:
        light.advance(dt)
    return world


def _active_phases(world) -> tuple[str, ...]:
    yellow = getattr(getattr(world, "config", None), "yellow_is_active", False)
    return (RED, YELLOW) if yellow else (RED,)


def ego_in_active_stop_zone(world: World) -> bool:
    """True iff the ego centre lies in the stop zone of a light in an active (red) phase."""
    active = _active_phases(world)
    ex, ey = world.ego.x, world.ego.y
    for light in world.lights:
        if light.phase in active and light.stop_zone.contains(ex, ey):
            return True
    return False


def _footprint(a: ActorState) -> np.ndarray:
    return rect_corners(a.x, a.y, a.heading, a.half_length, a.half_width)


def actors_overlap(a: ActorState, b: ActorState) -> bool:
    if math.hypot(a.x - b.x, a.y - b.y) > (math.hypot(a.half_length, a.half_width)
                                          + math.hypot(b.half_length, b.half_width)):
        return False
    return convex_overlap(_footprint(a), _footprint(b))


def on_road(town: TownMap, x: float, y: float) -> bool:
    quads, _ = town.lane_quads()
    if len(quads) == 0:
        return False
    lo = quads.min(axis=1)
    hi = quads.max(axis=1)
    near = (lo[:, 0] <= x) & (x <= hi[:, 0]) & (lo[:, 1] <= y) & (y <= hi[:, 1])
    if not near.any():
        return False
    return bool(points_in_convex(quads[near], (x, y)).any())


def detect_infractions(prev: WorldSnapshot, cur: WorldSnapshot) -> list[InfractionEvent]:
    """Ego infractions between two consecutive snapshots, at most one per kind."""
    events: list[InfractionEvent] = []
    ego = cur.ego
    t = cur.time
    if any(actors_overlap(ego, v) for v in cur.vehicles):
        events.append(InfractionEvent(COLLISION_VEHICLE, t))
    if any(actors_overlap(ego, p) for p in cur.pedestrians):
        events.append(InfractionEvent(COLLISION_PEDESTRIAN, t))
    for obs in cur.static_obstacles:
        if convex_overlap(_footprint(ego), obs.corners()):
            events.append(InfractionEvent(COLLISION_STATIC, t))
            break
    lights = {light.id: light for light in cur.town.traffic_lights}
    for light_id in prev.red_lights:
        zone = lights[light_id].stop_zone
        u0, v0 = zone.to_local(prev.ego.x, prev.ego.y)
        u1, v1 = zone.to_local(ego.x, ego.y)
        if u0 <= zone.half_length < u1 and min(abs(v0), abs(v1)) <= zone.half_width:
            events.append(InfractionEvent(RED_LIGHT, t))
            break
    if on_road(cur.town, prev.ego.x, prev.ego.y) and not on_road(cur.town, ego.x, ego.y):
        events.append(InfractionEvent(OFF_ROAD, t))
    return events
