"""Missions, waypoint sets and route-predictor training data.

Dataset files are a record stream::

    b"BVDR" | u16 version | u32 n | header JSON (town table)
    records: u32 payload length | payload

Each payload holds a town index (u32), the ego pose (3 x f64), the five
ego-relative waypoints (10 x f64) and the 192x192 oracle mask packed to bits.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from ..bev.raster import GRID
from ..bev.render import render_static_channels
from ..geometry import heading_at, interpolate
from ..world.serialize import spec_from_dict, spec_to_dict
from ..world.town import TownMap, TownSpec, generate_town
from .masks import render_route_mask
from .planner import PlanningError, Route, plan_shortest_path, route_polyline

WAYPOINT_SPACING = 25.0
N_WAYPOINTS = 5
TOY = 48
POOL = GRID // TOY

MAGIC = b"BVDR"
VERSION = 1
_RECORD = struct.Struct("<I3d10d")
_MASK_BYTES = GRID * GRID // 8


class DatasetFormatError(ValueError):
    pass


@dataclass
class Mission:
    """A drive along ``route`` with sparse target waypoints every 25 m of arclength."""

    start: tuple[int, float]
    route: Route
    waypoint_s: np.ndarray
    waypoints: np.ndarray

    def lane_position(self, s: float) -> tuple[int, float]:
        """Lane id and lane arclength at route arclength ``s``."""
        acc = 0.0
        for lane_id, a, b in self.route.lane_path:
            if s <= acc + (b - a) + 1e-9:
                return lane_id, a + max(0.0, s - acc)
            acc += b - a
        lane_id, _, b = self.route.lane_path[-1]
        return lane_id, b


def mission_waypoints(route: Route, spacing: float = WAYPOINT_SPACING) -> tuple[np.ndarray, np.ndarray]:
    """Arclengths and world points every ``spacing`` metres, always ending at the route's end."""
    s = np.arange(spacing, route.length, spacing)
    if len(s) == 0 or route.length - s[-1] > 1e-6:
        s = np.append(s, route.length)
    return s, interpolate(route.polyline, s, route.cum)


def random_mission(town: TownMap, rng: np.random.Generator, min_length: float = 100.0,
                   start: tuple[int, float] | None = None) -> Mission:
    """Random walk over lane successors until the drive covers ``min_length`` metres."""
    if start is None:
        lane_id = int(rng.choice(town.lane_ids))
        start = (lane_id, float(rng.uniform(0.0, town.lane(lane_id).length)))
    lane_id, s0 = start
    lane_path = [(lane_id, s0, town.lane(lane_id).length)]
    total = town.lane(lane_id).length - s0
    while total < min_length:
        succ = sorted(town.lane(lane_path[-1][0]).successors)
        if not succ:
            break
        nxt = int(succ[rng.integers(len(succ))])
        lane_path.append((nxt, 0.0, town.lane(nxt).length))
        total += town.lane(nxt).length
    if total > min_length and len(lane_path) > 1:
        lid, a, b = lane_path[-1]
        lane_path[-1] = (lid, a, b - (total - min_length))
    route = Route(lane_path=lane_path, polyline=route_polyline(town, lane_path))
    ws, wp = mission_waypoints(route)
    return Mission(start=start, route=route, waypoint_s=ws, waypoints=wp)


def to_ego_frame(ego_pose, points) -> np.ndarray:
    """World points expressed in the ego frame (x forward, y left)."""
    ex, ey, h = ego_pose
    d = np.asarray(points, dtype=np.float64).reshape(-1, 2) - (ex, ey)
    c, s = math.cos(h), math.sin(h)
    return np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1]], axis=1)


def next_waypoints(waypoints_world: np.ndarray, ego_pose, n: int = N_WAYPOINTS) -> np.ndarray:
    """The first ``n`` remaining waypoints in the ego frame, padded by repeating the last."""
    wp = np.asarray(waypoints_world, dtype=np.float64).reshape(-1, 2)[:n]
    if len(wp) == 0:
        raise ValueError("no remaining waypoints")
    if len(wp) < n:
        wp = np.vstack([wp, np.repeat(wp[-1:], n - len(wp), axis=0)])
    return to_ego_frame(ego_pose, wp)


def downsample(mask: np.ndarray, pool: int = POOL) -> np.ndarray:
    """Max-pool the trailing two axes by ``pool``."""
    *lead, h, w = mask.shape
    return mask.reshape(*lead, h // pool, pool, w // pool, pool).max(axis=(-3, -1))


@dataclass
class RouteSample:
    town_id: int
    pose: np.ndarray
    waypoints: np.ndarray
    mask: np.ndarray


def sample_scene(town: TownMap, town_id: int, rng: np.random.Generator,
                 pose_noise: tuple[float, float] = (0.3, 0.05)) -> RouteSample:
    """One (pose, five waypoints, oracle route mask) triple from a random mission."""
    while True:
        mission = random_mission(town, rng)
        if mission.route.length < 12.0:
            continue
        s = float(rng.uniform(0.0, mission.route.length - 10.0))
        lane_pos = mission.lane_position(s)
        p = interpolate(mission.route.polyline, s, mission.route.cum)
        h = heading_at(mission.route.polyline, s, mission.route.cum)
        lateral = float(np.clip(rng.normal(0.0, pose_noise[0]), -1.0, 1.0))
        pose = np.array([p[0] - math.sin(h) * lateral, p[1] + math.cos(h) * lateral,
                         h + float(np.clip(rng.normal(0.0, pose_noise[1]), -0.2, 0.2))])
        ahead = mission.waypoints[mission.waypoint_s > s + 1.0]
        if len(ahead) == 0:
            continue
        try:
            oracle = plan_shortest_path(town, lane_pos, ahead[:N_WAYPOINTS])
        except PlanningError:
            continue
        mask = render_route_mask(oracle, pose)
        if not mask.any():
            continue
        return RouteSample(town_id, pose, next_waypoints(ahead, pose), mask)


def training_towns(seed: int, n_grid: int = 24, n_straight: int = 4) -> list[tuple[int, TownSpec]]:
    """A varied town table: grid towns with random sizes plus a few straight roads."""
    rng = np.random.default_rng(seed)
    table = []
    for i in range(n_grid):
        spec = TownSpec(lanes=int(rng.integers(1, 3)), blocks=(int(rng.integers(1, 4)), int(rng.integers(1, 4))),
                        block_size=float(rng.choice([40.0, 50.0, 60.0, 70.0])),
                        junction_fraction=float(rng.choice([0.5, 1.0])))
        table.append((seed * 1000 + i, spec))
    for i in range(n_straight):
        table.append((seed * 1000 + n_grid + i, TownSpec.straight(lanes=int(rng.integers(1, 3)))))
    return table


def generate_samples(n: int, seed: int, towns: list[tuple[int, TownSpec]]) -> list[RouteSample]:
    rng = np.random.default_rng(seed)
    maps = [generate_town(s, spec) for s, spec in towns]
    out = []
    for _ in range(n):
        tid = int(rng.integers(len(maps)))
        out.append(sample_scene(maps[tid], tid, rng))
    return out


def sample_arrays(samples: list[RouteSample], towns: list[tuple[int, TownSpec]]):
    """Predictor inputs ``(masks (N,2,48,48), waypoints (N,5,2))`` and targets ``(N,48,48)``."""
    maps: dict[int, TownMap] = {}
    x = np.zeros((len(samples), 2, TOY, TOY), dtype=np.float32)
    y = np.zeros((len(samples), TOY, TOY), dtype=np.uint8)
    wp = np.zeros((len(samples), N_WAYPOINTS, 2), dtype=np.float32)
    for i, smp in enumerate(samples):
        if smp.town_id not in maps:
            maps[smp.town_id] = generate_town(*towns[smp.town_id])
        road, lines = render_static_channels(maps[smp.town_id], smp.pose)
        x[i, 0] = downsample(road)
        x[i, 1] = downsample(lines)
        y[i] = downsample(smp.mask)
        wp[i] = smp.waypoints
    return (x, wp), y


def save_dataset(path, samples: list[RouteSample], towns: list[tuple[int, TownSpec]]) -> None:
    header = json.dumps({"towns": [{"seed": s, "spec": spec_to_dict(spec)} for s, spec in towns]}).encode()
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC + struct.pack("<HII", VERSION, len(samples), len(header)) + header)
        for smp in samples:
            payload = _RECORD.pack(smp.town_id, *map(float, smp.pose), *map(float, smp.waypoints.reshape(-1)))
            payload += np.packbits(smp.mask.astype(bool)).tobytes()
            f.write(struct.pack("<I", len(payload)) + payload)
    os.replace(tmp, path)


def load_dataset(path) -> tuple[list[RouteSample], list[tuple[int, TownSpec]]]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise DatasetFormatError("not a route dataset (bad magic)")
    version, n, hlen = struct.unpack_from("<HII", data, 4)
    if version != VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version}")
    pos = 14
    header = json.loads(data[pos:pos + hlen])
    pos += hlen
    towns = [(t["seed"], spec_from_dict(t["spec"])) for t in header["towns"]]
    samples = []
    for _ in range(n):
        if pos + 4 > len(data):
            raise DatasetFormatError("truncated dataset")
        (length,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if length != _RECORD.size + _MASK_BYTES or pos + length > len(data):
            raise DatasetFormatError("corrupt record")
        vals = _RECORD.unpack_from(data, pos)
        bits = np.frombuffer(data, dtype=np.uint8, count=_MASK_BYTES, offset=pos + _RECORD.size)
        mask = np.unpackbits(bits).reshape(GRID, GRID)
        samples.append(RouteSample(vals[0], np.array(vals[1:4]), np.array(vals[4:14]).reshape(5, 2), mask))
        pos += length
    if pos != len(data):
        raise DatasetFormatError("trailing bytes after last record")
    return samples, towns

