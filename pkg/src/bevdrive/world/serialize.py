"""Binary town files (magic ``BVDT``) and a text dump for debugging.

Layout, little-endian::

    b"BVDT" | u16 version | header record | u32 n_lanes | lane records
    | u32 n_junctions | junction records | u32 n_lights | light records
    | u32 n_spawns | spawn records

Every record is a u32 byte length followed by its payload.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from ..geometry import OrientedRect
from .town import BOUNDARY_KINDS, Junction, LaneSegment, TownMap, TownSpec, TrafficLight

MAGIC = b"BVDT"
VERSION = 1


class TownFormatError(ValueError):
    pass


def _points(buf: io.BytesIO, pts: np.ndarray) -> None:
    pts = np.ascontiguousarray(pts, dtype="<f8")
    buf.write(struct.pack("<I", len(pts)))
    buf.write(pts.tobytes())


def _read_points(view: memoryview, off: int) -> tuple[np.ndarray, int]:
    (n,) = struct.unpack_from("<I", view, off)
    off += 4
    pts = np.frombuffer(view[off:off + 16 * n], dtype="<f8").reshape(n, 2).astype(np.float64)
    return pts, off + 16 * n


def _ints(buf: io.BytesIO, values) -> None:
    buf.write(struct.pack("<I", len(values)))
    buf.write(struct.pack(f"<{len(values)}i", *values))


def _read_ints(view: memoryview, off: int) -> tuple[list[int], int]:
    (n,) = struct.unpack_from("<I", view, off)
    off += 4
    vals = list(struct.unpack_from(f"<{n}i", view, off))
    return vals, off + 4 * n


def _record(out: io.BytesIO, payload: bytes) -> None:
    out.write(struct.pack("<I", len(payload)))
    out.write(payload)


def town_to_bytes(town: TownMap) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<H", VERSION))
    header = json.dumps({"seed": town.seed, "spec": spec_to_dict(town.spec)}, sort_keys=True).encode()
    _record(out, header)

    out.write(struct.pack("<I", len(town.lanes)))
    for lane in town.lanes:
        buf = io.BytesIO()
        buf.write(struct.pack("<idiBB", lane.id, lane.width, lane.junction,
                              BOUNDARY_KINDS.index(lane.left_kind), BOUNDARY_KINDS.index(lane.right_kind)))
        _points(buf, lane.centerline)
        _points(buf, lane.left_boundary)
        _points(buf, lane.right_boundary)
        _ints(buf, lane.successors)
        _ints(buf, lane.predecessors)
        _record(out, buf.getvalue())

    out.write(struct.pack("<I", len(town.junctions)))
    for j in town.junctions:
        buf = io.BytesIO()
        buf.write(struct.pack("<idd", j.id, *j.center))
        _ints(buf, list(j.lane_ids))
        _record(out, buf.getvalue())

    out.write(struct.pack("<I", len(town.traffic_lights)))
    for light in town.traffic_lights:
        z = light.stop_zone
        payload = struct.pack("<iiiddddddddiq", light.id, light.lane_id, light.junction,
                              z.x, z.y, z.heading, z.half_length, z.half_width,
                              *light.schedule, light.conflict_group, light.clock_us)
        _record(out, payload)

    out.write(struct.pack("<I", len(town.spawn_points)))
    for lane_id, s in town.spawn_points:
        _record(out, struct.pack("<id", lane_id, s))
    return out.getvalue()


def town_from_bytes(data: bytes) -> TownMap:
    try:
        return _parse_town(memoryview(data))
    except (struct.error, ValueError, KeyError, IndexError, TypeError) as exc:
        if isinstance(exc, TownFormatError):
            raise
        raise TownFormatError(f"corrupt town file: {exc}") from exc


def _parse_town(view: memoryview) -> TownMap:
    if bytes(view[:4]) != MAGIC:
        raise TownFormatError("not a town file (bad magic)")
    (version,) = struct.unpack_from("<H", view, 4)
    if version != VERSION:
        raise TownFormatError(f"unsupported town format version {version}")
    off = 6

    def record():
        nonlocal off
        (n,) = struct.unpack_from("<I", view, off)
        off += 4
        if off + n > len(view):
            raise TownFormatError("truncated record")
        rec = view[off:off + n]
        off += n
        return rec

    def count():
        nonlocal off
        (n,) = struct.unpack_from("<I", view, off)
        off += 4
        return n

    header = json.loads(bytes(record()))
    spec = spec_from_dict(header["spec"])

    lanes = []
    for _ in range(count()):
        rec = record()
        lid, width, junction, lk, rk = struct.unpack_from("<idiBB", rec, 0)
        o = struct.calcsize("<idiBB")
        center, o = _read_points(rec, o)
        left, o = _read_points(rec, o)
        right, o = _read_points(rec, o)
        succ, o = _read_ints(rec, o)
        pred, o = _read_ints(rec, o)
        lanes.append(LaneSegment(id=lid, centerline=center, width=width, successors=succ,
                                 predecessors=pred, left_boundary=left, right_boundary=right,
                                 left_kind=BOUNDARY_KINDS[lk], right_kind=BOUNDARY_KINDS[rk],
                                 junction=junction))
    junctions = []
    for _ in range(count()):
        rec = record()
        jid, cx, cy = struct.unpack_from("<idd", rec, 0)
        ids, _ = _read_ints(rec, struct.calcsize("<idd"))
        junctions.append(Junction(id=jid, center=(cx, cy), lane_ids=tuple(ids)))
    lights = []
    for _ in range(count()):
        vals = struct.unpack_from("<iiiddddddddiq", record(), 0)
        lights.append(TrafficLight(
            id=vals[0], lane_id=vals[1], junction=vals[2],
            stop_zone=OrientedRect(*vals[3:8]), schedule=tuple(vals[8:11]),
            conflict_group=vals[11], clock_us=vals[12],
        ))
    spawns = []
    for _ in range(count()):
        lid, s = struct.unpack_from("<id", record(), 0)
        spawns.append((lid, s))
    if off != len(view):
        raise TownFormatError(f"{len(view) - off} trailing bytes")
    return TownMap(lanes=lanes, junctions=junctions, traffic_lights=lights,
                   spawn_points=spawns, spec=spec, seed=header["seed"])


def save_town(town: TownMap, path) -> None:
    with open(path, "wb") as fh:
        fh.write(town_to_bytes(town))


def load_town(path) -> TownMap:
    with open(path, "rb") as fh:
        return town_from_bytes(fh.read())


def dump_text(town: TownMap) -> str:
    lines = [f"town seed={town.seed} spec={spec_to_dict(town.spec)}",
             f"{len(town.lanes)} lanes, {len(town.junctions)} junctions, "
             f"{len(town.traffic_lights)} traffic lights, {len(town.spawn_points)} spawn points"]
    for lane in town.lanes:
        a, b = lane.centerline[0], lane.centerline[-1]
        lines.append(
            f"lane {lane.id:4d} len={lane.length:7.2f} w={lane.width:.1f} junction={lane.junction:3d} "
            f"({a[0]:.1f},{a[1]:.1f})->({b[0]:.1f},{b[1]:.1f}) "
            f"left={lane.left_kind} right={lane.right_kind} succ={lane.successors} pred={lane.predecessors}"
        )
    for light in town.traffic_lights:
        z = light.stop_zone
        lines.append(
            f"light {light.id:3d} lane={light.lane_id} junction={light.junction} group={light.conflict_group} "
            f"zone=({z.x:.1f},{z.y:.1f},{z.heading:.2f}) schedule={light.schedule} "
            f"clock={light.clock:.1f}s phase={light.phase}"
        )
    for i, (lid, s) in enumerate(town.spawn_points):
        lines.append(f"spawn {i:3d} lane={lid} s={s:.2f}")
    return "\n".join(lines) + "\n"


def spec_to_dict(spec: TownSpec) -> dict:
    return {
        "layout": spec.layout, "lanes": spec.lanes, "blocks": list(spec.blocks),
        "block_size": spec.block_size, "junction_fraction": spec.junction_fraction,
        "lane_width": spec.lane_width, "straight_length": spec.straight_length,
        "light_schedule": list(spec.light_schedule), "geo_origin": list(spec.geo_origin),
    }


def spec_from_dict(d: dict) -> TownSpec:
    return TownSpec(
        layout=d["layout"], lanes=d["lanes"], blocks=tuple(d["blocks"]),
        block_size=d["block_size"], junction_fraction=d["junction_fraction"],
        lane_width=d["lane_width"], straight_length=d["straight_length"],
        light_schedule=tuple(d["light_schedule"]), geo_origin=tuple(d["geo_origin"]),
    )
