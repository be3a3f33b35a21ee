import dataclasses
import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bevdrive.geometry import OrientedRect
from bevdrive.world import (
    COLLISION_VEHICLE,
    GREEN,
    OFF_ROAD,
    RED,
    RED_LIGHT,
    YELLOW,
    ActorState,
    InfractionEvent,
    TownSpec,
    TownSpecError,
    World,
    WorldConfig,
    WorldSnapshot,
    actors_overlap,
    detect_infractions,
    dump_text,
    ego_in_active_stop_zone,
    generate_town,
    load_town,
    on_road,
    save_town,
    step_dynamics,
    tick_traffic_lights,
    town_from_bytes,
    town_to_bytes,
)
from bevdrive.world.serialize import TownFormatError
from bevdrive.world.town import TrafficLight


@pytest.fixture(scope="module")
def town():
    return generate_town(0, TownSpec())


def reachable(town, start):
    seen, queue = {start}, deque([start])
    while queue:
        for nxt in town.lane(queue.popleft()).successors:
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return seen


# -- towns --------------------------------------------------------------

def test_two_lane_ring_is_reachable_from_spawn_zero():
    town = generate_town(42, TownSpec.ring(lanes=2))
    assert reachable(town, town.spawn_points[0][0]) == set(town.lane_ids)


def test_no_junctions_means_no_lights_and_a_single_loop():
    town = generate_town(5, dataclasses.replace(TownSpec(), junction_fraction=0.0))
    assert town.traffic_lights == [] and town.junctions == []

    def turnaround(lane):
        d0 = lane.centerline[1] - lane.centerline[0]
        d1 = lane.centerline[-1] - lane.centerline[-2]
        return float(np.dot(d0, d1)) < 0.0

    # ignoring the corner turnarounds, each travel direction is one closed loop
    forward = {lane.id: [s for s in lane.successors if not turnaround(town.lane(s))]
               for lane in town.lanes if not turnaround(lane)}
    assert all(len(v) == 1 for v in forward.values())
    start = next(iter(forward))
    seen, cur = [start], forward[start][0]
    while cur != start:
        seen.append(cur)
        cur = forward[cur][0]
    assert len(seen) == len(forward) // 2


@pytest.mark.parametrize("spec", [TownSpec(), TownSpec(blocks=(3, 2), lanes=2), TownSpec.straight(lanes=2)])
def test_town_invariants(spec):
    town = generate_town(1, spec)
    ids = set(town.lane_ids)
    for lane in town.lanes:
        assert lane.width > 0
        assert set(lane.successors) <= ids and set(lane.predecessors) <= ids
        assert len(lane.left_boundary) == len(lane.centerline) == len(lane.right_boundary)
    covered = set()
    for lane_id, _ in town.spawn_points:
        covered |= reachable(town, lane_id)
    assert covered == ids
    for light in town.traffic_lights:
        assert all(d > 0 for d in light.schedule)
        assert light.stop_zone.half_length > 0 and light.stop_zone.half_width > 0


def test_generation_is_deterministic():
    spec = TownSpec(blocks=(2, 3))
    assert town_to_bytes(generate_town(9, spec)) == town_to_bytes(generate_town(9, spec))


@pytest.mark.parametrize("spec", [TownSpec(lanes=0), TownSpec(blocks=(0, 2)), TownSpec(junction_fraction=1.5),
                                  TownSpec(layout="spiral")])
def test_invalid_specs_are_rejected(spec):
    with pytest.raises(TownSpecError):
        generate_town(0, spec)


def test_serialization_round_trip(tmp_path, town):
    path = tmp_path / "t.bvdt"
    save_town(town, path)
    data = path.read_bytes()
    assert data[:4] == b"BVDT"
    loaded = load_town(path)
    assert town_to_bytes(loaded) == data
    assert dump_text(loaded) == dump_text(town)


def test_serialization_rejects_corruption(town):
    data = town_to_bytes(town)
    with pytest.raises(TownFormatError):
        town_from_bytes(b"NOPE" + data[4:])
    with pytest.raises(TownFormatError):
        town_from_bytes(data[:-7])
    with pytest.raises(TownFormatError):
        town_from_bytes(data[:4] + b"\xff\xff" + data[6:])


# -- dynamics -------------------------------------------------------------

def test_zero_velocity_fixed_point():
    s = ActorState(1.0, 2.0, 0.3)
    out = step_dynamics(s, (0.5, 0.0, 0.0), 0.1)
    assert (out.x, out.y, out.heading, out.speed) == (1.0, 2.0, 0.3, 0.0)


def test_straight_line_advance_uses_start_speed():
    out = step_dynamics(ActorState(0.0, 0.0, 0.0, speed=5.0), (0.0, 1.0, 0.0), 0.1)
    assert out.x == pytest.approx(0.5) and out.y == pytest.approx(0.0)
    assert out.speed == pytest.approx(5.3)


def test_full_brake_decelerates_to_zero_monotonically():
    s = ActorState(0.0, 0.0, 0.0, speed=5.0)
    speeds = [s.speed]
    for _ in range(20):
        s = step_dynamics(s, (0.0, 0.0, 1.0), 0.1)
        speeds.append(s.speed)
    assert all(b <= a for a, b in zip(speeds, speeds[1:]))
    assert speeds[-1] == 0.0


def test_out_of_bounds_controls_are_clamped():
    out = step_dynamics(ActorState(0.0, 0.0, 0.0, speed=2.0), (3.0, 2.0, -1.0), 0.1)
    assert out.steer == 1.0 and out.throttle == 1.0 and out.brake == 0.0


def test_dt_must_be_positive():
    with pytest.raises(ValueError):
        step_dynamics(ActorState(0, 0, 0), (0, 0, 0), 0.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 10), st.floats(-1, 1), st.floats(0, 1), st.floats(-math.pi, math.pi))
def test_no_throttle_never_speeds_up(speed, steer, brake, heading):
    out = step_dynamics(ActorState(0.0, 0.0, heading, speed=speed), (steer, 0.0, brake), 0.1)
    assert 0.0 <= out.speed <= speed
    assert -math.pi <= out.heading <= math.pi


# -- traffic lights -------------------------------------------------------------

def _light(clock_s, schedule=(8.0, 2.0, 10.0)):
    zone = OrientedRect(0.0, 0.0, 0.0, 2.0, 2.0)
    return TrafficLight(0, 0, 0, zone, schedule, 0, int(round(clock_s * 1e6)))


def test_red_rolls_over_into_green():
    light = _light(19.9)
    assert light.phase == RED
    light.advance(0.2)
    assert light.phase == GREEN and light.clock == pytest.approx(0.1)


def test_full_cycle_is_identity(town):
    world = World(town, 0, WorldConfig(0, 0))
    before = [(lt.phase, lt.clock_us) for lt in world.lights]
    tick_traffic_lights(world, 20.0)
    assert [(lt.phase, lt.clock_us) for lt in world.lights] == before


def test_phase_order_green_yellow_red():
    light = _light(0.0)
    seen = []
    for _ in range(210):
        if not seen or seen[-1] != light.phase:
            seen.append(light.phase)
        light.advance(0.1)
    assert seen == [GREEN, YELLOW, RED, GREEN]


def test_conflict_groups_never_green_together(town):
    world = World(town, 0, WorldConfig(0, 0))
    rng = np.random.default_rng(0)
    for _ in range(100_000):
        tick_traffic_lights(world, float(rng.choice([0.1, 0.3, 1.7, 2.5])))
        green = {}
        for light in world.lights:
            if light.phase == GREEN:
                green.setdefault(light.junction, set()).add(light.conflict_group)
        assert all(len(groups) <= 1 for groups in green.values())


def test_tick_rejects_non_positive_dt(town):
    with pytest.raises(ValueError):
        tick_traffic_lights(World(town, 0, WorldConfig(0, 0)), 0.0)


def _set_phase(light, phase):
    g, y, _ = light.schedule
    light.clock_us = {GREEN: 0, YELLOW: int(g * 1e6), RED: int((g + y) * 1e6)}[phase]


def test_active_stop_zone(town):
    world = World(town, 0, WorldConfig(0, 0))
    light = world.lights[0]
    z = light.stop_zone
    world.ego = ActorState(z.x, z.y, z.heading)
    _set_phase(light, RED)
    assert ego_in_active_stop_zone(world)
    _set_phase(light, GREEN)
    assert not ego_in_active_stop_zone(world)
    _set_phase(light, RED)
    # one metre beyond the long edge
    off = z.half_width + 1.0
    world.ego = ActorState(z.x - math.sin(z.heading) * off, z.y + math.cos(z.heading) * off, z.heading)
    assert not ego_in_active_stop_zone(world)


def test_yellow_counts_only_when_configured(town):
    for flag, expected in ((False, False), (True, True)):
        world = World(town, 0, WorldConfig(0, 0, yellow_is_active=flag))
        light = world.lights[0]
        world.ego = ActorState(light.stop_zone.x, light.stop_zone.y, light.stop_zone.heading)
        _set_phase(light, YELLOW)
        assert ego_in_active_stop_zone(world) is expected


# -- infractions ---------------------------------------------------------------

def _snap(town, ego, vehicles=(), red=(), t=0.1):
    return WorldSnapshot(t, ego, tuple(vehicles), (), tuple(red), False, town)


def test_overlap_gives_one_vehicle_collision(town):
    ego = ActorState(0.0, 0.0, 0.0)
    other = ActorState(1.0, 0.5, 0.2, kind="vehicle")
    events = detect_infractions(_snap(town, ego, t=0.0), _snap(town, ego, [other, other]))
    assert [e.kind for e in events] == [COLLISION_VEHICLE]
    assert actors_overlap(ego, other) and actors_overlap(other, ego)


def test_stationary_in_red_zone_is_not_a_red_light_infraction(town):
    z = town.traffic_lights[0].stop_zone
    ego = ActorState(z.x, z.y, z.heading)
    lid = town.traffic_lights[0].id
    assert detect_infractions(_snap(town, ego, red=[lid], t=0.0), _snap(town, ego, red=[lid])) == []


def test_crossing_far_edge_while_red(town):
    light = town.traffic_lights[0]
    z = light.stop_zone
    c, s = math.cos(z.heading), math.sin(z.heading)
    before = ActorState(z.x + c * (z.half_length - 0.2), z.y + s * (z.half_length - 0.2), z.heading)
    after = ActorState(z.x + c * (z.half_length + 0.2), z.y + s * (z.half_length + 0.2), z.heading)
    events = detect_infractions(_snap(town, before, red=[light.id], t=0.0), _snap(town, after, red=[light.id]))
    assert [e.kind for e in events] == [RED_LIGHT]
    assert detect_infractions(_snap(town, before, t=0.0), _snap(town, after)) == []


def test_leaving_the_road_by_a_tenth_of_a_metre():
    town = generate_town(0, TownSpec.straight(length=100.0))
    lane = town.lanes[0]
    edge = lane.right_boundary[len(lane.right_boundary) // 2]
    centre = lane.centerline[len(lane.centerline) // 2]
    outward = (edge - centre) / np.linalg.norm(edge - centre)
    inside = ActorState(*(centre + outward * 0.5), lane.heading_at(50.0))
    outside = ActorState(*(edge + outward * 0.1), lane.heading_at(50.0))
    assert on_road(town, inside.x, inside.y) and not on_road(town, outside.x, outside.y)
    events = detect_infractions(_snap(town, inside, t=0.0), _snap(town, outside))
    assert [e.kind for e in events] == [OFF_ROAD]


def test_infraction_event_validation():
    with pytest.raises(ValueError):
        InfractionEvent("speeding", 0.0)
    with pytest.raises(ValueError):
        InfractionEvent(RED_LIGHT, -1.0)


# -- whole-world determinism ---------------------------------------------------------

def _rollout(town, seed, actions):
    world = World(town, seed, WorldConfig(4, 4))
    hashes, times = [], []
    for a in actions:
        events = world.step(a)
        times += [e.time for e in events]
        hashes.append(world.state_hash())
    return hashes, times


def test_same_seed_and_actions_give_identical_trajectories(town):
    rng = np.random.default_rng(1)
    actions = [(float(rng.uniform(-1, 1)), float(rng.uniform(0, 1)), 0.0) for _ in range(150)]
    a, times = _rollout(town, 3, actions)
    b, _ = _rollout(town, 3, actions)
    assert a == b
    assert times == sorted(times)
    c, _ = _rollout(town, 4, actions)
    assert a != c
