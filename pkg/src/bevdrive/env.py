"""The driving environment: observations, rewards and terminations for every variant.

Variants change only what the agent observes. The world, the reward and the
termination rules are identical, and every source of randomness besides the
world (mask degradation, classifier noise) has its own generator, so for a
fixed seed and action sequence all variants drive through the same world.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .bev.observation import Variant, assemble_observation
from .bev.render import DEFAULT_STRIDE, History, render_static_channels
from .geometry import heading_at, interpolate, wrap_angle
from .metrics import PENALTIES, EpisodeMetrics, ProgressTracker
from .perception_proxy import DegradationProfile, StopClassifierSim, degrade_to_iou
from .route.dataset import N_WAYPOINTS, downsample, next_waypoints, random_mission
from .route.gnss import GnssCoord, gnss_to_local, gnss_to_world, world_to_gnss
from .route.masks import render_route_mask, render_target_heatmap
from .route.planner import PlanningError, Route, plan_shortest_path
from .world.serialize import spec_from_dict, spec_to_dict
from .world.sim import (COLLISION_PEDESTRIAN, COLLISION_STATIC, COLLISION_VEHICLE, OFF_ROAD, RED_LIGHT,
                        ROUTE_DEVIATION, TIMEOUT, World, WorldConfig)
from .world.town import TownMap, TownSpec, generate_town


COLLISIONS = (COLLISION_VEHICLE, COLLISION_PEDESTRIAN, COLLISION_STATIC)
OFF_ROUTE_DISTANCE = 3.5
BLOCKED_STEPS = 300
BLOCKED_PROGRESS = 1.0
PROGRESS_WINDOW = 20.0


@dataclass
class RewardWeights:
    progress: float = 1.0
    lateral: float = 0.5
    heading: float = 0.3
    speed: float = 0.1
    target_speed: float = 6.0
    collision: float = 10.0
    red_light: float = 5.0
    off_road: float = 5.0

    def bound(self, max_speed: float = 10.0, max_progress: float = PROGRESS_WINDOW) -> float:
        """Largest possible |reward| of one step.

        Progress can grow by at most the tracker's look-ahead window in one
        update, lateral offset is capped at the re-planning distance and the
        heading error is at most pi.
        """
        speed_term = self.speed * max(max_speed, self.target_speed) / self.target_speed
        return (abs(self.progress) * max_progress + self.lateral * OFF_ROUTE_DISTANCE + self.heading * math.pi
                + speed_term + self.collision + self.red_light + self.off_road)


@dataclass
class Scenario:
    """One episode's setup. ``mission`` holds GNSS points: the start, then the targets."""

    town_seed: int
    town_spec: TownSpec
    mission: list
    n_vehicles: int = 4
    n_pedestrians: int = 4
    step_limit: int = 1000
    variant: Variant = Variant.EXPERT

    def __post_init__(self):
        self.variant = Variant.parse(self.variant)
        self.mission = [m if isinstance(m, GnssCoord) else GnssCoord(*m) for m in self.mission]
        if len(self.mission) < 2:
            raise ValueError("a mission needs at least two waypoints")
        if self.step_limit <= 0:
            raise ValueError("step limit must be positive")
        if self.n_vehicles < 0 or self.n_pedestrians < 0:
            raise ValueError("actor counts must be non-negative")

    def to_dict(self) -> dict:
        return {"town_seed": self.town_seed, "town_spec": spec_to_dict(self.town_spec),
                "mission": [[m.lon, m.lat, m.alt] for m in self.mission], "n_vehicles": self.n_vehicles,
                "n_pedestrians": self.n_pedestrians, "step_limit": self.step_limit,
                "variant": self.variant.value}

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(d["town_seed"], spec_from_dict(d["town_spec"]), [GnssCoord(*m) for m in d["mission"]],
                   d["n_vehicles"], d["n_pedestrians"], d["step_limit"], Variant.parse(d["variant"]))

    def with_variant(self, variant) -> "Scenario":
        d = self.to_dict()
        d["variant"] = Variant.parse(variant).value
        return Scenario.from_dict(d)


_TOWNS: dict = {}


def cached_town(seed: int, spec: TownSpec) -> TownMap:
    key = (seed, spec)
    if key not in _TOWNS:
        if len(_TOWNS) > 64:
            _TOWNS.clear()
        _TOWNS[key] = generate_town(seed, spec)
    return _TOWNS[key]


def make_scenario(town_seed: int, town_spec: TownSpec, seed: int, variant=Variant.EXPERT,
                  length: float = 150.0, n_vehicles: int = 4, n_pedestrians: int = 4,
                  step_limit: int = 600) -> Scenario:
    """A random mission of about ``length`` metres with targets every 25 m."""
    town = cached_town(town_seed, town_spec)
    rng = np.random.default_rng(seed)
    spawn = town.spawn_points[int(rng.integers(len(town.spawn_points)))]
    mission = random_mission(town, rng, min_length=length, start=spawn)
    start = town.lane(spawn[0]).point_at(spawn[1])
    origin = town_spec.geo_origin
    points = [world_to_gnss(origin, start)] + [world_to_gnss(origin, p) for p in mission.waypoints]
    return Scenario(town_seed, town_spec, points, n_vehicles, n_pedestrians, step_limit, variant)


@dataclass
class StepState:
    """What the reward needs about one instant."""

    x: float
    y: float
    heading: float
    speed: float
    progress: float
    in_red_zone: bool
    infractions: tuple = ()


def compute_reward(prev: StepState, cur: StepState, route: Route, weights: RewardWeights | None = None) -> float:
    """Progress gain minus lateral, heading, speed-tracking and terminal penalties."""
    w = weights or RewardWeights()
    reward = w.progress * (cur.progress - prev.progress)
    if not route.empty:
        lateral = _route_offset(route, cur)
        href = heading_at(route.polyline, min(cur.progress, route.length), route.cum)
        reward -= w.lateral * min(lateral, OFF_ROUTE_DISTANCE)
        reward -= w.heading * abs(wrap_angle(cur.heading - href))
    if cur.in_red_zone:
        # waiting costs nothing; moving is penalized relative to the cruising target
        reward -= w.speed * cur.speed / w.target_speed
    else:
        reward -= w.speed * abs(cur.speed - w.target_speed) / w.target_speed
    kinds = set(cur.infractions)
    if kinds & set(COLLISIONS):
        reward -= w.collision
    if RED_LIGHT in kinds:
        reward -= w.red_light
    if OFF_ROAD in kinds:
        reward -= w.off_road
    return float(reward)


def _route_offset(route: Route, st: StepState) -> float:
    p = interpolate(route.polyline, min(st.progress, route.length), route.cum)
    return float(math.hypot(st.x - p[0], st.y - p[1]))


class Transition(NamedTuple):
    observation: tuple
    action: np.ndarray
    reward: float
    done: bool
    info: dict


@dataclass
class EnvConfig:
    reward: RewardWeights = field(default_factory=RewardWeights)
    stride: int = DEFAULT_STRIDE
    road_iou: float = 0.924
    lane_iou: float = 0.756
    ood_multiplier: float = 1.0
    stop_tpr: float = 0.95
    stop_fpr: float = 0.02
    stop_threshold: float = 0.4
    stop_latency: int = 0
    yellow_is_active: bool = False


def to_controls(action) -> tuple[float, float, float]:
    """(steer, accel) in [-1, 1]^2 to (steer, throttle, brake); negative accel brakes."""
    steer, accel = float(action[0]), float(action[1])
    return steer, max(accel, 0.0), max(-accel, 0.0)


class BevDriveEnv:
    """Single-episode-at-a-time environment.

    ``reset`` returns the observation ``(bev, measurements)``; ``step`` returns
    a :class:`Transition`. With ``log_path`` every episode is written as
    JSON lines: a header, one record per step and a footer with the metrics.
    """

    def __init__(self, config: EnvConfig | None = None, route_predictor=None, log_path=None):
        self.config = config or EnvConfig()
        self.route_predictor = route_predictor
        self.log_path = log_path
        self._log = None
        self.done = True

    # -- episode setup --------------------------------------------------

    def reset(self, scenario: Scenario, seed: int = 0):
        self.scenario = scenario
        self.variant = scenario.variant
        if self.variant.route_source == "predicted" and self.route_predictor is None:
            raise ValueError("PredictedRoute needs a trained route predictor")
        self.seed = int(seed)
        ss = np.random.SeedSequence(self.seed)
        world_seed, degrade_seed, stop_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
        self.town = cached_town(scenario.town_seed, scenario.town_spec)
        origin = scenario.town_spec.geo_origin
        start_xy = gnss_to_world(origin, scenario.mission[0])
        snapped = self.town.snap(np.asarray(start_xy), max_distance=5.0)
        if snapped is None:
            raise PlanningError(0, "start is farther than 5 m from every lane")
        self.targets = [np.asarray(gnss_to_world(origin, m)) for m in scenario.mission[1:]]
        self.route = plan_shortest_path(self.town, snapped[:2], self.targets)
        if self.route.empty:
            raise PlanningError(len(self.targets) - 1, "gives an empty route")
        wcfg = WorldConfig(n_vehicles=scenario.n_vehicles, n_pedestrians=scenario.n_pedestrians,
                           yellow_is_active=self.config.yellow_is_active)
        self.world = World(self.town, world_seed, wcfg, ego_spawn=snapped[:2])
        self.degrade_rng = np.random.default_rng(degrade_seed)
        self.stop_rng = np.random.default_rng(stop_seed)
        c = self.config
        self.road_profile = DegradationProfile(c.road_iou, c.ood_multiplier)
        self.lane_profile = DegradationProfile(c.lane_iou, c.ood_multiplier)
        self.classifier = StopClassifierSim(c.stop_tpr, c.stop_fpr, c.stop_threshold, c.stop_latency)

        self.original_route = self.route
        self.rc_tracker = ProgressTracker(self.route.polyline)
        self.tracker = ProgressTracker(self.route.polyline)
        self.target_s = self._target_arclengths()
        self.steps = 0
        self.best_progress = 0.0
        self.last_progress_step = 0
        self.events: list[str] = []
        self.replans = 0
        self.done = False

        snap = self.world.snapshot()
        self.history = History(c.stride)
        self.history.fill(snap)
        self.stop_history = deque(maxlen=c.stride * 3 + 1)
        self.rc_tracker.update((snap.ego.x, snap.ego.y))
        self.tracker.update((snap.ego.x, snap.ego.y))
        self._state = self._step_state(snap, ())
        obs = self._observe(snap)
        self._open_log()
        return obs

    def _target_arclengths(self) -> np.ndarray:
        t = ProgressTracker(self.route.polyline, behind=0.0, ahead=math.inf, max_distance=math.inf)
        out = []
        for p in self.targets:
            s, _ = t.project(p)
            t.s = s
            out.append(s)
        return np.asarray(out)

    def _step_state(self, snap, infractions) -> StepState:
        e = snap.ego
        return StepState(e.x, e.y, e.heading, e.speed, self.tracker.s, snap.ego_in_active_zone, tuple(infractions))

    # -- observation ----------------------------------------------------

    def remaining_targets(self) -> list[np.ndarray]:
        k = int(np.searchsorted(self.target_s, self.rc_tracker.s + 1e-6, side="right"))
        k = min(k, len(self.targets) - 1)
        return self.targets[k:]

    def _route_channel(self, snap, static_truth) -> np.ndarray:
        pose = snap.ego.pose
        source = self.variant.route_source
        if source == "planner":
            return render_route_mask(self.route, pose, start_s=self.tracker.s)
        targets = self.remaining_targets()
        if source == "heatmap":
            origin = self.scenario.town_spec.geo_origin
            ego_gnss = world_to_gnss(origin, (snap.ego.x, snap.ego.y))
            local = gnss_to_local(world_to_gnss(origin, targets[0]), ego_gnss, snap.ego.heading)
            # quantized so rollout storage is lossless
            return np.round(render_target_heatmap(local) * 255.0) / np.float32(255.0)
        road, lines = static_truth
        masks = np.stack([downsample(road), downsample(lines)])[None].astype(np.float32)
        wps = next_waypoints(np.asarray(targets), pose, N_WAYPOINTS)[None].astype(np.float32)
        return self.route_predictor.predict_full((masks, wps))[0]

    def _observe(self, snap):
        pose = snap.ego.pose
        static_truth = render_static_channels(self.town, pose)
        static = static_truth
        if self.variant.static_source == "degraded":
            deviation = min(self.tracker.distance, 10.0) if math.isfinite(self.tracker.distance) else 0.0
            static = (degrade_to_iou(static_truth[0], self.road_profile, deviation, self.degrade_rng).mask,
                      degrade_to_iou(static_truth[1], self.lane_profile, deviation, self.degrade_rng).mask)
        signals = None
        if self.variant.stop_source == "predicted_binary":
            self.stop_history.appendleft(self.classifier.step(snap.ego_in_active_zone, self.stop_rng))
            while len(self.stop_history) < self.stop_history.maxlen:
                self.stop_history.append(self.stop_history[-1])
            signals = [self.stop_history[k * self.config.stride] for k in range(4)]
        route_channel = self._route_channel(snap, static_truth)
        return assemble_observation(self.history, route_channel, self.variant, static=static, stop_signals=signals)

    # -- stepping -------------------------------------------------------

    def step(self, action) -> Transition:
        if self.done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (2,) or not np.isfinite(action).all():
            raise ValueError("action must be two finite numbers")
        if np.any(np.abs(action) > 1.0 + 1e-9):
            raise ValueError(f"action {action.tolist()} outside [-1, 1]^2")
        infractions = self.world.step(to_controls(action))
        self.steps += 1
        snap = self.world.snapshot()
        self.history.push(snap)
        pos = (snap.ego.x, snap.ego.y)
        self.rc_tracker.update(pos)
        self.tracker.update(pos)
        kinds = [ev.kind for ev in infractions]

        prev = self._state
        cur = self._step_state(snap, kinds)
        reward = compute_reward(prev, cur, self.route, self.config.reward)

        if self.tracker.s > self.best_progress + BLOCKED_PROGRESS:
            self.best_progress = self.tracker.s
            self.last_progress_step = self.steps
        reason = None
        complete = self.rc_tracker.s >= self.rc_tracker.length - 1e-6
        if complete:
            reason = "route_complete"
        elif set(kinds) & set(COLLISIONS):
            reason = "collision"
        elif self.town.centerline_distance(pos) > OFF_ROUTE_DISTANCE:
            reason = "off_road"
        elif self.steps - self.last_progress_step >= BLOCKED_STEPS:
            reason = "blocked"
        elif self.steps >= self.scenario.step_limit:
            reason = "timeout"
            kinds.append(TIMEOUT)
        replanned = False
        if reason is None and self.tracker.distance > OFF_ROUTE_DISTANCE:
            replanned = self._replan(snap)
            if replanned:
                kinds.append(ROUTE_DEVIATION)
        self._state = self._step_state(snap, kinds)
        self.events.extend(kinds)
        self.done = reason is not None
        obs = self._observe(snap)
        metrics = EpisodeMetrics.from_events(self.rc_tracker.completion, self.events, PENALTIES)
        info = {"infractions": kinds, "progress": self.tracker.s, "route_completion": metrics.rc,
                "infraction_score": metrics.is_, "driving_score": metrics.ds, "termination": reason,
                "replanned": replanned, "in_red_zone": snap.ego_in_active_zone}
        self._write_step(action, reward, kinds)
        if self.done:
            self._close_log(metrics, reason)
        return Transition(obs, action, reward, self.done, info)

    def _replan(self, snap) -> bool:
        e = snap.ego
        snapped = self.town.snap(np.array([e.x, e.y]), max_distance=OFF_ROUTE_DISTANCE, heading=e.heading)
        if snapped is None:
            return False
        try:
            route = plan_shortest_path(self.town, snapped[:2], self.remaining_targets())
        except PlanningError:
            return False
        if route.empty:
            return False
        self.route = route
        self.tracker = ProgressTracker(route.polyline)
        self.tracker.update((e.x, e.y))
        self.best_progress = self.tracker.s
        self.replans += 1
        return True

    def metrics(self) -> EpisodeMetrics:
        return EpisodeMetrics.from_events(self.rc_tracker.completion, self.events, PENALTIES)

    def state_hash(self) -> str:
        return self.world.state_hash()

    # -- logging ----------------------------------------------------------

    def _open_log(self) -> None:
        if self._log is not None:
            self._log.close()
            self._log = None
        if self.log_path is None:
            return
        self._log = open(self.log_path, "a")
        e = self.world.ego
        header = {"type": "header", "seed": self.seed, "variant": self.variant.value,
                  "scenario": self.scenario.to_dict(), "start_pose": [e.x, e.y, e.heading],
                  "route": self.original_route.polyline.tolist()}
        self._log.write(json.dumps(header) + "\n")

    def _write_step(self, action, reward, kinds) -> None:
        if self._log is None:
            return
        e = self.world.ego
        rec = {"type": "step", "t": self.world.time, "pose": [e.x, e.y, e.heading],
               "action": [float(a) for a in action], "reward": reward, "infractions": list(kinds),
               "variant": self.variant.value}
        self._log.write(json.dumps(rec) + "\n")

    def _close_log(self, metrics: EpisodeMetrics, reason: str) -> None:
        if self._log is None:
            return
        self._log.write(json.dumps({"type": "footer", "steps": self.steps, "termination": reason,
                                    "metrics": metrics.to_dict()}) + "\n")
        self._log.close()
        self._log = None

    def close(self) -> None:
        if self._log is not None:
            self._log.close()
            self._log = None

