"""Route completion, infraction score and driving score."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import cumulative_length, project_to_polyline
from .world.sim import COLLISION_PEDESTRIAN, COLLISION_STATIC, COLLISION_VEHICLE, INFRACTION_KINDS, RED_LIGHT

PENALTIES = {
    COLLISION_PEDESTRIAN: 0.50,
    COLLISION_VEHICLE: 0.60,
    COLLISION_STATIC: 0.65,
    RED_LIGHT: 0.70,
}


class ProgressTracker:
    """Monotone arclength of a vehicle along a polyline.

    Each update projects the position onto the part of the route between
    ``behind`` metres before and ``ahead`` metres after the current progress,
    so loops and self-intersections cannot make progress jump. Positions
    further than ``max_distance`` from the route add nothing.
    """

    def __init__(self, polyline, behind: float = 2.0, ahead: float = 20.0, max_distance: float = 3.5):
        self.polyline = np.asarray(polyline, dtype=np.float64).reshape(-1, 2)
        self.cum = cumulative_length(self.polyline) if len(self.polyline) else np.zeros(0)
        self.length = float(self.cum[-1]) if len(self.cum) else 0.0
        self.behind, self.ahead, self.max_distance = behind, ahead, max_distance
        self.s = 0.0
        self.distance = math.inf

    def project(self, point) -> tuple[float, float]:
        """Windowed projection ``(arclength, distance)`` without updating progress."""
        if len(self.polyline) < 2:
            return 0.0, math.inf
        lo = max(int(np.searchsorted(self.cum, self.s - self.behind, side="right")) - 1, 0)
        hi = int(np.searchsorted(self.cum, self.s + self.ahead, side="left")) + 1
        s, d, _ = project_to_polyline(self.polyline, point, self.cum, lo, hi)
        return s, d

    def update(self, point) -> float:
        s, d = self.project(point)
        self.distance = d
        if d <= self.max_distance and s > self.s:
            self.s = s
        return self.s

    @property
    def completion(self) -> float:
        if self.length <= 0:
            return 0.0
        return min(max(self.s / self.length, 0.0), 1.0)


def route_completion(positions, route_polyline) -> float:
    """Fraction of the route covered by a sequence of (x, y[, heading]) positions, in [0, 1]."""
    tracker = ProgressTracker(route_polyline)
    if tracker.length <= 0:
        raise ValueError("route length must be positive")
    for p in positions:
        tracker.update((p[0], p[1]))
    return tracker.completion


def infraction_score(counts: dict, penalties: dict | None = None) -> float:
    """Product of per-event penalty coefficients; kinds without a coefficient cost nothing."""
    penalties = PENALTIES if penalties is None else penalties
    score = 1.0
    for kind in sorted(counts):
        n = counts[kind]
        if n < 0:
            raise ValueError(f"negative count for {kind}")
        score *= penalties.get(kind, 1.0) ** n
    return score


def driving_score(rc: float, is_: float) -> float:
    if not 0.0 <= rc <= 1.0:
        raise ValueError(f"route completion {rc} outside [0, 1]")
    if not 0.0 < is_ <= 1.0:
        raise ValueError(f"infraction score {is_} outside (0, 1]")
    return rc * is_


@dataclass
class EpisodeMetrics:
    rc: float
    counts: dict = field(default_factory=dict)
    is_: float = 1.0
    ds: float = 0.0

    @classmethod
    def from_events(cls, rc: float, kinds, penalties: dict | None = None) -> "EpisodeMetrics":
        counts = {k: 0 for k in INFRACTION_KINDS}
        for k in kinds:
            counts[k] += 1
        is_ = infraction_score(counts, penalties)
        return cls(rc=rc, counts=counts, is_=is_, ds=driving_score(rc, is_))

    def to_dict(self) -> dict:
        return {"rc": self.rc, "is": self.is_, "ds": self.ds, "counts": dict(self.counts)}

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeMetrics":
        return cls(rc=d["rc"], counts=dict(d["counts"]), is_=d["is"], ds=d["ds"])


def read_episode_log(path) -> tuple[dict, list[dict], dict | None]:
    """Header, step records and footer (``None`` if the episode never finished)."""
    header, steps, footer = None, [], None
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.get("type")
            if kind == "header":
                header = rec
            elif kind == "step":
                steps.append(rec)
            elif kind == "footer":
                footer = rec
    if header is None:
        raise ValueError(f"{path}: no header record")
    return header, steps, footer


def metrics_from_log(header: dict, steps: list[dict], penalties: dict | None = None) -> EpisodeMetrics:
    """Recompute episode metrics from logged poses and infractions."""
    positions = [header["start_pose"]] + [s["pose"] for s in steps]
    rc = route_completion(positions, header["route"])
    kinds = [k for s in steps for k in s["infractions"]]
    return EpisodeMetrics.from_events(rc, kinds, penalties)
