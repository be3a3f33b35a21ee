"""State-representation variants and observation assembly."""

from __future__ import annotations

from enum import Enum

import numpy as np

from ..world.dynamics import MAX_GEAR, ActorState
from .raster import GRID
from .render import (
    LANES,
    N_CHANNELS,
    ROAD,
    ROUTE,
    STOP_ZONES,
    History,
    render_dynamic_channels,
    render_static_channels,
)


class Variant(str, Enum):
    EXPERT = "Expert"
    STATIC_PREDICTED = "StaticPredicted"
    NO_STATIC = "NoStatic"
    TARGET_HEATMAP = "TargetHeatmap"
    PREDICTED_ROUTE = "PredictedRoute"
    GT_BINARY_STOP = "GtBinaryStop"
    PREDICTED_BINARY_STOP = "PredictedBinaryStop"
    MEASUREMENT_FLAG_STOP = "MeasurementFlagStop"

    @classmethod
    def parse(cls, name) -> "Variant":
        if isinstance(name, cls):
            return name
        for v in cls:
            if v.value.lower() == str(name).lower() or v.name.lower() == str(name).lower():
                return v
        raise ValueError(f"unknown variant {name!r}; choose from {[v.value for v in cls]}")

    @property
    def route_source(self) -> str:
        return {Variant.TARGET_HEATMAP: "heatmap", Variant.PREDICTED_ROUTE: "predicted"}.get(self, "planner")

    @property
    def static_source(self) -> str:
        return {Variant.STATIC_PREDICTED: "degraded", Variant.NO_STATIC: "none"}.get(self, "truth")

    @property
    def stop_source(self) -> str:
        return {
            Variant.GT_BINARY_STOP: "gt_binary",
            Variant.PREDICTED_BINARY_STOP: "predicted_binary",
            Variant.MEASUREMENT_FLAG_STOP: "measurement_flag",
        }.get(self, "zones")

    @property
    def measurement_dim(self) -> int:
        return 7 if self is Variant.MEASUREMENT_FLAG_STOP else 6


def measurement_vector(ego: ActorState, flag: bool | None = None) -> np.ndarray:
    """Controls and speeds of the previous step; an optional stop flag is appended."""
    vals = [ego.steer, ego.throttle, ego.brake, ego.gear / MAX_GEAR, ego.lateral_speed, ego.speed]
    if flag is not None:
        vals.append(1.0 if flag else 0.0)
    return np.asarray(vals, dtype=np.float32)


def assemble_observation(history: History, route_channel, variant=Variant.EXPERT, *,
                         static=None, stop_signals=None) -> tuple[np.ndarray, np.ndarray]:
    """Compose the 15x192x192 BEV tensor and the measurement vector for a variant.

    ``static`` optionally supplies (road, lanes) to use instead of the ground
    truth render. ``stop_signals`` is one boolean per temporal slot (newest
    first) and is required by the predicted binary-stop variant.
    """
    variant = Variant.parse(variant)
    if route_channel is None:
        raise ValueError(f"variant {variant.value} needs a route channel")
    route_channel = np.asarray(route_channel)
    if route_channel.shape != (GRID, GRID):
        raise ValueError(f"route channel must be {GRID}x{GRID}, got {route_channel.shape}")
    snap = history.current
    pose = snap.ego.pose
    bev = np.zeros((N_CHANNELS, GRID, GRID), dtype=np.float32)

    if variant.static_source != "none":
        if static is None:
            if variant.static_source == "degraded":
                raise ValueError("StaticPredicted needs degraded static channels")
            static = render_static_channels(snap.town, pose)
        bev[ROAD], bev[LANES] = static
    bev[ROUTE] = route_channel
    bev[3:] = render_dynamic_channels(history, pose)

    flag = None
    source = variant.stop_source
    if source != "zones":
        if source == "predicted_binary":
            if stop_signals is None:
                raise ValueError("PredictedBinaryStop needs the classifier's signal history")
            signals = list(stop_signals)
        else:
            signals = [s.ego_in_active_zone if s is not None else None for s in history.items()]
        bev[STOP_ZONES] = 0.0
        if source == "measurement_flag":
            flag = bool(signals[0])
        else:
            for k, on in enumerate(signals[:4]):
                if on:
                    bev[STOP_ZONES.start + k] = 1.0
    return bev, measurement_vector(snap.ego, flag)
