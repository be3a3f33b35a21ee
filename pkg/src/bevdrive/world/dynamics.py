"""Actor state and the kinematic bicycle model driving the ego vehicle."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

EGO, VEHICLE, PEDESTRIAN = "ego", "vehicle", "pedestrian"

WHEELBASE = 2.5
MAX_SPEED = 10.0
THROTTLE_ACCEL = 3.0
BRAKE_DECEL = 8.0
MAX_WHEEL_ANGLE = math.radians(35.0)
MAX_GEAR = 4

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ActorState:
    x: float
    y: float
    heading: float
    speed: float = 0.0
    lateral_speed: float = 0.0
    steer: float = 0.0
    throttle: float = 0.0
    brake: float = 0.0
    gear: int = 0
    half_length: float = 2.25
    half_width: float = 1.0
    kind: str = EGO

    @property
    def pose(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.heading)

    def validate(self) -> None:
        if not (-1.0 <= self.steer <= 1.0 and 0.0 <= self.throttle <= 1.0 and 0.0 <= self.brake <= 1.0):
            raise ValueError("control fields out of bounds")
        if not (math.isfinite(self.speed) and math.isfinite(self.lateral_speed)):
            raise ValueError("non-finite speed")
        if self.half_length <= 0 or self.half_width <= 0:
            raise ValueError("footprint half-extents must be positive")


def _clamp(name: str, value: float, lo: float, hi: float) -> float:
    if value < lo or value > hi or math.isnan(value):
        log.warning("%s=%r outside [%s, %s]; clamping", name, value, lo, hi)
        if math.isnan(value):
            return 0.0
        return min(max(value, lo), hi)
    return value


def gear_for_speed(speed: float) -> int:
    if speed < 0.1:
        return 0
    return min(MAX_GEAR, 1 + int(speed // 3.0))


def step_dynamics(state: ActorState, action, dt: float) -> ActorState:
    """Advance one step of the kinematic bicycle model.

    ``action`` is ``(steer, throttle, brake)``. Position and heading are
    integrated with the speed held at the start of the step; the speed
    update is applied afterwards and clipped to ``[0, MAX_SPEED]``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    steer = _clamp("steer", float(action[0]), -1.0, 1.0)
    throttle = _clamp("throttle", float(action[1]), 0.0, 1.0)
    brake = _clamp("brake", float(action[2]), 0.0, 1.0)

    v = state.speed
    delta = steer * MAX_WHEEL_ANGLE
    # slip angle at the footprint centre, which sits mid-wheelbase
    beta = math.atan(0.5 * math.tan(delta))
    heading = state.heading
    x = state.x + v * math.cos(heading + beta) * dt
    y = state.y + v * math.sin(heading + beta) * dt
    heading = heading + v / (WHEELBASE / 2) * math.sin(beta) * dt
    if not -math.pi <= heading < math.pi:
        heading = (heading + math.pi) % (2 * math.pi) - math.pi

    accel = THROTTLE_ACCEL * throttle - BRAKE_DECEL * brake
    new_v = min(max(v + accel * dt, 0.0), MAX_SPEED)
    if brake > 0.0 and new_v > v:
        new_v = v
    return replace(
        state, x=x, y=y, heading=heading, speed=new_v,
        lateral_speed=new_v * math.sin(beta), steer=steer, throttle=throttle, brake=brake,
        gear=gear_for_speed(new_v),
    )
