from .dynamics import EGO, PEDESTRIAN, VEHICLE, ActorState, step_dynamics
from .serialize import dump_text, load_town, save_town, town_from_bytes, town_to_bytes
from .sim import (
    COLLISION_PEDESTRIAN,
    COLLISION_STATIC,
    COLLISION_VEHICLE,
    DT,
    INFRACTION_KINDS,
    OFF_ROAD,
    RED_LIGHT,
    ROUTE_DEVIATION,
    TIMEOUT,
    InfractionEvent,
    World,
    WorldConfig,
    WorldSnapshot,
    actors_overlap,
    detect_infractions,
    ego_in_active_stop_zone,
    on_road,
    tick_traffic_lights,
)
from .town import (
    GREEN,
    RED,
    YELLOW,
    Junction,
    LaneSegment,
    TownMap,
    TownSpec,
    TownSpecError,
    TrafficLight,
    generate_town,
)
