from .observation import Variant, assemble_observation, measurement_vector
from .raster import (
    AHEAD,
    BEHIND,
    CELL,
    EGO_CELL,
    GRID,
    HALF_WIDTH,
    fill_convex,
    grid_to_world,
    stroke_polyline,
    to_grid_coords,
    world_to_grid,
)
from .render import (
    CHANNEL_NAMES,
    DEFAULT_STRIDE,
    LANES,
    N_CHANNELS,
    PEDESTRIANS,
    ROAD,
    ROUTE,
    STOP_ZONES,
    VEHICLES,
    History,
    render_dynamic_channels,
    render_snapshot_dynamic,
    render_static_channels,
)
