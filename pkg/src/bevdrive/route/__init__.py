from .gnss import EARTH_RADIUS, GnssCoord, gnss_to_local, gnss_to_world, local_to_gnss, world_to_gnss
from .masks import HEATMAP_SIGMA, ROUTE_WIDTH, remaining_polyline, render_route_mask, render_target_heatmap
from .planner import PlanningError, Route, path_cost, plan_shortest_path, route_polyline

__all__ = [
    "EARTH_RADIUS", "GnssCoord", "gnss_to_local", "gnss_to_world", "local_to_gnss", "world_to_gnss",
    "HEATMAP_SIGMA", "ROUTE_WIDTH", "remaining_polyline", "render_route_mask", "render_target_heatmap",
    "PlanningError", "Route", "path_cost", "plan_shortest_path", "route_polyline",
]
