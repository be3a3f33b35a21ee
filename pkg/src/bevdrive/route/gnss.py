"""GNSS coordinates and their conversion into the ego frame (x forward, y left)."""

from __future__ import annotations

import math
from dataclasses import dataclass

EARTH_RADIUS = 6_371_000.0
_DEG = math.pi / 180.0


@dataclass(frozen=True)
class GnssCoord:
    lon: float
    lat: float
    alt: float = 0.0

    def __post_init__(self):
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")


def gnss_to_local(target: GnssCoord, ego: GnssCoord, ego_heading: float) -> tuple[float, float]:
    """Equirectangular offset of ``target`` from ``ego`` rotated into the ego frame.

    ``ego_heading`` is measured counter-clockwise from east. Altitude is ignored.
    """
    east = (target.lon - ego.lon) * _DEG * EARTH_RADIUS * math.cos(ego.lat * _DEG)
    north = (target.lat - ego.lat) * _DEG * EARTH_RADIUS
    c, s = math.cos(ego_heading), math.sin(ego_heading)
    return c * east + s * north, -s * east + c * north


def local_to_gnss(local, ego: GnssCoord, ego_heading: float) -> GnssCoord:
    """Inverse of :func:`gnss_to_local`."""
    x, y = local
    c, s = math.cos(ego_heading), math.sin(ego_heading)
    east = c * x - s * y
    north = s * x + c * y
    lat = ego.lat + north / (EARTH_RADIUS * _DEG)
    lon = ego.lon + east / (EARTH_RADIUS * _DEG * math.cos(ego.lat * _DEG))
    return GnssCoord(lon=lon, lat=lat, alt=ego.alt)


def world_to_gnss(origin: tuple[float, float], point) -> GnssCoord:
    """GNSS reading of a world point (x east, y north) for a town anchored at ``origin`` = (lat, lon)."""
    lat0, lon0 = origin
    lat = lat0 + point[1] / (EARTH_RADIUS * _DEG)
    lon = lon0 + point[0] / (EARTH_RADIUS * _DEG * math.cos(lat0 * _DEG))
    return GnssCoord(lon=lon, lat=lat)


def gnss_to_world(origin: tuple[float, float], coord: GnssCoord) -> tuple[float, float]:
    lat0, lon0 = origin
    x = (coord.lon - lon0) * EARTH_RADIUS * _DEG * math.cos(lat0 * _DEG)
    y = (coord.lat - lat0) * EARTH_RADIUS * _DEG
    return x, y
