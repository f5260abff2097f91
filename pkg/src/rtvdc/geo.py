"""Small spherical-earth helpers shared by the route model and proximity checks."""

from __future__ import annotations

import math

EARTH_RADIUS_M = 6_371_008.8


def haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in metres."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


def lerp_fix(a: tuple[float, float], b: tuple[float, float], frac: float) -> tuple[float, float]:
    # Linear in degrees; waypoints are close enough that this is fine.
    return (a[0] + (b[0] - a[0]) * frac, a[1] + (b[1] - a[1]) * frac)
