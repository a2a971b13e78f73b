"""Airspace geometry: local projection, prism regions, distances, approach factors.

Regions are vertical prisms: a convex counter-clockwise polygon footprint in
the local east/north plane (km) extruded over an altitude band (km).  All
functions accept a single point or an array of points with the coordinate on
the last axis and broadcast over the leading axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

KM_PER_DEG_LAT = 110.574
KM_PER_DEG_LON_EQ = 111.320
APPROACH_EPS = 1e-8


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float
    alt: float  # meters MSL

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0 and -180.0 <= self.lon <= 180.0):
            raise ValueError(f"lat/lon out of range: {self.lat}, {self.lon}")
        if not self.alt >= -500.0:
            raise ValueError(f"altitude below -500 m: {self.alt}")


@dataclass(frozen=True)
class EnuPoint:
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


@dataclass(frozen=True)
class Region:
    """Vertical prism over a convex CCW polygon.

    ``footprint`` is an (n, 2) array of km vertices, ``alt_band`` is
    ``(z_min, z_max)`` in km and ``center`` the reference point used by the
    approach factor.
    """

    id: str
    footprint: np.ndarray
    alt_band: tuple[float, float]
    center: np.ndarray
    edges: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        poly = np.asarray(self.footprint, dtype=float)
        if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
            raise ValueError("footprint must be an (n>=3, 2) vertex array")
        object.__setattr__(self, "footprint", poly)
        center = np.asarray(self.center, dtype=float).reshape(-1)
        if center.shape != (3,):
            raise ValueError("center must have x, y, z")
        object.__setattr__(self, "center", center)
        z_min, z_max = map(float, self.alt_band)
        object.__setattr__(self, "alt_band", (z_min, z_max))
        if not z_min < z_max:
            raise ValueError("alt_band must satisfy z_min < z_max")
        if polygon_area(poly) <= 0:
            raise ValueError("footprint must be counter-clockwise with positive area")
        if not is_convex(poly):
            raise ValueError("footprint must be convex")
        object.__setattr__(self, "edges", (poly, np.roll(poly, -1, axis=0)))
        if not contains(self, center):
            raise ValueError("center must lie inside the region")

    def __eq__(self, other) -> bool:
        return (isinstance(other, Region) and self.id == other.id and self.alt_band == other.alt_band
                and np.array_equal(self.footprint, other.footprint)
                and np.array_equal(self.center, other.center))

    __hash__ = None


@dataclass(frozen=True)
class AirspaceConfig:
    origin: GeoPoint
    ap: Region
    ar: Region
    buffer_km: float = 100.0

    def __post_init__(self):
        if not self.buffer_km > 0:
            raise ValueError("buffer_km must be positive")

    @property
    def regions(self) -> dict[str, Region]:
        return {"AP": self.ap, "AR": self.ar}


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area; positive for counter-clockwise vertex order."""
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def is_convex(poly: np.ndarray) -> bool:
    a = poly
    b = np.roll(poly, -1, axis=0)
    c = np.roll(poly, -2, axis=0)
    cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - b[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - b[:, 0])
    return bool(np.all(cross >= -1e-12))


# projection ----------------------------------------------------------------

def to_enu(p, origin: GeoPoint):
    """Equirectangular projection to km east/north/up of ``origin``.

    ``p`` is a :class:`GeoPoint` (returns :class:`EnuPoint`) or an array of
    ``(lat, lon, alt_m)`` rows (returns an array of ``(x, y, z)`` rows).
    """
    kx = KM_PER_DEG_LON_EQ * math.cos(math.radians(origin.lat))
    if isinstance(p, GeoPoint):
        return EnuPoint(
            (p.lon - origin.lon) * kx,
            (p.lat - origin.lat) * KM_PER_DEG_LAT,
            p.alt / 1000.0,
        )
    p = np.asarray(p, dtype=float)
    out = np.empty_like(p)
    out[..., 0] = (p[..., 1] - origin.lon) * kx
    out[..., 1] = (p[..., 0] - origin.lat) * KM_PER_DEG_LAT
    out[..., 2] = p[..., 2] / 1000.0
    return out


def from_enu(p, origin: GeoPoint):
    """Inverse of :func:`to_enu`."""
    kx = KM_PER_DEG_LON_EQ * math.cos(math.radians(origin.lat))
    if isinstance(p, EnuPoint):
        return GeoPoint(
            origin.lat + p.y / KM_PER_DEG_LAT,
            origin.lon + p.x / kx,
            p.z * 1000.0,
        )
    p = np.asarray(p, dtype=float)
    out = np.empty_like(p)
    out[..., 0] = origin.lat + p[..., 1] / KM_PER_DEG_LAT
    out[..., 1] = origin.lon + p[..., 0] / kx
    out[..., 2] = p[..., 2] * 1000.0
    return out


def _xyz(p) -> np.ndarray:
    if isinstance(p, EnuPoint):
        return p.as_array()
    return np.asarray(p, dtype=float)


# membership and distances --------------------------------------------------

def _edge_cross(region: Region, xy: np.ndarray) -> np.ndarray:
    """Cross product of each edge with the vector to each point, shape (..., n_edges)."""
    a, b = region.edges
    e = b - a
    d = xy[..., None, :] - a
    return e[:, 0] * d[..., 1] - e[:, 1] * d[..., 0]


def _lateral_inside(region: Region, xy: np.ndarray) -> np.ndarray:
    a, b = region.edges
    lengths = np.linalg.norm(b - a, axis=1)
    # cross / |edge| is the signed distance to the edge line; allow rounding slack
    return np.all(_edge_cross(region, xy) / lengths >= -1e-9, axis=-1)


def _segment_distance(region: Region, xy: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest footprint edge (polygon outline)."""
    a, b = region.edges
    e = b - a
    d = xy[..., None, :] - a
    t = np.clip(np.sum(d * e, axis=-1) / np.sum(e * e, axis=-1), 0.0, 1.0)
    nearest = a + t[..., None] * e
    return np.min(np.linalg.norm(xy[..., None, :] - nearest, axis=-1), axis=-1)


def contains(region: Region, p):
    """True where ``p`` is inside or on the prism (closed set)."""
    p = _xyz(p)
    z_min, z_max = region.alt_band
    in_band = (p[..., 2] >= z_min) & (p[..., 2] <= z_max)
    result = in_band & _lateral_inside(region, p[..., :2])
    return bool(result) if result.ndim == 0 else result


def boundary_distance(region: Region, p):
    """Unsigned distance (km) to the nearest point of the prism surface."""
    p = _xyz(p)
    z_min, z_max = region.alt_band
    z = p[..., 2]
    inside_xy = _lateral_inside(region, p[..., :2])
    wall = _segment_distance(region, p[..., :2])
    in_band = (z >= z_min) & (z <= z_max)
    # inside the solid: nearest of walls and caps
    d_in = np.minimum(wall, np.minimum(z - z_min, z_max - z))
    # outside: Euclidean distance to the convex solid
    dxy = np.where(inside_xy, 0.0, wall)
    dz = np.maximum(z_min - z, 0.0) + np.maximum(z - z_max, 0.0)
    d_out = np.hypot(dxy, dz)
    result = np.where(inside_xy & in_band, d_in, d_out)
    return float(result) if result.ndim == 0 else result


def approach_factor(p, v, region: Region):
    """Cosine between horizontal velocity ``v`` and the offset to the region center.

    Positive means converging.  Returns 0 when both vectors vanish.
    """
    p = _xyz(p)
    v = np.asarray(v, dtype=float)
    r = region.center[:2] - p[..., :2]
    num = np.sum(v * r, axis=-1)
    den = np.linalg.norm(v, axis=-1) * np.linalg.norm(r, axis=-1) + APPROACH_EPS
    result = num / den
    return float(result) if result.ndim == 0 else result


def in_scope(p, cfg: AirspaceConfig):
    """Membership in the controlled regions or within ``buffer_km`` of them."""
    p = _xyz(p)
    near = np.minimum(boundary_distance(cfg.ap, p), boundary_distance(cfg.ar, p)) <= cfg.buffer_km
    result = near | contains(cfg.ap, p) | contains(cfg.ar, p)
    return bool(result) if np.ndim(result) == 0 else result


def regular_polygon(radius: float, n: int = 16, center=(0.0, 0.0)) -> np.ndarray:
    """CCW regular polygon vertices, handy for building circular-ish sectors."""
    ang = 2 * np.pi * np.arange(n) / n
    return np.column_stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)])


def default_airspace() -> AirspaceConfig:
    """A compact terminal area used by the simulator defaults and the demos.

    The AP is a low cylinder-like prism around the runway; the AR is a wider,
    higher band stacked on top of it.
    """
    origin = GeoPoint(31.15, 121.80, 0.0)
    ap = Region("AP", regular_polygon(35.0, 16), (0.0, 3.0), np.array([0.0, 0.0, 1.5]))
    ar = Region("AR", regular_polygon(110.0, 16), (3.0, 8.0), np.array([0.0, 0.0, 5.5]))
    return AirspaceConfig(origin=origin, ap=ap, ar=ar, buffer_km=100.0)
