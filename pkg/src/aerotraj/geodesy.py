"""Conversions between WGS84 geodetic coordinates, UTM, and a per-scene
local metric frame.

All optimization downstream runs in local coordinates (UTM minus a fixed
scene origin) so that double precision is spent on meters, not on the
millions of meters a raw UTM northing carries.  The transverse Mercator
projection is implemented with the 6th-order Krueger series so results are
reproducible bit-for-bit without an external datum library.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
UTM_SCALE = 0.9996
FALSE_EASTING = 500000.0
FALSE_NORTHING_SOUTH = 10000000.0
MAX_UTM_LATITUDE = 84.0

_N = WGS84_F / (2.0 - WGS84_F)
_ECC = math.sqrt(WGS84_F * (2.0 - WGS84_F))
# rectifying radius A-bar
_RADIUS = WGS84_A / (1.0 + _N) * (1.0 + _N**2 / 4 + _N**4 / 64 + _N**6 / 256)

# Krueger series coefficients, 6th order in the third flattening n.
_ALPHA = (
    _N / 2 - 2 * _N**2 / 3 + 5 * _N**3 / 16 + 41 * _N**4 / 180
    - 127 * _N**5 / 288 + 7891 * _N**6 / 37800,
    13 * _N**2 / 48 - 3 * _N**3 / 5 + 557 * _N**4 / 1440 + 281 * _N**5 / 630
    - 1983433 * _N**6 / 1935360,
    61 * _N**3 / 240 - 103 * _N**4 / 140 + 15061 * _N**5 / 26880
    + 167603 * _N**6 / 181440,
    49561 * _N**4 / 161280 - 179 * _N**5 / 168 + 6601661 * _N**6 / 7257600,
    34729 * _N**5 / 80640 - 3418889 * _N**6 / 1995840,
    212378941 * _N**6 / 319334400,
)
_BETA = (
    _N / 2 - 2 * _N**2 / 3 + 37 * _N**3 / 96 - _N**4 / 360
    - 81 * _N**5 / 512 + 96199 * _N**6 / 604800,
    _N**2 / 48 + _N**3 / 15 - 437 * _N**4 / 1440 + 46 * _N**5 / 105
    - 1118711 * _N**6 / 3870720,
    17 * _N**3 / 480 - 37 * _N**4 / 840 - 209 * _N**5 / 4480
    + 5569 * _N**6 / 90720,
    4397 * _N**4 / 161280 - 11 * _N**5 / 504 - 830251 * _N**6 / 7257600,
    4583 * _N**5 / 161280 - 108847 * _N**6 / 3991680,
    20648693 * _N**6 / 638668800,
)
_DELTA = (
    2 * _N - 2 * _N**2 / 3 - 2 * _N**3 + 116 * _N**4 / 45 + 26 * _N**5 / 45
    - 2854 * _N**6 / 675,
    7 * _N**2 / 3 - 8 * _N**3 / 5 - 227 * _N**4 / 45 + 2704 * _N**5 / 315
    + 2323 * _N**6 / 945,
    56 * _N**3 / 15 - 136 * _N**4 / 35 - 1262 * _N**5 / 105 + 73814 * _N**6 / 2835,
    4279 * _N**4 / 630 - 332 * _N**5 / 35 - 399572 * _N**6 / 14175,
    4174 * _N**5 / 315 - 144838 * _N**6 / 6237,
    601676 * _N**6 / 22275,
)


class GeodesyError(ValueError):
    pass


@dataclass(frozen=True)
class GeoCoordinate:
    """WGS84 position: latitude/longitude in degrees, altitude in meters."""

    latitude: float
    longitude: float
    altitude: float = 0.0

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise GeodesyError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180.0 <= self.longitude <= 180.0:
            raise GeodesyError(f"longitude {self.longitude} outside [-180, 180]")


@dataclass(frozen=True)
class LocalPoint:
    """Point in the scene-local frame: x=east, y=north, z=up, meters."""

    x: float
    y: float
    z: float

    def as_array(self):
        import numpy as np

        return np.array([self.x, self.y, self.z], dtype=float)


@dataclass(frozen=True)
class LocalFrame:
    """Scene anchor subtracted from all UTM points.

    The origin is fixed for the lifetime of a scene; every output file
    references exactly one LocalFrame in its header so coordinates stay
    portable and geo-referenced.
    """

    zone: int
    north: bool
    origin_easting: float
    origin_northing: float
    origin_altitude: float

    def __post_init__(self):
        if not 1 <= self.zone <= 60:
            raise GeodesyError(f"UTM zone {self.zone} outside [1, 60]")

    @classmethod
    def from_geo(cls, anchor: GeoCoordinate) -> "LocalFrame":
        """Frame anchored at a GPS tag, origin rounded to whole meters."""
        easting, northing, zone, north = geo_to_utm(anchor)
        return cls(
            zone=zone,
            north=north,
            origin_easting=float(round(easting)),
            origin_northing=float(round(northing)),
            origin_altitude=float(round(anchor.altitude)),
        )

    @property
    def hemisphere(self) -> str:
        return "N" if self.north else "S"


def utm_zone_for(longitude: float) -> int:
    zone = int(math.floor((longitude + 180.0) / 6.0)) + 1
    return min(max(zone, 1), 60)


def central_meridian(zone: int) -> float:
    return -183.0 + 6.0 * zone


def geo_to_utm(p: GeoCoordinate, zone: int | None = None):
    """Forward UTM projection.

    Returns (easting, northing, zone, north).  The zone is derived from the
    longitude unless explicitly pinned (e.g. by a LocalFrame).
    """
    if abs(p.latitude) > MAX_UTM_LATITUDE:
        raise GeodesyError(
            f"latitude {p.latitude} is polar (|lat| > {MAX_UTM_LATITUDE}); UTM undefined"
        )
    if zone is None:
        zone = utm_zone_for(p.longitude)

    phi = math.radians(p.latitude)
    dlam = math.radians(p.longitude - central_meridian(zone))

    sin_phi = math.sin(phi)
    t = math.sinh(math.atanh(sin_phi) - _ECC * math.atanh(_ECC * sin_phi))
    xi = math.atan2(t, math.cos(dlam))
    eta = math.asinh(math.sin(dlam) / math.hypot(t, math.cos(dlam)))

    x = xi
    y = eta
    for j, a in enumerate(_ALPHA, start=1):
        x += a * math.sin(2 * j * xi) * math.cosh(2 * j * eta)
        y += a * math.cos(2 * j * xi) * math.sinh(2 * j * eta)

    easting = FALSE_EASTING + UTM_SCALE * _RADIUS * y
    northing = UTM_SCALE * _RADIUS * x
    north = p.latitude >= 0.0
    if not north:
        northing += FALSE_NORTHING_SOUTH
    return easting, northing, zone, north


def utm_to_geo(
    easting: float, northing: float, zone: int, north: bool, altitude: float = 0.0
) -> GeoCoordinate:
    """Inverse UTM projection (Krueger series plus conformal-latitude series)."""
    if not 1 <= zone <= 60:
        raise GeodesyError(f"UTM zone {zone} outside [1, 60]")
    y = northing if north else northing - FALSE_NORTHING_SOUTH
    xi = y / (UTM_SCALE * _RADIUS)
    eta = (easting - FALSE_EASTING) / (UTM_SCALE * _RADIUS)

    xi_p = xi
    eta_p = eta
    for j, b in enumerate(_BETA, start=1):
        xi_p -= b * math.sin(2 * j * xi) * math.cosh(2 * j * eta)
        eta_p -= b * math.cos(2 * j * xi) * math.sinh(2 * j * eta)

    chi = math.asin(math.sin(xi_p) / math.cosh(eta_p))
    phi = chi
    for j, d in enumerate(_DELTA, start=1):
        phi += d * math.sin(2 * j * chi)
    dlam = math.atan2(math.sinh(eta_p), math.cos(xi_p))

    return GeoCoordinate(
        latitude=math.degrees(phi),
        longitude=central_meridian(zone) + math.degrees(dlam),
        altitude=altitude,
    )


def utm_to_local(
    easting: float, northing: float, altitude: float, frame: LocalFrame, zone: int | None = None
) -> LocalPoint:
    """Component-wise subtraction of the frame origin.  Pure translation."""
    if zone is not None and zone != frame.zone:
        raise GeodesyError(f"UTM zone {zone} does not match frame zone {frame.zone}")
    return LocalPoint(
        x=easting - frame.origin_easting,
        y=northing - frame.origin_northing,
        z=altitude - frame.origin_altitude,
    )


def local_to_utm(p: LocalPoint, frame: LocalFrame):
    """Exact inverse of :func:`utm_to_local`."""
    return (
        p.x + frame.origin_easting,
        p.y + frame.origin_northing,
        p.z + frame.origin_altitude,
    )


def geo_to_local(p: GeoCoordinate, frame: LocalFrame) -> LocalPoint:
    """Project a GPS tag straight into the scene frame (zone pinned)."""
    easting, northing, zone, north = geo_to_utm(p, zone=frame.zone)
    if north != frame.north:
        raise GeodesyError("hemisphere does not match local frame")
    return utm_to_local(easting, northing, p.altitude, frame, zone=zone)
