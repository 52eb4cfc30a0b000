"""Geographic primitives: coordinates, locations, great-circle distance, geohash."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

EARTH_RADIUS_KM = 6371.0088
GEOHASH_ALPHABET = "0123456789bcdefghjkmnpqrstuvwxyz"
_GEOHASH_INDEX = {c: i for i, c in enumerate(GEOHASH_ALPHABET)}


@dataclass(frozen=True)
class LatLon:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class Location:
    id: str
    name: str
    category: str
    position: LatLon
    parent_category: str | None = None
    address: str | None = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("location id must be non-empty")
        if not self.name:
            raise ValueError(f"location {self.id!r}: name must be non-empty")
        if not self.category:
            raise ValueError(f"location {self.id!r}: category must be non-empty")

    @classmethod
    def from_dict(cls, obj: dict) -> "Location":
        return cls(
            id=str(obj["id"]),
            name=obj["name"],
            category=obj["category"],
            parent_category=obj.get("parent_category"),
            position=LatLon(float(obj["lat"]), float(obj["lon"])),
            address=obj.get("address"),
        )

    def to_dict(self) -> dict:
        out = {
            "id": self.id,
            "name": self.name,
            "category": self.category,
            "lat": self.position.lat,
            "lon": self.position.lon,
        }
        if self.parent_category is not None:
            out["parent_category"] = self.parent_category
        if self.address is not None:
            out["address"] = self.address
        return out


def haversine_km(a: LatLon, b: LatLon) -> float:
    # Sorting the endpoints makes the result bit-for-bit symmetric.
    if (a.lat, a.lon) > (b.lat, b.lon):
        a, b = b, a
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def haversine_km_array(lat: float, lon: float, lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
    """Vectorized distance from one point to many, in km."""
    phi1 = math.radians(lat)
    phi2 = np.radians(lats)
    dphi = phi2 - phi1
    dlmb = np.radians(np.asarray(lons) - lon)
    h = np.sin(dphi / 2) ** 2 + math.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def geohash_encode(p: LatLon, precision: int = 12) -> str:
    if not isinstance(precision, int) or not 1 <= precision <= 12:
        raise ConfigError(f"geohash precision must be in [1, 12], got {precision!r}", field="precision")
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    chars = []
    bit = 0
    ch = 0
    even = True  # even bits encode longitude
    while len(chars) < precision:
        if even:
            mid = (lon_lo + lon_hi) / 2
            if p.lon >= mid:
                ch = (ch << 1) | 1
                lon_lo = mid
            else:
                ch <<= 1
                lon_hi = mid
        else:
            mid = (lat_lo + lat_hi) / 2
            if p.lat >= mid:
                ch = (ch << 1) | 1
                lat_lo = mid
            else:
                ch <<= 1
                lat_hi = mid
        even = not even
        bit += 1
        if bit == 5:
            chars.append(GEOHASH_ALPHABET[ch])
            bit = 0
            ch = 0
    return "".join(chars)


@dataclass(frozen=True)
class GeohashCell:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    center: LatLon = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self,
            "center",
            LatLon((self.lat_min + self.lat_max) / 2, (self.lon_min + self.lon_max) / 2),
        )

    def contains(self, p: LatLon) -> bool:
        return self.lat_min <= p.lat <= self.lat_max and self.lon_min <= p.lon <= self.lon_max


def geohash_decode(code: str) -> GeohashCell:
    """Cell bounds of a geohash. Used for round-trip checks only."""
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    even = True
    for c in code:
        try:
            value = _GEOHASH_INDEX[c]
        except KeyError:
            raise ValueError(f"invalid geohash character {c!r}") from None
        for shift in range(4, -1, -1):
            b = (value >> shift) & 1
            if even:
                mid = (lon_lo + lon_hi) / 2
                if b:
                    lon_lo = mid
                else:
                    lon_hi = mid
            else:
                mid = (lat_lo + lat_hi) / 2
                if b:
                    lat_lo = mid
                else:
                    lat_hi = mid
            even = not even
    return GeohashCell(lat_lo, lat_hi, lon_lo, lon_hi)


def grid_cell_location(p: LatLon, cell_m: float = 400.0, origin: LatLon | None = None) -> Location:
    """Snap a point to a square grid cell and describe the cell as a Location.

    Cells are laid out on an equirectangular projection around ``origin``
    (defaults to (0, 0)); the id encodes the (row, col) index.
    """
    origin = origin or LatLon(0.0, 0.0)
    km_per_deg = math.pi * EARTH_RADIUS_KM / 180.0
    cos0 = math.cos(math.radians(origin.lat))
    cell_km = cell_m / 1000.0
    row = math.floor((p.lat - origin.lat) * km_per_deg / cell_km)
    col = math.floor((p.lon - origin.lon) * km_per_deg * cos0 / cell_km)
    lat_c = origin.lat + (row + 0.5) * cell_km / km_per_deg
    lon_c = origin.lon + (col + 0.5) * cell_km / (km_per_deg * cos0)
    return Location(
        id=f"grid_{row}_{col}",
        name=f"Grid cell {row},{col}",
        category="grid-cell",
        position=LatLon(lat_c, lon_c),
    )
