"""Textual location descriptions built from attributes and neighborhood context."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geo import EARTH_RADIUS_KM, Location, geohash_encode, haversine_km


@dataclass(frozen=True)
class ContextSummary:
    top_categories: tuple[tuple[str, int, int], ...] = ()
    nearest_pois: tuple[tuple[str, float], ...] = ()
    representative_pois: tuple[tuple[str, float], ...] = ()


def _unit_xyz(lat, lon):
    phi = np.radians(lat)
    lmb = np.radians(lon)
    return np.stack([np.cos(phi) * np.cos(lmb), np.cos(phi) * np.sin(lmb), np.sin(phi)], axis=-1)


def _chord(km: float) -> float:
    return 2.0 * math.sin(min(math.pi, km / EARTH_RADIUS_KM) / 2.0)


@dataclass
class NeighborhoodIndex:
    """Read-only spatial index over a location set.

    Also holds the per-category mean in-radius count used for the
    ``(avg: N)`` annotation. The averages depend on ``radius_km``, so an
    index is tied to a single radius.
    """

    locations: list[Location]
    radius_km: float = 2.0
    _pos: dict[str, int] = field(init=False, repr=False)
    _tree: cKDTree = field(init=False, repr=False)
    category_avg: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.locations = sorted(self.locations, key=lambda l: l.id)
        self._pos = {loc.id: i for i, loc in enumerate(self.locations)}
        lats = np.array([l.position.lat for l in self.locations], dtype=float)
        lons = np.array([l.position.lon for l in self.locations], dtype=float)
        self._tree = cKDTree(_unit_xyz(lats, lons).reshape(-1, 3))
        totals: Counter[str] = Counter()
        for loc in self.locations:
            totals.update(self.in_radius_categories(loc))
        n = max(1, len(self.locations))
        self.category_avg = {c: int(math.floor(v / n + 0.5)) for c, v in totals.items()}

    def __len__(self) -> int:
        return len(self.locations)

    def _xyz(self, loc: Location):
        return _unit_xyz(loc.position.lat, loc.position.lon)

    def within(self, loc: Location, radius_km: float) -> list[tuple[float, Location]]:
        """Other locations within radius_km, as (distance, location), unsorted."""
        if not self.locations:
            return []
        # Slack on the chord radius, exact filter on haversine afterwards.
        idx = self._tree.query_ball_point(self._xyz(loc), _chord(radius_km) * (1 + 1e-9) + 1e-12)
        out = []
        for i in idx:
            other = self.locations[i]
            if other.id == loc.id:
                continue
            d = haversine_km(loc.position, other.position)
            if d <= radius_km:
                out.append((d, other))
        return out

    def in_radius_categories(self, loc: Location) -> Counter[str]:
        return Counter(o.category for _, o in self.within(loc, self.radius_km))

    def nearest(self, loc: Location, k: int) -> list[tuple[float, Location]]:
        others = len(self.locations) - (1 if loc.id in self._pos else 0)
        k_eff = min(k, others)
        if k_eff <= 0:
            return []
        kq = min(len(self.locations), k_eff + 1)
        dist, _ = self._tree.query(self._xyz(loc), k=kq)
        dist = np.atleast_1d(dist)
        # Pull everything within the k-th chord so ties at the boundary are seen.
        cutoff = float(dist.max())
        idx = self._tree.query_ball_point(self._xyz(loc), cutoff * (1 + 1e-9) + 1e-12)
        cands = []
        for i in idx:
            other = self.locations[i]
            if other.id == loc.id:
                continue
            cands.append((haversine_km(loc.position, other.position), other))
        cands.sort(key=lambda t: (t[0], t[1].id))
        return cands[:k_eff]


def neighborhood_stats(
    target: Location,
    all_locations: Sequence[Location] | NeighborhoodIndex,
    visits: Mapping[str, int],
    radius_km: float = 2.0,
    k: int = 10,
) -> ContextSummary:
    """Summarize a location's surroundings.

    ``all_locations`` may be a prebuilt :class:`NeighborhoodIndex` (reuse it
    when describing many locations); a plain sequence builds one on the fly.
    ``visits`` should be counted on the training split only.
    """
    if isinstance(all_locations, NeighborhoodIndex):
        index = all_locations
        if not math.isclose(index.radius_km, radius_km):
            raise ValueError(f"index built for radius {index.radius_km} km, asked for {radius_km} km")
    else:
        index = NeighborhoodIndex(list(all_locations), radius_km)

    inside = index.within(target, radius_km)
    cat_counts = Counter(o.category for _, o in inside)
    cats = sorted(cat_counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    top_categories = tuple((c, n, index.category_avg.get(c, 0)) for c, n in cats)

    nearest = tuple((o.name, d) for d, o in index.nearest(target, k))

    popular = [(visits.get(o.id, 0), d, o) for d, o in inside]
    popular = [p for p in popular if p[0] > 0]
    popular.sort(key=lambda t: (-t[0], t[2].id))
    representative = tuple((o.name, d) for _, d, o in popular[:k])
    return ContextSummary(top_categories, nearest, representative)


def render_description(loc: Location, ctx: ContextSummary, geohash_precision: int = 12, k: int = 10) -> str:
    first = f'The name of this location is "{loc.name}" and its POI category is {loc.category}'
    if loc.parent_category:
        first += f", belonging to the parent category {loc.parent_category}"
    lat, lon = loc.position.lat, loc.position.lon
    lines = [
        first + ".",
        f"The geographic coordinates for this location are ({lat:.6f}, {lon:.6f}), "
        f"with the corresponding geohash code {geohash_encode(loc.position, geohash_precision)}.",
        f"The address is {loc.address}." if loc.address else "The address is unknown.",
        f"The top {k} nearby points-of-interest (POI) categories and their counts are:",
    ]
    lines += [f"- {c}, {n} (avg: {avg})" for c, n, avg in ctx.top_categories]
    lines.append(f"The {k} nearest POIs and their distances are:")
    lines += [f"- {name}, distance {d:.2f} km" for name, d in ctx.nearest_pois]
    lines.append(f"The {k} representative nearby POIs and their distances are:")
    lines += [f"- {name}, distance {d:.2f} km" for name, d in ctx.representative_pois]
    return "\n".join(lines)


def describe_all(
    locations: Sequence[Location],
    visits: Mapping[str, int],
    radius_km: float = 2.0,
    k: int = 10,
    geohash_precision: int = 12,
) -> dict[str, str]:
    index = NeighborhoodIndex(list(locations), radius_km)
    return {
        loc.id: render_description(loc, neighborhood_stats(loc, index, visits, radius_km, k), geohash_precision, k)
        for loc in index.locations
    }


def write_descriptions(path: str | Path, descriptions: Mapping[str, str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for loc_id in sorted(descriptions):
            fh.write(json.dumps({"location_id": loc_id, "description": descriptions[loc_id]}, ensure_ascii=False) + "\n")


def read_descriptions(path: str | Path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out[obj["location_id"]] = obj["description"]
    return out


def count_visits(location_ids: Iterable[str]) -> Counter[str]:
    return Counter(location_ids)
