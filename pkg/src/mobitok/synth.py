"""Seeded synthetic city: clustered POIs and users with Markov visiting habits.

Used as a stand-in for the non-redistributable check-in datasets::

    python -m mobitok.synth --out data/city --locations 200 --users 50 --seed 0
"""

from __future__ import annotations

import argparse
import json
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .geo import LatLon, Location
from .ingest import MobilityRecord, checkins_to_csv

CATEGORIES = [
    ("Coffee Shop", "Food"),
    ("Noodle House", "Food"),
    ("Hawker Centre", "Food"),
    ("Bar", "Nightlife Spot"),
    ("Night Club", "Nightlife Spot"),
    ("Office", "Professional & Other Places"),
    ("University", "College & University"),
    ("Metro Station", "Travel & Transport"),
    ("Bus Stop", "Travel & Transport"),
    ("Gym", "Outdoors & Recreation"),
    ("Park", "Outdoors & Recreation"),
    ("Shopping Mall", "Shop & Service"),
    ("Supermarket", "Shop & Service"),
    ("Cinema", "Arts & Entertainment"),
    ("Museum", "Arts & Entertainment"),
    ("Residential Building", "Residence"),
]
STREETS = ["Orchard", "Jurong", "Changi", "Bedok", "Clementi", "Tampines", "Serangoon", "Bukit Timah", "Novena", "Kallang"]
CITY_CENTER = (1.3521, 103.8198)


@dataclass
class City:
    locations: list[Location]
    records: list[MobilityRecord]
    clusters: dict[str, int]


def generate_city(
    n_locations: int = 200,
    n_users: int = 50,
    seed: int = 0,
    n_clusters: int = 10,
    trajectories_per_user: int = 24,
    explore_prob: float = 0.05,
) -> City:
    rng = np.random.default_rng(seed)
    centers = np.array(CITY_CENTER) + rng.uniform(-0.08, 0.08, size=(n_clusters, 2))
    # Each neighbourhood leans towards a handful of categories.
    cat_weights = rng.dirichlet(np.full(len(CATEGORIES), 0.4), size=n_clusters)

    locations = []
    clusters = {}
    for i in range(n_locations):
        c = i % n_clusters
        lat, lon = centers[c] + rng.normal(0.0, 0.004, size=2)
        cat, parent = CATEGORIES[rng.choice(len(CATEGORIES), p=cat_weights[c])]
        address = None
        if rng.random() < 0.8:
            address = f"{rng.integers(1, 999)} {STREETS[c % len(STREETS)]} Road, Synthetic City"
        loc_id = f"L{i:04d}"
        locations.append(
            Location(loc_id, f"{cat} {i:03d}", cat, LatLon(round(float(lat), 6), round(float(lon), 6)), parent, address)
        )
        clusters[loc_id] = c

    by_cluster = [[l.id for l in locations if clusters[l.id] == c] for c in range(n_clusters)]
    all_ids = [l.id for l in locations]
    start_day = datetime(2012, 4, 2, tzinfo=timezone.utc)
    records = []
    for u in range(n_users):
        user = f"U{u:03d}"
        home = int(rng.integers(n_clusters))
        local = list(rng.choice(by_cluster[home], size=min(6, len(by_cluster[home])), replace=False))
        away_pool = [x for x in all_ids if x not in local]
        favorites = local + list(rng.choice(away_pool, size=2, replace=False))
        n_fav = len(favorites)
        trans = np.full((n_fav, n_fav), 0.15 / n_fav)
        for a in range(n_fav):
            first, second = rng.choice([b for b in range(n_fav) if b != a], size=2, replace=False)
            trans[a, first] += 0.6
            trans[a, second] += 0.25
        trans /= trans.sum(axis=1, keepdims=True)
        start_p = np.full(n_fav, 0.5 / (n_fav - 1))
        start_p[0] = 0.5

        day = start_day + timedelta(days=int(rng.integers(0, 3)))
        for _ in range(trajectories_per_user):
            t = day + timedelta(hours=int(rng.integers(7, 11)), minutes=int(rng.integers(0, 60)))
            state = int(rng.choice(n_fav, p=start_p))
            for _ in range(int(rng.integers(3, 8))):
                loc = favorites[state]
                if rng.random() < explore_prob:
                    loc = all_ids[int(rng.integers(len(all_ids)))]
                records.append(MobilityRecord(user, loc, t))
                t += timedelta(minutes=int(rng.integers(45, 150)))
                state = int(rng.choice(n_fav, p=trans[state]))
            day += timedelta(days=int(rng.integers(2, 4)))
    records.sort(key=lambda r: (r.user_id, r.timestamp))
    return City(locations, records, clusters)


def write_city(city: City, out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    checkins = out / "checkins.csv"
    locs = out / "locations.jsonl"
    checkins.write_text(checkins_to_csv(city.records), encoding="utf-8")
    with open(locs, "w", encoding="utf-8") as fh:
        for loc in city.locations:
            fh.write(json.dumps(loc.to_dict(), sort_keys=True) + "\n")
    return checkins, locs


def main(argv: list[str] | None = None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--locations", type=int, default=200)
    ap.add_argument("--users", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    city = generate_city(args.locations, args.users, args.seed)
    checkins, locs = write_city(city, args.out)
    print(f"wrote {len(city.records)} check-ins to {checkins} and {len(city.locations)} locations to {locs}")


if __name__ == "__main__":
    main()
