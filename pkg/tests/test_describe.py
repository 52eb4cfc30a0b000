import math
from collections import Counter

import numpy as np
import pytest

from mobitok.describe import (
    ContextSummary,
    NeighborhoodIndex,
    describe_all,
    neighborhood_stats,
    read_descriptions,
    render_description,
    write_descriptions,
)
from mobitok.geo import EARTH_RADIUS_KM, LatLon, Location, haversine_km

KM_PER_DEG = math.pi * EARTH_RADIUS_KM / 180


def loc(i, lat, lon, cat="Bar", name=None):
    return Location(f"L{i:03d}", name or f"poi {i}", cat, LatLon(lat, lon))


def random_city(n=150, seed=0):
    rng = np.random.default_rng(seed)
    cats = ["Bar", "Coffee Shop", "Gym", "Park", "Office"]
    return [
        loc(i, 40.78 + rng.normal(0, 0.02), -73.97 + rng.normal(0, 0.02), cats[rng.integers(len(cats))])
        for i in range(n)
    ]


def test_single_location_has_no_context():
    only = loc(0, 1.0, 103.0)
    ctx = neighborhood_stats(only, [only], {}, 2.0, 10)
    assert ctx == ContextSummary()


def test_nearest_on_a_line():
    a, b, c = loc(0, 0, 0), loc(1, 0, 1 / KM_PER_DEG), loc(2, 0, 3 / KM_PER_DEG)
    ctx = neighborhood_stats(a, [a, b, c], {}, 5.0, 2)
    assert [n for n, _ in ctx.nearest_pois] == ["poi 1", "poi 2"]
    assert [d for _, d in ctx.nearest_pois] == pytest.approx([1.0, 3.0], abs=1e-9)


def test_top_category_leads_with_larger_count():
    target = loc(0, 0, 0, "Bar")
    others = [loc(1 + i, 0, 0.001 * (i + 1) / 100, "Bar") for i in range(47)]
    others += [loc(100 + i, 0.00001 * (i + 1), 0, "Coffee Shop") for i in range(37)]
    ctx = neighborhood_stats(target, [target] + others, {}, 2.0, 10)
    assert ctx.top_categories[0][:2] == ("Bar", 47)
    assert ctx.top_categories[1][:2] == ("Coffee Shop", 37)


def test_index_matches_brute_force_scan():
    locs = random_city()
    index = NeighborhoodIndex(locs, 2.0)
    for target in locs[:40]:
        want = sorted(o.id for o in locs if o.id != target.id and haversine_km(target.position, o.position) <= 2.0)
        assert sorted(o.id for _, o in index.within(target, 2.0)) == want
        brute = sorted(
            ((haversine_km(target.position, o.position), o.id) for o in locs if o.id != target.id)
        )[:10]
        assert [(d, o.id) for d, o in index.nearest(target, 10)] == brute


def test_category_average_is_mean_in_radius_count():
    locs = random_city(80, seed=3)
    index = NeighborhoodIndex(locs, 2.0)
    totals = Counter()
    for t in locs:
        for o in locs:
            if o.id != t.id and haversine_km(t.position, o.position) <= 2.0:
                totals[o.category] += 1
    assert index.category_avg == {c: math.floor(v / len(locs) + 0.5) for c, v in totals.items()}


def test_representative_pois_use_visit_counts():
    locs = random_city(60, seed=1)
    target = locs[0]
    inside = [o for o in locs[1:] if haversine_km(target.position, o.position) <= 2.0]
    visits = {o.id: (i % 4) for i, o in enumerate(inside)}
    ctx = neighborhood_stats(target, locs, visits, 2.0, 5)
    expect = sorted((o for o in inside if visits[o.id] > 0), key=lambda o: (-visits[o.id], o.id))[:5]
    assert [n for n, _ in ctx.representative_pois] == [o.name for o in expect]


def test_index_radius_mismatch():
    locs = random_city(5)
    with pytest.raises(ValueError):
        neighborhood_stats(locs[0], NeighborhoodIndex(locs, 2.0), {}, 1.0)


def test_render_empty_context():
    text = render_description(Location("x", "Spot", "Park", LatLon(0, 0)), ContextSummary(), 12, 10)
    assert text.splitlines() == [
        'The name of this location is "Spot" and its POI category is Park.',
        "The geographic coordinates for this location are (0.000000, 0.000000), "
        "with the corresponding geohash code s00000000000.",
        "The address is unknown.",
        "The top 10 nearby points-of-interest (POI) categories and their counts are:",
        "The 10 nearest POIs and their distances are:",
        "The 10 representative nearby POIs and their distances are:",
    ]


def test_render_reference_sample():
    target = Location(
        "hl", "Hi-Life Bar & Grill", "Bar", LatLon(40.785677, -73.976498), "Nightlife Spot",
        "6547 W 83rd St, New York, NY 10024, USA",
    )
    ctx = ContextSummary((("Bar", 47, 124), ("Coffee Shop", 37, 63)), (("Cafe Lalo", 0.0412),), ())
    text = render_description(target, ctx)
    assert 'The name of this location is "Hi-Life Bar & Grill"' in text
    assert "belonging to the parent category Nightlife Spot." in text
    assert "geohash code dr72h8gcy9m0" in text
    assert "The address is 6547 W 83rd St, New York, NY 10024, USA." in text
    assert "- Bar, 47 (avg: 124)\n- Coffee Shop, 37 (avg: 63)" in text
    assert "- Cafe Lalo, distance 0.04 km" in text
    assert render_description(target, ctx) == text


def test_describe_all_is_deterministic_and_roundtrips(tmp_path):
    locs = random_city(40)
    visits = {l.id: i % 3 for i, l in enumerate(locs)}
    a = describe_all(locs, visits)
    b = describe_all(list(reversed(locs)), visits)
    assert a == b
    write_descriptions(tmp_path / "d.jsonl", a)
    assert read_descriptions(tmp_path / "d.jsonl") == a
