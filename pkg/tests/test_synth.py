from collections import Counter

from mobitok import synth
from mobitok.synth import generate_city, write_city


def test_city_is_seeded():
    a, b, c = generate_city(60, 10, seed=1), generate_city(60, 10, seed=1), generate_city(60, 10, seed=2)
    assert a.records == b.records and a.locations == b.locations
    assert a.records != c.records


def test_city_shapes():
    city = generate_city(60, 10, seed=0)
    ids = {l.id for l in city.locations}
    assert len(ids) == 60
    assert {r.user_id for r in city.records} == {f"U{i:03d}" for i in range(10)}
    assert {r.location_id for r in city.records} <= ids
    assert set(city.clusters) == ids
    assert len(Counter(l.category for l in city.locations)) > 1


def test_write_and_cli(tmp_path, capsys):
    checkins, locs = write_city(generate_city(30, 5, seed=0), tmp_path / "a")
    assert checkins.read_text().count("\n") > 1 and locs.read_text().count("\n") == 30
    synth.main(["--out", str(tmp_path / "b"), "--locations", "30", "--users", "5"])
    assert "30 locations" in capsys.readouterr().out
    assert (tmp_path / "b" / "checkins.csv").read_bytes() == checkins.read_bytes()
