import pytest

from mobitok.config import load_config, parse_override
from mobitok.errors import ConfigError

from helpers import FIXTURES


def write(tmp_path, text):
    p = tmp_path / "c.toml"
    p.write_text(text)
    return p


def test_defaults_and_relative_paths(tmp_path):
    cfg = load_config(write(tmp_path, '[paths]\ncheckins = "x.csv"\n'), env={})
    assert cfg.path("checkins") == tmp_path / "x.csv"
    assert cfg.path("embeddings") is None
    assert cfg.quantizer.levels == 4 and cfg.quantizer.codebook_size == 256
    assert cfg.decode.width == 15 and cfg.eval.ks == (1, 5, 10)


@pytest.mark.parametrize(
    "text,value",
    [("quantizer.levels=3", 3), ("eval.ks=[1, 3]", [1, 3]), ("paths.output_dir=runs/x", "runs/x"), ("decode.k=0.5", 0.5)],
)
def test_parse_override(text, value):
    assert parse_override(text)[2] == value


def test_overrides_apply(tmp_path):
    cfg = load_config(write(tmp_path, "[quantizer]\nlevels = 2\n"), ["quantizer.levels=3", "eval.ks=[1,3]"], env={})
    assert cfg.quantizer.levels == 3
    assert cfg.eval.ks == (1, 3)


def test_seed_env_overrides_every_seed(tmp_path):
    cfg = load_config(write(tmp_path, "[sft]\nseed = 4\n"), env={"MOBITOK_SEED": "9"})
    assert cfg.quantizer.seed == cfg.sft.seed == cfg.eval.seed == cfg.consistency.seed == 9
    with pytest.raises(ConfigError) as exc:
        load_config(None, env={"MOBITOK_SEED": "abc"})
    assert exc.value.field == "MOBITOK_SEED"


@pytest.mark.parametrize(
    "text,field",
    [
        ("[nope]\nx = 1\n", "nope"),
        ("[quantizer]\ncolour = 1\n", "quantizer.colour"),
        ("[quantizer]\nlevels = 0\n", "quantizer.levels"),
        ('[decode]\nwidth = "wide"\n', "decode.width"),
    ],
)
def test_bad_settings_name_the_field(tmp_path, text, field):
    with pytest.raises(ConfigError) as exc:
        load_config(write(tmp_path, text), env={})
    assert exc.value.field == field


def test_validate_checks_inputs_and_ranges(tmp_path):
    inputs = [f"paths.checkins={FIXTURES / 'checkins_50.csv'}", f"paths.locations={FIXTURES / 'locations_50.jsonl'}"]
    load_config(None, inputs, env={}).validate()
    for extra, field in [
        (["paths.checkins=missing.csv"], "paths.checkins"),
        (["decode.topn=3"], "decode.topn"),
        (["ingest.fractions=[0.5, 0.5, 0.5]"], "ingest.fractions"),
    ]:
        with pytest.raises(ConfigError) as exc:
            load_config(None, inputs + extra, env={}).validate()
        assert exc.value.field == field
    assert load_config(None, [], env={}).to_dict()["eval"]["ks"] == [1, 5, 10]


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "none.toml", env={})
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "not [valid"), env={})
