"""Pipeline configuration: one TOML file, a section per stage.

Example::

    [paths]
    checkins = "data/checkins.csv"
    locations = "data/locations.jsonl"
    output_dir = "runs/city"

    [quantizer]
    levels = 4
    codebook_size = 256

Relative paths resolve against the config file's directory. ``--set
section.key=value`` overrides take TOML literals (bare words fall back to
strings). ``MOBITOK_SEED`` replaces every seed.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .quantizer import QuantizerConfig

SEED_ENV = "MOBITOK_SEED"


@dataclass
class PathsConfig:
    checkins: str = ""
    checkins_format: str = "csv"
    locations: str = ""
    embeddings: str = ""
    output_dir: str = "mobitok-out"


@dataclass
class IngestConfig:
    min_visits: int = 5
    gap_hours: float = 24.0
    min_len: int = 3
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)


@dataclass
class DescribeConfig:
    radius_km: float = 2.0
    k: int = 10
    geohash_precision: int = 12


@dataclass
class EmbedConfig:
    dim: int = 256


@dataclass
class SftSection:
    ratios: tuple[float, ...] = (0.2, 0.3, 0.4, 0.5)
    template_version: str = "v1"
    seed: int = 0
    timezone: str = ""
    profile_k: int = 5


@dataclass
class DecodeConfig:
    order: int = 3
    k: float = 0.1
    width: int = 15
    topn: int = 10


@dataclass
class EvalConfig:
    ks: tuple[int, ...] = (1, 5, 10)
    ratios: tuple[float, ...] = (0.2, 0.3, 0.4, 0.5)
    seed: int = 0


@dataclass
class ConsistencyConfig:
    group_size: int = 10
    seed: int = 0


@dataclass
class SweepConfig:
    codebook_sizes: tuple[int, ...] = (64, 128, 256, 512)
    levels: tuple[int, ...] = (4,)


SECTIONS = {
    "paths": PathsConfig,
    "ingest": IngestConfig,
    "describe": DescribeConfig,
    "embed": EmbedConfig,
    "quantizer": QuantizerConfig,
    "sft": SftSection,
    "decode": DecodeConfig,
    "eval": EvalConfig,
    "consistency": ConsistencyConfig,
    "sweep": SweepConfig,
}


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    describe: DescribeConfig = field(default_factory=DescribeConfig)
    embed: EmbedConfig = field(default_factory=EmbedConfig)
    quantizer: QuantizerConfig = field(default_factory=QuantizerConfig)
    sft: SftSection = field(default_factory=SftSection)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    consistency: ConsistencyConfig = field(default_factory=ConsistencyConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    base_dir: Path = field(default_factory=Path.cwd)

    def path(self, name: str) -> Path | None:
        value = getattr(self.paths, name)
        if not value:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self) -> Path:
        return self.path("output_dir")  # type: ignore[return-value]

    def validate(self, require_inputs: bool = True) -> None:
        if require_inputs:
            for name in ("checkins", "locations"):
                p = self.path(name)
                if p is None:
                    raise ConfigError(f"paths.{name} is required", field=f"paths.{name}")
                if not p.exists():
                    raise ConfigError(f"paths.{name} does not exist: {p}", field=f"paths.{name}")
        emb = self.path("embeddings")
        if emb is not None and not emb.exists():
            raise ConfigError(f"paths.embeddings does not exist: {emb}", field="paths.embeddings")
        checks = [
            ("paths.checkins_format", self.paths.checkins_format in ("csv", "jsonl")),
            ("ingest.min_visits", self.ingest.min_visits >= 1),
            ("ingest.gap_hours", self.ingest.gap_hours > 0),
            ("ingest.min_len", self.ingest.min_len >= 1),
            (
                "ingest.fractions",
                len(self.ingest.fractions) == 3
                and all(f > 0 for f in self.ingest.fractions)
                and abs(sum(self.ingest.fractions) - 1) <= 1e-9,
            ),
            ("describe.radius_km", self.describe.radius_km > 0),
            ("describe.k", self.describe.k >= 1),
            ("describe.geohash_precision", 1 <= self.describe.geohash_precision <= 12),
            ("embed.dim", self.embed.dim >= 8),
            ("sft.ratios", bool(self.sft.ratios) and all(0 < r < 1 for r in self.sft.ratios)),
            ("sft.profile_k", self.sft.profile_k >= 1),
            ("decode.order", self.decode.order >= 1),
            ("decode.k", self.decode.k > 0),
            ("decode.width", self.decode.width >= 1),
            ("decode.topn", self.decode.topn >= max(self.eval.ks)),
            ("eval.ks", bool(self.eval.ks) and all(k >= 1 for k in self.eval.ks)),
            ("eval.ratios", bool(self.eval.ratios) and all(0 < r < 1 for r in self.eval.ratios)),
            ("consistency.group_size", self.consistency.group_size >= 1),
            ("sweep.codebook_sizes", all(k >= 1 for k in self.sweep.codebook_sizes)),
            ("sweep.levels", all(1 <= l <= 26 for l in self.sweep.levels)),
            ("quantizer.levels", self.quantizer.levels <= 26),
        ]
        for name, ok in checks:
            if not ok:
                section, key = name.split(".")
                raise ConfigError(f"invalid value for {name}: {getattr(getattr(self, section), key)!r}", field=name)
        self.quantizer.validate()

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            section = getattr(self, name)
            out[name] = {f.name: _plain(getattr(section, f.name)) for f in fields(section)}
        return out


def _plain(v: Any) -> Any:
    return list(v) if isinstance(v, tuple) else v


def _build_section(name: str, cls: type, values: Mapping[str, Any]):
    known = {f.name: f for f in fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(f"unknown setting {name}.{key}", field=f"{name}.{key}")
    kwargs = {}
    for key, value in values.items():
        default = known[key].default
        if isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        elif isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        elif default is not None and not isinstance(default, tuple) and type(value) is not type(default):
            if not (isinstance(default, float) and isinstance(value, (int, float))):
                raise ConfigError(
                    f"{name}.{key} expects {type(default).__name__}, got {type(value).__name__}", field=f"{name}.{key}"
                )
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        exc.field = f"{name}.{exc.field}" if exc.field else name
        raise


def parse_override(text: str) -> tuple[str, str, Any]:
    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise ConfigError(f"override {text!r} is not of the form section.key=value", field=text)
    lhs, raw = text.split("=", 1)
    section, key = lhs.strip().split(".", 1)
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return section, key, value


def load_config(
    path: str | Path | None, overrides: Sequence[str] = (), env: Mapping[str, str] | None = None
) -> PipelineConfig:
    env = os.environ if env is None else env
    raw: dict[str, dict] = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            raw = tomllib.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found", field="config") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid TOML: {exc}", field="config") from None
        base = path.resolve().parent
    for item in overrides:
        section, key, value = parse_override(item)
        raw.setdefault(section, {})[key] = value
    for section in raw:
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]", field=section)
    if SEED_ENV in env:
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}", field=SEED_ENV) from None
        for section in ("quantizer", "sft", "eval", "consistency"):
            raw.setdefault(section, {})["seed"] = seed
    built = {name: _build_section(name, cls, raw.get(name, {})) for name, cls in SECTIONS.items()}
    return PipelineConfig(**built, base_dir=base)
