"""Instruction-tuning records for next-location prediction, recovery and token/text alignment.

Prompt wording lives in versioned JSON templates under ``mobitok/templates``.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone, tzinfo
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from zoneinfo import ZoneInfo

from .errors import ConfigError
from .ingest import DatasetSplit, Trajectory, format_timestamp
from .tokens import TokenMap, parse_tokens

TASKS = ("next_prediction", "recovery", "text_to_token", "token_to_text")
FORMAT_VERSION = 1
WEEKDAYS = ("Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday")


@lru_cache(maxsize=None)
def load_template(version: str = "v1") -> dict:
    try:
        text = (resources.files("mobitok") / "templates" / f"{version}.json").read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"unknown template version {version!r}", field="template_version") from None
    return json.loads(text)


def resolve_tz(name: str | None) -> tzinfo:
    return ZoneInfo(name) if name else timezone.utc


def render_time(ts: datetime, tz: tzinfo = timezone.utc) -> str:
    """``Monday 09:15, 2012-04-03`` (locale independent)."""
    local = ts.astimezone(tz)
    return f"{WEEKDAYS[local.weekday()]} {local:%H:%M}, {local:%Y-%m-%d}"


@dataclass(frozen=True)
class UserProfile:
    hours: tuple[tuple[int, int], ...] = ()
    locations: tuple[tuple[str, int], ...] = ()
    categories: tuple[tuple[str, int], ...] = ()


def _top(counter: Counter, k: int) -> tuple:
    return tuple(sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))[:k])


def build_user_profile(
    history: Iterable[Trajectory],
    token_map: TokenMap,
    categories: Mapping[str, str],
    k: int = 5,
    tz: tzinfo = timezone.utc,
) -> UserProfile:
    """Top-k hours, locations (as token strings) and categories of a training history."""
    hours: Counter[int] = Counter()
    locs: Counter[str] = Counter()
    cats: Counter[str] = Counter()
    for traj in history:
        for rec in traj.records:
            hours[rec.timestamp.astimezone(tz).hour] += 1
            locs[token_map.text(rec.location_id)] += 1
            cat = categories.get(rec.location_id)
            if cat:
                cats[cat] += 1
    return UserProfile(_top(hours, k), _top(locs, k), _top(cats, k))


def render_profile(profile: UserProfile, template: dict) -> str:
    p = template["profile"]

    def items(pairs, fmt_key=str):
        if not pairs:
            return p["empty"]
        return ", ".join(p["item"].format(key=fmt_key(key), count=n) for key, n in pairs)

    return "\n".join(
        [
            p["header"],
            p["hours"].format(items=items(profile.hours, lambda h: f"{h:02d}:00")),
            p["locations"].format(items=items(profile.locations)),
            p["categories"].format(items=items(profile.categories)),
        ]
    )


@dataclass
class SftExample:
    task: str
    instruction: str
    input: str
    output: str
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"task": self.task, "instruction": self.instruction, "input": self.input, "output": self.output, "meta": self.meta}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SftExample":
        return cls(d["task"], d["instruction"], d["input"], d["output"], dict(d.get("meta", {})))

    def validate(self, vocabulary: frozenset[str] | set[str]) -> None:
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if not self.output:
            raise ValueError(f"{self.task} example has empty output")
        for part in (self.instruction, self.input, self.output):
            unknown = [t for t in parse_tokens(part) if t not in vocabulary]
            if unknown:
                raise ValueError(f"{self.task} example uses tokens outside the map: {unknown[:3]}")


def _visit_line(template: dict, ts: datetime, tokens: str, tz: tzinfo) -> str:
    return template["visit"].format(time=render_time(ts, tz), tokens=tokens)


def make_next_prediction_example(
    traj: Trajectory,
    profile: UserProfile,
    token_map: TokenMap,
    template: dict | None = None,
    tz: tzinfo = timezone.utc,
    index: int = 0,
) -> SftExample | None:
    """Prompt with profile + first n-1 visits; target is the last visit. None if too short."""
    if len(traj) < 2:
        return None
    template = template or load_template()
    t = template["next_prediction"]
    visits = "\n".join(_visit_line(template, r.timestamp, token_map.text(r.location_id), tz) for r in traj.records[:-1])
    last = traj.records[-1]
    prompt = t["input"].format(
        profile=render_profile(profile, template), visits=visits, next_time=render_time(last.timestamp, tz)
    )
    meta = {"user_id": traj.user_id, "trajectory_index": index, "trajectory_start": format_timestamp(traj.start)}
    return SftExample("next_prediction", t["instruction"], prompt, token_map.text(last.location_id), meta)


def recovery_rng(seed: int, traj: Trajectory, salt: str = "") -> random.Random:
    """RNG keyed on (seed, trajectory identity, salt); stable across runs and platforms."""
    key = f"{seed}|{traj.user_id}|{format_timestamp(traj.start)}|{salt}".encode("utf-8")
    return random.Random(int.from_bytes(hashlib.sha256(key).digest()[:8], "little"))


def mask_count(n: int, ratio: float) -> int:
    # Round half up; the epsilon absorbs float error such as 0.3 * 5 = 1.4999...
    m = max(1, math.floor(ratio * n + 0.5 + 1e-9))
    return min(m, n - 1)


def mask_positions(n: int, ratio: float, rng: random.Random) -> list[int]:
    if not 0 < ratio < 1:
        raise ConfigError(f"mask ratio must lie in (0, 1), got {ratio}", field="ratio")
    if n < 2:
        raise ValueError(f"cannot mask a trajectory of length {n}")
    return sorted(rng.sample(range(n), mask_count(n, ratio)))


def make_recovery_example(
    traj: Trajectory,
    ratio: float,
    seed: int,
    token_map: TokenMap,
    template: dict | None = None,
    tz: tzinfo = timezone.utc,
    index: int = 0,
) -> SftExample:
    if not 0 < ratio < 1:
        raise ConfigError(f"mask ratio must lie in (0, 1), got {ratio}", field="ratio")
    if len(traj) < 3:
        raise ValueError(f"recovery needs at least 3 records, trajectory has {len(traj)}")
    template = template or load_template()
    masked = mask_positions(len(traj), ratio, recovery_rng(seed, traj, "sft"))
    mset = set(masked)
    lines = []
    for i, r in enumerate(traj.records):
        tokens = template["mask"] if i in mset else token_map.text(r.location_id)
        lines.append(_visit_line(template, r.timestamp, tokens, tz))
    output = "\n".join(
        _visit_line(template, traj.records[i].timestamp, token_map.text(traj.records[i].location_id), tz) for i in masked
    )
    t = template["recovery"]
    meta = {
        "user_id": traj.user_id,
        "trajectory_index": index,
        "trajectory_start": format_timestamp(traj.start),
        "mask_positions": masked,
        "ratio": ratio,
    }
    return SftExample("recovery", t["instruction"], t["input"].format(visits="\n".join(lines)), output, meta)


def make_alignment_examples(
    loc_id: str, description: str, token_map: TokenMap, template: dict | None = None
) -> tuple[SftExample, SftExample]:
    """(text_to_token, token_to_text) pair with mirrored input/output."""
    template = template or load_template()
    tokens = token_map.text(loc_id)
    t2k, k2t = template["text_to_token"], template["token_to_text"]
    meta = {"location_id": loc_id}
    return (
        SftExample("text_to_token", t2k["instruction"], t2k["input"].format(description=description), tokens, dict(meta)),
        SftExample("token_to_text", k2t["instruction"], k2t["input"].format(tokens=tokens), description, dict(meta)),
    )


@dataclass
class SftConfig:
    ratios: tuple[float, ...] = (0.2, 0.3, 0.4, 0.5)
    template_version: str = "v1"
    seed: int = 0
    timezone: str | None = None
    profile_k: int = 5

    def __post_init__(self):
        self.ratios = tuple(float(r) for r in self.ratios)
        if not self.ratios or any(not 0 < r < 1 for r in self.ratios):
            raise ConfigError(f"recovery ratios must lie in (0, 1), got {self.ratios}", field="ratios")


def build_dataset(
    splits: DatasetSplit,
    token_map: TokenMap,
    categories: Mapping[str, str],
    descriptions: Mapping[str, str],
    cfg: SftConfig | None = None,
) -> tuple[list[SftExample], dict]:
    """All four tasks from the training split plus every mapped location.

    Returns the shuffled examples and a manifest with per-task counts.
    """
    cfg = cfg or SftConfig()
    template = load_template(cfg.template_version)
    tz = resolve_tz(cfg.timezone)

    by_user: dict[str, list[Trajectory]] = {}
    for traj in splits.train:
        by_user.setdefault(traj.user_id, []).append(traj)

    keyed: list[tuple[tuple, SftExample]] = []
    for user_id in sorted(by_user):
        history = sorted(by_user[user_id], key=lambda t: t.start)
        profile = build_user_profile(history, token_map, categories, cfg.profile_k, tz)
        for i, traj in enumerate(history):
            where = f"user {user_id!r} trajectory {i}"
            try:
                nxt = make_next_prediction_example(traj, profile, token_map, template, tz, i)
                if nxt is None:
                    raise ValueError("trajectory shorter than 2 records")
                ratio = recovery_rng(cfg.seed, traj, "ratio").choice(cfg.ratios)
                rec = make_recovery_example(traj, ratio, cfg.seed, token_map, template, tz, i)
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{where}: {exc}") from exc
            keyed.append((("next_prediction", user_id, i), nxt))
            keyed.append((("recovery", user_id, i), rec))

    for loc_id, _ in token_map.items():
        if loc_id not in descriptions:
            raise ValueError(f"location {loc_id!r} has no description")
        t2k, k2t = make_alignment_examples(loc_id, descriptions[loc_id], token_map, template)
        keyed.append((("text_to_token", loc_id, 0), t2k))
        keyed.append((("token_to_text", loc_id, 0), k2t))

    keyed.sort(key=lambda kv: kv[0])
    examples = [ex for _, ex in keyed]
    random.Random(cfg.seed).shuffle(examples)
    counts = Counter(ex.task for ex in examples)
    manifest = {
        "format_version": FORMAT_VERSION,
        "counts": {task: counts.get(task, 0) for task in TASKS},
        "total": len(examples),
        "seed": cfg.seed,
        "template_version": template["version"],
        "ratios": list(cfg.ratios),
    }
    return examples, manifest


def write_dataset(path: str | Path, examples: Sequence[SftExample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


def read_dataset(path: str | Path) -> list[SftExample]:
    with open(path, encoding="utf-8") as fh:
        return [SftExample.from_dict(json.loads(line)) for line in fh if line.strip()]


def leaked_examples(examples: Iterable[SftExample], held_out: Iterable[Trajectory]) -> list[SftExample]:
    """Examples whose source trajectory belongs to a held-out split."""
    keys = {t.key() for t in held_out}
    return [
        ex
        for ex in examples
        if "trajectory_start" in ex.meta and (ex.meta["user_id"], ex.meta["trajectory_start"]) in keys
    ]
