"""Check-in parsing and trajectory preprocessing.

Pipeline order: parse -> filter sparse locations (single pass) -> group into
trajectories by time gap -> chronological per-user split.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from itertools import groupby
from pathlib import Path
from typing import IO, Iterable, Sequence

from .errors import ConfigError, ParseError
from .geo import Location

CHECKIN_FIELDS = ("user_id", "location_id", "timestamp")


@dataclass(frozen=True)
class MobilityRecord:
    user_id: str
    location_id: str
    timestamp: datetime

    def __post_init__(self):
        if not self.user_id or not self.location_id:
            raise ValueError("user_id and location_id must be non-empty")
        if self.timestamp.tzinfo is None:
            raise ValueError("timestamp must be timezone-aware")


@dataclass(frozen=True)
class Trajectory:
    user_id: str
    records: tuple[MobilityRecord, ...]

    def __len__(self) -> int:
        return len(self.records)

    @property
    def start(self) -> datetime:
        return self.records[0].timestamp

    @property
    def location_ids(self) -> list[str]:
        return [r.location_id for r in self.records]

    def key(self) -> tuple[str, str]:
        """Identity used for leakage checks: (user, first timestamp)."""
        return (self.user_id, format_timestamp(self.start))

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "records": [
                {"location_id": r.location_id, "timestamp": format_timestamp(r.timestamp)}
                for r in self.records
            ],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Trajectory":
        uid = str(obj["user_id"])
        recs = tuple(
            MobilityRecord(uid, str(r["location_id"]), parse_timestamp(r["timestamp"]))
            for r in obj["records"]
        )
        return cls(uid, recs)


@dataclass
class DatasetSplit:
    train: list[Trajectory] = field(default_factory=list)
    validation: list[Trajectory] = field(default_factory=list)
    test: list[Trajectory] = field(default_factory=list)

    def parts(self) -> dict[str, list[Trajectory]]:
        return {"train": self.train, "validation": self.validation, "test": self.test}


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        raise ValueError(f"timestamp {text!r} has no UTC offset")
    return ts.astimezone(timezone.utc).replace(microsecond=0)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _record_from_row(row: dict, line: int) -> MobilityRecord:
    values = {}
    for name in CHECKIN_FIELDS:
        value = row.get(name)
        if value is None or str(value).strip() == "":
            raise ParseError("missing value", line=line, field=name)
        values[name] = str(value).strip()
    try:
        ts = parse_timestamp(values["timestamp"])
    except ValueError as exc:
        raise ParseError(f"unparseable timestamp ({exc})", line=line, field="timestamp") from None
    return MobilityRecord(values["user_id"], values["location_id"], ts)


def parse_checkins(source: str | Path | IO[str] | Iterable[str], format: str = "csv") -> list[MobilityRecord]:
    """Parse check-ins from CSV (with header) or JSONL.

    ``source`` may be a path, an open text stream or any iterable of lines.
    Line numbers in errors are 1-based and count the CSV header.
    """
    if format not in ("csv", "jsonl"):
        raise ConfigError(f"unknown check-in format {format!r}", field="format")
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return parse_checkins(fh, format)

    records = []
    if format == "csv":
        reader = csv.DictReader(source)
        if reader.fieldnames is not None:
            missing = [f for f in CHECKIN_FIELDS if f not in reader.fieldnames]
            if missing:
                raise ParseError(f"header lacks columns {missing}", line=1)
        for row in reader:
            records.append(_record_from_row(row, reader.line_num))
    else:
        for lineno, line in enumerate(source, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line=lineno) from None
            if not isinstance(row, dict):
                raise ParseError("expected a JSON object", line=lineno)
            records.append(_record_from_row(row, lineno))
    records.sort(key=lambda r: (r.user_id, r.timestamp))
    return records


def load_locations(path: str | Path) -> list[Location]:
    out = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                loc = Location.from_dict(json.loads(line))
            except (KeyError, ValueError, TypeError) as exc:
                raise ParseError(f"bad location ({exc})", line=lineno) from None
            if loc.id in seen:
                raise ParseError(f"duplicate location id {loc.id!r}", line=lineno, field="id")
            seen.add(loc.id)
            out.append(loc)
    return out


def filter_sparse_locations(records: Sequence[MobilityRecord], min_visits: int = 5) -> list[MobilityRecord]:
    counts = Counter(r.location_id for r in records)
    return [r for r in records if counts[r.location_id] >= min_visits]


def build_trajectories(
    records: Sequence[MobilityRecord], gap_hours: float = 24, min_len: int = 3
) -> list[Trajectory]:
    gap = timedelta(hours=gap_hours)
    out = []
    ordered = sorted(records, key=lambda r: (r.user_id, r.timestamp))
    for user_id, group in groupby(ordered, key=lambda r: r.user_id):
        current: list[MobilityRecord] = []
        for rec in group:
            if current and rec.timestamp - current[-1].timestamp >= gap:
                if len(current) >= min_len:
                    out.append(Trajectory(user_id, tuple(current)))
                current = []
            current.append(rec)
        if len(current) >= min_len:
            out.append(Trajectory(user_id, tuple(current)))
    return out


def chronological_split(
    trajectories: Sequence[Trajectory], fractions: Sequence[float] = (0.70, 0.10, 0.20)
) -> DatasetSplit:
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be 3 positive values summing to 1, got {fractions}", field="fractions")
    split = DatasetSplit()
    by_user: dict[str, list[Trajectory]] = {}
    for t in trajectories:
        by_user.setdefault(t.user_id, []).append(t)
    for user_id in sorted(by_user):
        trajs = sorted(by_user[user_id], key=lambda t: t.start)
        n = len(trajs)
        if n < 3:
            split.train.extend(trajs)
            continue
        # Tiny epsilon guards against 0.7 * 10 = 6.999... style float error.
        n_train = math.floor(fractions[0] * n + 1e-9)
        n_val = math.floor(fractions[1] * n + 1e-9)
        split.train.extend(trajs[:n_train])
        split.validation.extend(trajs[n_train:n_train + n_val])
        split.test.extend(trajs[n_train + n_val:])
    return split


def write_trajectories(path: str | Path, trajectories: Iterable[Trajectory]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in trajectories:
            fh.write(json.dumps(t.to_dict(), sort_keys=True) + "\n")


def read_trajectories(path: str | Path) -> list[Trajectory]:
    with open(path, encoding="utf-8") as fh:
        return [Trajectory.from_dict(json.loads(line)) for line in fh if line.strip()]


def checkins_to_csv(records: Iterable[MobilityRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CHECKIN_FIELDS)
    for r in records:
        writer.writerow([r.user_id, r.location_id, format_timestamp(r.timestamp)])
    return buf.getvalue()
