"""Ranking metrics, task evaluation and representation-consistency analysis."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .decoder import Scorer, beam_search, trajectory_stream
from .geo import Location, haversine_km
from .ingest import Trajectory
from .sft import mask_positions, recovery_rng
from .tokens import TokenMap, TokenTrie

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
DEFAULT_KS = (1, 5, 10)
DEFAULT_RATIOS = (0.2, 0.3, 0.4, 0.5)
RECOVERY_NOTE = (
    "recovery context is the visible records before each masked slot; "
    "the n-gram baseline is causal and does not see later records"
)


def hit_at_k(ranked: Sequence[str], target: str, k: int) -> int:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return int(target in ranked[:k])


def ndcg_at_k(ranked: Sequence[str], target: str, k: int) -> float:
    """Single relevant item, so IDCG@k = 1 and N@k = 1/log2(rank + 1)."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    for rank, item in enumerate(ranked[:k], start=1):
        if item == target:
            return 1.0 / math.log2(rank + 1)
    return 0.0


def metric_names(ks: Sequence[int]) -> list[str]:
    ks = sorted(set(ks))
    return [f"Hit@{k}" for k in ks] + [f"N@{k}" for k in ks if k > 1]


def instance_metrics(ranked: Sequence[str], target: str, ks: Sequence[int]) -> dict[str, float]:
    ks = sorted(set(ks))
    out: dict[str, float] = {f"Hit@{k}": float(hit_at_k(ranked, target, k)) for k in ks}
    out.update({f"N@{k}": ndcg_at_k(ranked, target, k) for k in ks if k > 1})
    return out


@dataclass
class EvalReport:
    task: str
    metrics: dict[str, float]
    count: int
    config: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "task": self.task,
            "count": self.count,
            "metrics": self.metrics,
            "config": self.config,
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EvalReport":
        return cls(d["task"], dict(d["metrics"]), d["count"], dict(d.get("config", {})), list(d.get("notes", [])))


def aggregate(per_instance: Sequence[Mapping[str, float]], ks: Sequence[int]) -> dict[str, float]:
    names = metric_names(ks)
    if not per_instance:
        return {n: 0.0 for n in names}
    # Summation in instance order keeps the means reproducible.
    return {n: math.fsum(m[n] for m in per_instance) / len(per_instance) for n in names}


def write_reports(path_json: str | Path, reports: Sequence[EvalReport] | EvalReport, path_csv: str | Path | None = None) -> None:
    if isinstance(reports, EvalReport):
        payload = reports.to_dict()
        rows = [reports]
    else:
        payload = {"format_version": FORMAT_VERSION, "reports": [r.to_dict() for r in reports]}
        rows = list(reports)
    Path(path_json).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    if path_csv is not None:
        Path(path_csv).write_text(reports_csv(rows), encoding="utf-8")


def reports_csv(reports: Sequence[EvalReport]) -> str:
    names: list[str] = []
    for r in reports:
        names += [n for n in r.metrics if n not in names]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task", "ratio", "count", *names])
    for r in reports:
        w.writerow([r.task, r.config.get("ratio", ""), r.count, *[f"{r.metrics.get(n, 0.0):.6f}" for n in names]])
    return buf.getvalue()


# ------------------------------------------------------------ task drivers

def next_location_context(traj: Trajectory, token_map: TokenMap) -> list[str]:
    """Tokens of records 1..n-1, ending with a boundary so the next location starts fresh."""
    return trajectory_stream(traj.location_ids[:-1], token_map)


@dataclass
class Prediction:
    user_id: str
    trajectory_start: str
    target: str
    ranked: list[tuple[str, float]]

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "trajectory_start": self.trajectory_start,
            "target": self.target,
            "ranked": [[loc, score] for loc, score in self.ranked],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Prediction":
        return cls(d["user_id"], d["trajectory_start"], d["target"], [(loc, float(s)) for loc, s in d["ranked"]])


def predict_next(
    scorer: Scorer, trie: TokenTrie, token_map: TokenMap, test: Sequence[Trajectory], width: int = 15, topn: int = 10
) -> list[Prediction]:
    out = []
    for traj in test:
        if len(traj) < 2:
            continue
        result = beam_search(scorer, next_location_context(traj, token_map), trie, width, topn)
        out.append(Prediction(traj.user_id, traj.key()[1], traj.location_ids[-1], list(result.ranked)))
    return out


def report_next(predictions: Sequence[Prediction], ks: Sequence[int] = DEFAULT_KS, config: dict | None = None) -> EvalReport:
    if not predictions:
        raise ValueError("no evaluable test trajectories (need length >= 2)")
    instances = [instance_metrics([loc for loc, _ in p.ranked], p.target, ks) for p in predictions]
    return EvalReport("next_prediction", aggregate(instances, ks), len(instances), {"ks": sorted(set(ks)), **(config or {})})


def evaluate_next_location(
    scorer: Scorer,
    trie: TokenTrie,
    token_map: TokenMap,
    test: Sequence[Trajectory],
    ks: Sequence[int] = DEFAULT_KS,
    width: int = 15,
    topn: int | None = None,
) -> EvalReport:
    """Rank the last location of every test trajectory from the ones before it."""
    topn = topn or max(ks)
    preds = predict_next(scorer, trie, token_map, test, width, topn)
    return report_next(preds, ks, {"width": width, "topn": topn})


def recovery_context(traj: Trajectory, masked: set[int], slot: int, token_map: TokenMap) -> list[str]:
    visible = [loc for i, loc in enumerate(traj.location_ids[:slot]) if i not in masked]
    return trajectory_stream(visible, token_map)


def evaluate_recovery(
    scorer: Scorer,
    trie: TokenTrie,
    token_map: TokenMap,
    test: Sequence[Trajectory],
    ratios: Sequence[float] = DEFAULT_RATIOS,
    ks: Sequence[int] = DEFAULT_KS,
    seed: int = 0,
    width: int = 15,
    topn: int | None = None,
) -> list[EvalReport]:
    """One report per mask ratio; metrics are averaged over masked slots."""
    topn = topn or max(ks)
    usable = [t for t in test if len(t) >= 3]
    if not usable:
        raise ValueError("no evaluable test trajectories (need length >= 3)")
    reports = []
    for ratio in ratios:
        instances = []
        for traj in usable:
            rng = recovery_rng(seed, traj, salt=f"eval:{ratio}")
            masked = mask_positions(len(traj), ratio, rng)
            mset = set(masked)
            for slot in masked:
                ctx = recovery_context(traj, mset, slot, token_map)
                result = beam_search(scorer, ctx, trie, width, topn)
                instances.append(instance_metrics(result.location_ids, traj.location_ids[slot], ks))
        reports.append(
            EvalReport(
                "recovery",
                aggregate(instances, ks),
                len(instances),
                {"ratio": ratio, "ks": sorted(set(ks)), "width": width, "topn": topn, "seed": seed},
                [RECOVERY_NOTE],
            )
        )
    return reports


# ------------------------------------------------------ consistency study

def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


@dataclass
class ConsistencyReport:
    groups: dict[str, float]
    per_category: dict[str, dict[str, float]]
    skipped: list[str]
    group_size: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "groups": self.groups,
            "per_category": self.per_category,
            "skipped": self.skipped,
            "group_size": self.group_size,
            "seed": self.seed,
        }


def consistency_study(
    zhat: Mapping[str, np.ndarray], locations: Sequence[Location], seed: int = 0, group_size: int = 10
) -> ConsistencyReport:
    """Mean cosine between a reference location and four comparison groups.

    A: nearest by distance, B: farthest, C: random same-category,
    D: random other-category. One seeded reference per category.
    """
    locs = sorted((l for l in locations if l.id in zhat), key=lambda l: l.id)
    by_cat: dict[str, list[Location]] = {}
    for loc in locs:
        by_cat.setdefault(loc.category, []).append(loc)
    rng = random.Random(seed)
    per_category: dict[str, dict[str, float]] = {}
    skipped = []
    for cat in sorted(by_cat):
        members = by_cat[cat]
        others = [l for l in locs if l.category != cat]
        if len(members) < group_size + 1 or len(others) < group_size:
            log.warning("consistency study: skipping category %r (%d members)", cat, len(members))
            skipped.append(cat)
            continue
        ref = rng.choice(members)
        rest = [l for l in locs if l.id != ref.id]
        by_dist = sorted(rest, key=lambda l: (haversine_km(ref.position, l.position), l.id))
        groups = {
            "A": by_dist[:group_size],
            "B": by_dist[::-1][:group_size],
            "C": rng.sample([l for l in members if l.id != ref.id], group_size),
            "D": rng.sample(others, group_size),
        }
        v = zhat[ref.id]
        per_category[cat] = {g: math.fsum(cosine(v, zhat[l.id]) for l in ls) / group_size for g, ls in groups.items()}
    if per_category:
        means = {g: math.fsum(pc[g] for pc in per_category.values()) / len(per_category) for g in "ABCD"}
    else:
        means = {g: float("nan") for g in "ABCD"}
    return ConsistencyReport(means, per_category, skipped, group_size, seed)
