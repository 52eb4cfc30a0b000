"""Sequence scorers and trie-constrained beam search over location tokens."""

from __future__ import annotations

import heapq
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .errors import ConfigError, LoadError
from .ingest import Trajectory
from .tokens import TokenMap, TokenTrie

BOUNDARY = "<sep>"
FORMAT_VERSION = 1


class Scorer(Protocol):
    """Anything that assigns next-token log-probabilities given a context."""

    @property
    def vocabulary(self) -> Sequence[str]: ...

    def log_prob(self, context: Sequence[str], token: str) -> float: ...


def trajectory_stream(location_ids: Iterable[str], token_map: TokenMap) -> list[str]:
    """Token stream ``<sep> tok(l1) <sep> tok(l2) ... <sep>``."""
    out = [BOUNDARY]
    for loc in location_ids:
        out.extend(token_map[loc])
        out.append(BOUNDARY)
    return out


class NgramScorer:
    """Add-k smoothed n-gram model without backoff.

    P(t | ctx) = (count(ctx, t) + k) / (count(ctx) + k * |V|), with ctx the
    last ``order - 1`` tokens (left-padded with the boundary marker).
    """

    def __init__(self, order: int, k: float, vocabulary: Iterable[str], counts: dict[tuple[str, ...], Counter]):
        if order < 1:
            raise ConfigError(f"n-gram order must be >= 1, got {order}", field="order")
        if k < 0:
            raise ConfigError(f"smoothing constant must be >= 0, got {k}", field="k")
        self.order = order
        self.k = float(k)
        vocab = set(vocabulary)
        vocab.add(BOUNDARY)
        self._vocab = tuple(sorted(vocab))
        self._vocab_set = frozenset(self._vocab)
        self.counts = counts
        self.context_counts = {ctx: sum(c.values()) for ctx, c in counts.items()}

    @property
    def vocabulary(self) -> tuple[str, ...]:
        return self._vocab

    def prob(self, context: Sequence[str], token: str) -> float:
        if token not in self._vocab_set:
            return 0.0
        ctx = _pad_context(context, self.order - 1)
        total = self.context_counts.get(ctx, 0)
        denom = total + self.k * len(self._vocab)
        if denom == 0:
            # k = 0 and an unseen context: nothing to go on.
            return 1.0 / len(self._vocab)
        seen = self.counts[ctx][token] if total else 0
        return (seen + self.k) / denom

    def log_prob(self, context: Sequence[str], token: str) -> float:
        p = self.prob(context, token)
        return math.log(p) if p > 0 else -math.inf

    def to_json(self) -> dict:
        grams = {}
        for ctx, c in self.counts.items():
            for tok, n in c.items():
                grams[" ".join(ctx + (tok,))] = n
        return {
            "format_version": FORMAT_VERSION,
            "order": self.order,
            "k": self.k,
            "vocabulary": list(self._vocab),
            "counts": dict(sorted(grams.items())),
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "NgramScorer":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise LoadError(f"scorer checkpoint {path} not found", field="scorer") from None
        order = obj["order"]
        counts: dict[tuple[str, ...], Counter] = defaultdict(Counter)
        for gram, n in obj["counts"].items():
            toks = tuple(gram.split(" "))
            if len(toks) != order:
                raise LoadError(f"n-gram {gram!r} does not have order {order}", field="counts")
            counts[toks[:-1]][toks[-1]] = n
        return cls(order, obj["k"], obj["vocabulary"], dict(counts))


def _pad_context(tokens: Sequence[str], n: int) -> tuple[str, ...]:
    if n == 0:
        return ()
    ctx = tuple(tokens[-n:])
    return (BOUNDARY,) * (n - len(ctx)) + ctx


def fit_ngram(
    streams: Iterable[Sequence[str]], order: int = 3, k: float = 0.1, vocabulary: Iterable[str] = ()
) -> NgramScorer:
    """Count n-grams over token streams.

    Contexts are built exactly as at scoring time (left-padded with the
    boundary marker). A leading boundary marker is a start symbol and is not
    itself counted as a prediction target.
    """
    counts: dict[tuple[str, ...], Counter] = defaultdict(Counter)
    vocab = set(vocabulary)
    n = order - 1
    seen_any = False
    for stream in streams:
        stream = list(stream)
        if not stream:
            continue
        seen_any = True
        vocab.update(stream)
        for i, tok in enumerate(stream):
            if i == 0 and tok == BOUNDARY:
                continue
            counts[_pad_context(stream[:i], n)][tok] += 1
    if not seen_any:
        raise ValueError("cannot fit an n-gram model on empty training data")
    return NgramScorer(order, k, vocab, dict(counts))


def fit_from_trajectories(
    trajectories: Iterable[Trajectory], token_map: TokenMap, order: int = 3, k: float = 0.1
) -> NgramScorer:
    streams = [trajectory_stream(t.location_ids, token_map) for t in trajectories]
    return fit_ngram(streams, order, k, vocabulary=token_map.vocabulary)


@dataclass(frozen=True)
class BeamResult:
    ranked: tuple[tuple[str, float], ...]

    @property
    def location_ids(self) -> list[str]:
        return [loc for loc, _ in self.ranked]

    def __len__(self) -> int:
        return len(self.ranked)


def beam_search(
    scorer: Scorer, context: Sequence[str], trie: TokenTrie, width: int = 15, topn: int = 10
) -> BeamResult:
    """Beam decoding restricted to trie paths.

    Each depth keeps the ``width`` best unfinished prefixes (total log-prob,
    ties by token path). Hypotheses reaching a leaf are all kept; the best
    ``topn`` are returned, ties broken by location id.
    """
    if width < 1:
        raise ConfigError(f"beam width must be >= 1, got {width}", field="width")
    if topn < 1:
        raise ConfigError(f"topn must be >= 1, got {topn}", field="topn")
    context = list(context)
    beam = [(0.0, (), trie.root)]
    finished: list[tuple[float, str]] = []
    while beam:
        candidates = []
        for score, path, node in beam:
            ctx = context + list(path)
            for tok, child in node.children.items():
                s = score + scorer.log_prob(ctx, tok)
                if child.is_leaf:
                    finished.append((s, child.location_id))
                if child.children:
                    candidates.append((s, path + (tok,), child))
        beam = heapq.nsmallest(width, candidates, key=lambda c: (-c[0], c[1]))
    finished.sort(key=lambda f: (-f[0], f[1]))
    return BeamResult(tuple((loc, s) for s, loc in finished[:topn]))


def path_log_prob(scorer: Scorer, context: Sequence[str], tokens: Sequence[str]) -> float:
    total = 0.0
    ctx = list(context)
    for tok in tokens:
        total += scorer.log_prob(ctx, tok)
        ctx.append(tok)
    return total
