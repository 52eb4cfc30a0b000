"""Independent oracles and shared builders for the test suite.

Nothing here calls into the code under test for the quantity being checked;
the oracles are deliberately written the slow, obvious way.
"""

from __future__ import annotations

import hashlib
import math
import os
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from mobitok import cli
from mobitok.ingest import MobilityRecord
from mobitok.quantizer import QuantizerConfig, RqVaeModel, init_model
from mobitok.synth import generate_city, write_city

FIXTURES = Path(__file__).parent / "fixtures"
REPO = Path(__file__).parent.parent
T0 = datetime(2012, 4, 1, tzinfo=timezone.utc)


def rec(user: str, loc: str, hours: float) -> MobilityRecord:
    return MobilityRecord(user, loc, T0 + timedelta(hours=hours))


# ------------------------------------------------------------ quantizer

def tiny_model(seed: int = 0, init: str = "random") -> tuple[RqVaeModel, QuantizerConfig]:
    cfg = QuantizerConfig(
        levels=2, codebook_size=4, code_dim=4, encoder_hidden=(8,), alpha=0.25, seed=seed, codebook_init=init
    )
    rng = np.random.default_rng(seed + 100)
    sample = rng.normal(size=(32, 8))
    model = init_model(cfg, sample)
    # Spread the codebooks so every code is in play and argmin margins are wide.
    model.codebooks[...] = rng.normal(scale=0.5, size=model.codebooks.shape)
    return model, cfg


def relu_mlp(layers, x):
    h = x
    for i, (W, b) in enumerate(layers):
        h = h @ W + b
        if i < len(layers) - 1:
            h = np.maximum(h, 0.0)
    return h


def brute_nearest(r: np.ndarray, codebook: np.ndarray) -> int:
    best, best_d = 0, math.inf
    for i, v in enumerate(codebook):
        d = sum((float(a) - float(b)) ** 2 for a, b in zip(r, v))
        if d < best_d:
            best, best_d = i, d
    return best


def brute_quantize(r0: np.ndarray, codebooks: np.ndarray) -> tuple[list[int], np.ndarray]:
    r = np.array(r0, dtype=float)
    idx = []
    for cb in codebooks:
        c = brute_nearest(r, cb)
        idx.append(c)
        r = r - cb[c]
    return idx, r


def surrogate_loss(model: RqVaeModel, frozen: RqVaeModel, S: np.ndarray, alpha: float) -> float:
    """Batch-mean training loss with every stop-gradient made explicit.

    Anything under a stop-gradient (code choices, the quantization offset,
    the code vectors inside the commitment term, the residuals inside the
    codebook term) is read from ``frozen``; only the live path reads
    ``model``. At model == frozen the value equals the training loss and
    its parameter gradient is the straight-through gradient.
    """
    r0_f = relu_mlp(frozen.encoder, S)
    L = frozen.codebooks.shape[0]
    idx = np.array([brute_quantize(r, frozen.codebooks)[0] for r in r0_f])
    used_f = [frozen.codebooks[l][idx[:, l]] for l in range(L)]
    zhat_f = np.sum(used_f, axis=0)

    r0 = relu_mlp(model.encoder, S)
    z_st = r0 + (zhat_f - r0_f)
    y = relu_mlp(model.decoder, z_st)
    total = ((S - y) ** 2).sum(axis=1).mean()

    prefix_f = np.zeros_like(r0_f)
    for l in range(L):
        res_f = r0_f - prefix_f
        v_live = model.codebooks[l][idx[:, l]]
        total += ((res_f - v_live) ** 2).sum(axis=1).mean()
        res_live = r0 - prefix_f
        total += alpha * ((res_live - used_f[l]) ** 2).sum(axis=1).mean()
        prefix_f = prefix_f + used_f[l]
    return float(total)


def finite_difference_grads(model: RqVaeModel, S: np.ndarray, alpha: float, h: float = 1e-4) -> list[np.ndarray]:
    frozen = model.copy()
    out = []
    for p in model.parameters():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = surrogate_loss(model, frozen, S, alpha)
            flat[i] = keep - h
            down = surrogate_loss(model, frozen, S, alpha)
            flat[i] = keep
            gflat[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def clustered_points(seed: int = 0, n_clusters: int = 16, per_cluster: int = 32, dim: int = 16, spread: float = 0.1):
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(n_clusters, dim))
    X = np.concatenate([c + spread * rng.normal(size=(per_cluster, dim)) for c in centers])
    labels = np.repeat(np.arange(n_clusters), per_cluster)
    return X, labels


# -------------------------------------------------------------- decoder

class HashScorer:
    """Deterministic pseudo-random log-probabilities keyed on (context, token)."""

    def __init__(self, vocabulary, salt: str):
        self._vocab = tuple(sorted(vocabulary))
        self.salt = salt

    @property
    def vocabulary(self):
        return self._vocab

    def log_prob(self, context, token):
        key = f"{self.salt}|{'|'.join(context)}|{token}".encode()
        u = (int.from_bytes(hashlib.sha256(key).digest()[:8], "little") + 1) / 2.0**64
        return math.log(u)


class TableScorer:
    """log P(token | last token of context) from a hand-written table; unseen pairs get -50."""

    def __init__(self, table: dict[tuple[str, str], float], vocabulary=()):
        self.table = table
        self._vocab = tuple(sorted(set(vocabulary) | {t for _, t in table}))

    @property
    def vocabulary(self):
        return self._vocab

    def log_prob(self, context, token):
        prev = context[-1] if context else ""
        p = self.table.get((prev, token))
        return math.log(p) if p else -50.0


def exhaustive_ranking(scorer, context, trie, topn):
    scored = []
    for path, loc in trie.leaves():
        total = 0.0
        ctx = list(context)
        for tok in path:
            total += scorer.log_prob(ctx, tok)
            ctx.append(tok)
        scored.append((total, loc))
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [(loc, s) for s, loc in scored[:topn]]


# ------------------------------------------------------------- pipeline

CITY_CONFIG = REPO / "configs" / "synthetic_city.toml"
# Same settings, with paths pointing inside a scratch directory.
CITY_PATHS = [
    'paths.checkins="data/checkins.csv"',
    'paths.locations="data/locations.jsonl"',
    'paths.output_dir="out"',
]


def run_city_pipeline(workdir: Path, seed: int = 0, stages=cli.PIPELINE) -> Path:
    """Generate the synthetic city and run the pipeline stages. Returns the output dir."""
    workdir.mkdir(parents=True, exist_ok=True)
    write_city(generate_city(200, 50, seed=0), workdir / "data")
    config = workdir / "pipeline.toml"
    config.write_text(CITY_CONFIG.read_text(encoding="utf-8"), encoding="utf-8")
    old = os.environ.get("MOBITOK_SEED")
    os.environ["MOBITOK_SEED"] = str(seed)
    try:
        for stage in stages:
            status = cli.run(stage, config, CITY_PATHS)
            if status != 0:
                raise RuntimeError(f"stage {stage} exited with {status}")
    finally:
        if old is None:
            del os.environ["MOBITOK_SEED"]
        else:
            os.environ["MOBITOK_SEED"] = old
    return workdir / "out"


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class SharedRuns:
    """Lazily computed pipeline runs shared by several tests."""

    def __init__(self, root: Path):
        self.root = root
        self._city: Path | None = None

    @property
    def city(self) -> Path:
        if self._city is None:
            self._city = run_city_pipeline(self.root / "city_a", seed=0)
        return self._city
