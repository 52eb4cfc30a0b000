"""Residual-quantized autoencoder (RQ-VAE) for location tokenization.

Everything is plain numpy with hand-written backpropagation. The forward pass
is

    r_0  = encoder(s)
    c_l  = argmin_i ||r_{l-1} - v_i^l||^2,   r_l = r_{l-1} - v_{c_l}^l
    zhat = sum_l v_{c_l}^l
    y    = decoder(zhat)

and the per-example loss is

    L_rec = ||s - y||^2
    L_rq  = sum_l ||sg[r_{l-1}] - v_{c_l}^l||^2 + alpha * ||r_{l-1} - sg[v_{c_l}^l]||^2

Gradient routing: dL_rec/dzhat is copied onto the encoder output (straight
through the argmin); codebooks see only the first L_rq term; the encoder also
gets the alpha-weighted commitment term. Inside the commitment term the
residual r_{l-1} = r_0 - sum_{j<l} sg[v_{c_j}^j], so earlier codebooks receive
nothing from it.

Checkpoint blob order (float32, little-endian): for each encoder layer W then
b, for each decoder layer W then b, then codebooks level-major (L, K, D).
Weights are stored (fan_in, fan_out) row-major.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .embed import EmbeddingTable
from .errors import ConfigError, LoadError, TrainingError

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass
class QuantizerConfig:
    levels: int = 4
    codebook_size: int = 256
    code_dim: int = 32
    alpha: float = 0.25
    encoder_hidden: tuple[int, ...] = (512, 128)
    learning_rate: float = 1e-3
    batch_size: int = 1024
    epochs: int = 100
    seed: int = 0
    codebook_init: str = "kmeans"
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    kmeans_iters: int = 10
    reseed_dead_codes: bool = True

    def __post_init__(self):
        self.encoder_hidden = tuple(int(h) for h in self.encoder_hidden)
        self.validate()

    def validate(self) -> None:
        checks = [
            ("levels", self.levels >= 1),
            ("codebook_size", self.codebook_size >= 1),
            ("code_dim", self.code_dim >= 1),
            ("alpha", self.alpha > 0),
            ("learning_rate", self.learning_rate >= 0),
            ("batch_size", self.batch_size >= 1),
            ("epochs", self.epochs >= 0),
            ("encoder_hidden", all(h >= 1 for h in self.encoder_hidden)),
            ("codebook_init", self.codebook_init in ("kmeans", "random")),
            ("weight_decay", self.weight_decay >= 0),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigError(f"invalid quantizer setting {name}={getattr(self, name)!r}", field=name)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_hidden"] = list(self.encoder_hidden)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "QuantizerConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


Layer = tuple[np.ndarray, np.ndarray]


@dataclass
class RqVaeModel:
    encoder: list[Layer]
    decoder: list[Layer]
    codebooks: np.ndarray  # (L, K, D)

    @property
    def input_dim(self) -> int:
        return self.encoder[0][0].shape[0]

    @property
    def code_dim(self) -> int:
        return self.codebooks.shape[2]

    @property
    def levels(self) -> int:
        return self.codebooks.shape[0]

    @property
    def codebook_size(self) -> int:
        return self.codebooks.shape[1]

    def parameters(self) -> list[np.ndarray]:
        """All trainable arrays in checkpoint order (views, not copies)."""
        out = []
        for W, b in self.encoder + self.decoder:
            out += [W, b]
        out.append(self.codebooks)
        return out

    def parameter_names(self) -> list[str]:
        names = []
        for prefix, layers in (("encoder", self.encoder), ("decoder", self.decoder)):
            for i in range(len(layers)):
                names += [f"{prefix}.{i}.W", f"{prefix}.{i}.b"]
        names.append("codebooks")
        return names

    def copy(self) -> "RqVaeModel":
        return RqVaeModel(
            [(W.copy(), b.copy()) for W, b in self.encoder],
            [(W.copy(), b.copy()) for W, b in self.decoder],
            self.codebooks.copy(),
        )

    def check_finite(self) -> None:
        for name, p in zip(self.parameter_names(), self.parameters()):
            if not np.all(np.isfinite(p)):
                raise TrainingError(f"parameter {name} is not finite")

    def encode(self, s: np.ndarray) -> np.ndarray:
        return mlp_forward(self.encoder, s)[0]

    def decode(self, z: np.ndarray) -> np.ndarray:
        return mlp_forward(self.decoder, z)[0]


# ---------------------------------------------------------------- MLP pieces

def mlp_forward(layers: Sequence[Layer], x: np.ndarray):
    """ReLU on every layer but the last. Returns (output, cache)."""
    cache = []
    h = x
    for i, (W, b) in enumerate(layers):
        a = h @ W + b
        cache.append((h, a))
        h = np.maximum(a, 0.0) if i < len(layers) - 1 else a
    return h, cache


def mlp_backward(layers: Sequence[Layer], cache, dout: np.ndarray):
    """Gradients for each (W, b) and for the network input."""
    grads: list[Layer] = [None] * len(layers)  # type: ignore[list-item]
    d = dout
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        h, a = cache[i]
        if i < len(layers) - 1:
            d = d * (a > 0)
        grads[i] = (h.T @ d, d.sum(axis=0))
        d = d @ W.T
    return grads, d


def _init_mlp(dims: Sequence[int], rng: np.random.Generator) -> list[Layer]:
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        layers.append((W, b))
    return layers


# ------------------------------------------------------------- quantization

@dataclass
class QuantizeResult:
    indices: list[int]
    zhat: np.ndarray
    residuals: list[np.ndarray]  # r_0 .. r_L


def nearest_code(r: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """Row-wise argmin of squared distance; ties resolve to the lowest index."""
    r = np.atleast_2d(r)
    out = np.empty(len(r), dtype=np.int64)
    # Direct differences rather than the |a|^2 - 2ab + |b|^2 expansion so that
    # the comparison is exactly the squared Euclidean distance.
    step = max(1, 2_000_000 // max(1, codebook.size))
    for start in range(0, len(r), step):
        chunk = r[start:start + step]
        d = ((chunk[:, None, :] - codebook[None, :, :]) ** 2).sum(axis=2)
        out[start:start + step] = np.argmin(d, axis=1)
    return out


def quantize_batch(r0: np.ndarray, codebooks: np.ndarray):
    """Residual quantization of a (B, D) batch.

    Returns (indices (B, L), zhat (B, D), residuals (L+1, B, D)).
    """
    L = codebooks.shape[0]
    r0 = np.atleast_2d(np.asarray(r0, dtype=np.float64))
    residuals = np.empty((L + 1,) + r0.shape)
    residuals[0] = r0
    idx = np.empty((r0.shape[0], L), dtype=np.int64)
    zhat = np.zeros_like(r0)
    for l in range(L):
        c = nearest_code(residuals[l], codebooks[l])
        v = codebooks[l][c]
        idx[:, l] = c
        zhat += v
        residuals[l + 1] = residuals[l] - v
    return idx, zhat, residuals


def quantize(r0: np.ndarray, codebooks: np.ndarray) -> QuantizeResult:
    idx, zhat, res = quantize_batch(np.asarray(r0, dtype=np.float64)[None, :], codebooks)
    return QuantizeResult([int(c) for c in idx[0]], zhat[0], [r[0] for r in res])


# ------------------------------------------------------------------- losses

def batch_losses(S: np.ndarray, model: RqVaeModel, alpha: float):
    """Per-example (L_rec, L_rq) arrays for a (B, d) batch."""
    S = np.atleast_2d(S)
    r0 = model.encode(S)
    idx, zhat, res = quantize_batch(r0, model.codebooks)
    y = model.decode(zhat)
    rec = ((S - y) ** 2).sum(axis=1)
    rq = np.zeros(len(S))
    for l in range(model.levels):
        v = model.codebooks[l][idx[:, l]]
        rq += (1.0 + alpha) * ((res[l] - v) ** 2).sum(axis=1)
    return rec, rq


def losses(s: np.ndarray, model: RqVaeModel, alpha: float = 0.25) -> tuple[float, float, float]:
    rec, rq = batch_losses(np.asarray(s, dtype=np.float64)[None, :], model, alpha)
    return float(rec[0]), float(rq[0]), float(rec[0] + rq[0])


@dataclass
class Gradients:
    encoder: list[Layer]
    decoder: list[Layer]
    codebooks: np.ndarray
    # Diagnostics: encoder-output gradient split by source.
    r0_from_rec: np.ndarray = field(repr=False, default=None)
    r0_from_commit: np.ndarray = field(repr=False, default=None)

    def as_list(self) -> list[np.ndarray]:
        out = []
        for W, b in self.encoder + self.decoder:
            out += [W, b]
        out.append(self.codebooks)
        return out


@dataclass
class ForwardState:
    indices: np.ndarray
    zhat: np.ndarray
    residuals: np.ndarray
    rec: np.ndarray
    rq: np.ndarray


def forward_backward(S: np.ndarray, model: RqVaeModel, alpha: float) -> tuple[ForwardState, Gradients]:
    """Forward pass and straight-through gradients of the batch-mean loss."""
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    B = len(S)
    r0, enc_cache = mlp_forward(model.encoder, S)
    idx, zhat, res = quantize_batch(r0, model.codebooks)
    y, dec_cache = mlp_forward(model.decoder, zhat)

    diff = y - S
    rec = (diff ** 2).sum(axis=1)
    dec_grads, d_zhat = mlp_backward(model.decoder, dec_cache, 2.0 * diff / B)

    d_codebooks = np.zeros_like(model.codebooks)
    d_commit = np.zeros_like(r0)
    rq = np.zeros(B)
    for l in range(model.levels):
        v = model.codebooks[l][idx[:, l]]
        gap = res[l] - v  # r_{l-1} - v_{c_l}
        sq = (gap ** 2).sum(axis=1)
        rq += (1.0 + alpha) * sq
        np.add.at(d_codebooks[l], idx[:, l], -2.0 * gap / B)
        d_commit += 2.0 * alpha * gap / B

    d_r0 = d_zhat + d_commit
    enc_grads, _ = mlp_backward(model.encoder, enc_cache, d_r0)
    grads = Gradients(enc_grads, dec_grads, d_codebooks, r0_from_rec=d_zhat, r0_from_commit=d_commit)
    return ForwardState(idx, zhat, res, rec, rq), grads


# ---------------------------------------------------------------- optimizer

class AdamW:
    """Adam with decoupled weight decay, applied in place to a parameter list."""

    def __init__(self, params: Sequence[np.ndarray], lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if self.weight_decay:
                p *= 1.0 - self.lr * self.weight_decay
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    @classmethod
    def for_config(cls, model: RqVaeModel, cfg: QuantizerConfig) -> "AdamW":
        return cls(model.parameters(), cfg.learning_rate, (cfg.beta1, cfg.beta2), cfg.eps, cfg.weight_decay)


def _param_norms(model: RqVaeModel) -> str:
    return ", ".join(f"{n}={np.linalg.norm(p):.4g}" for n, p in zip(model.parameter_names(), model.parameters()))


def train_step(
    S: np.ndarray, model: RqVaeModel, opt: AdamW, alpha: float = 0.25, batch_index: int = 0
) -> tuple[dict, ForwardState]:
    """One AdamW update on the batch-mean loss. Mutates ``model`` in place."""
    if len(S) == 0:
        raise ValueError("empty batch")
    # A blown-up model is reported below; the backward pass may overflow first.
    with np.errstate(over="ignore", invalid="ignore"):
        state, grads = forward_backward(S, model, alpha)
    rec, rq = float(state.rec.mean()), float(state.rq.mean())
    if not np.isfinite(rec + rq):
        raise TrainingError(
            f"non-finite loss at batch {batch_index} (L_rec={rec}, L_rq={rq}); parameter norms: {_param_norms(model)}"
        )
    opt.step(model.parameters(), grads.as_list())
    return {"rec": rec, "rq": rq, "total": rec + rq}, state


# ------------------------------------------------------------ initialization

def kmeans(X: np.ndarray, k: int, iters: int, rng: np.random.Generator) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding. Empty clusters keep their centroid."""
    n = len(X)
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            i = rng.choice(n, p=d2 / total)
        else:
            i = rng.integers(n)
        centers[j] = X[i]
        d2 = np.minimum(d2, ((X - centers[j]) ** 2).sum(axis=1))
    for _ in range(iters):
        assign = nearest_code(X, centers)
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, X)
        counts = np.bincount(assign, minlength=k)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
    return centers


def init_model(cfg: QuantizerConfig, sample: np.ndarray | None, input_dim: int | None = None) -> RqVaeModel:
    """Seeded initialization; k-means codebooks are fitted level by level on encoded residuals."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    if sample is not None:
        sample = np.atleast_2d(np.asarray(sample, dtype=np.float64))
        if input_dim is None:
            input_dim = sample.shape[1]
    if input_dim is None:
        raise ConfigError("input dimension unknown: pass a sample or input_dim", field="input_dim")
    enc_dims = [input_dim, *cfg.encoder_hidden, cfg.code_dim]
    dec_dims = [cfg.code_dim, *reversed(cfg.encoder_hidden), input_dim]
    encoder = _init_mlp(enc_dims, rng)
    decoder = _init_mlp(dec_dims, rng)
    L, K, D = cfg.levels, cfg.codebook_size, cfg.code_dim
    if cfg.codebook_init == "random":
        codebooks = rng.uniform(-1.0 / K, 1.0 / K, size=(L, K, D))
    else:
        if sample is None or len(sample) == 0:
            raise ConfigError("k-means codebook init needs a non-empty sample", field="codebook_init")
        codebooks = np.empty((L, K, D))
        r = mlp_forward(encoder, sample)[0]
        for l in range(L):
            codebooks[l] = kmeans(r, K, cfg.kmeans_iters, rng)
            r = r - codebooks[l][nearest_code(r, codebooks[l])]
    return RqVaeModel(encoder, decoder, codebooks)


# ------------------------------------------------------------------ training

def train(
    embeddings: EmbeddingTable | np.ndarray, cfg: QuantizerConfig, model: RqVaeModel | None = None
) -> tuple[RqVaeModel, list[dict]]:
    """Mini-batch training. Returns the model and one history entry per epoch.

    History entries hold the epoch-mean ``rec`` and ``rq`` (averaged over
    examples, measured before each update), ``utilization`` per level and the
    number of codes reseeded at the end of the epoch.
    """
    X = embeddings.vectors if isinstance(embeddings, EmbeddingTable) else np.asarray(embeddings, dtype=np.float64)
    if len(X) == 0:
        raise ValueError("cannot train on an empty embedding table")
    X = np.ascontiguousarray(X, dtype=np.float64)
    if model is None:
        model = init_model(cfg, X)
    opt = AdamW.for_config(model, cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    L, K = cfg.levels, cfg.codebook_size
    history = []
    batch_counter = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(X))
        used = np.zeros((L, K), dtype=bool)
        rec_sum = rq_sum = 0.0
        state = None
        for start in range(0, len(X), cfg.batch_size):
            batch = X[order[start:start + cfg.batch_size]]
            metrics, state = train_step(batch, model, opt, cfg.alpha, batch_counter)
            batch_counter += 1
            rec_sum += metrics["rec"] * len(batch)
            rq_sum += metrics["rq"] * len(batch)
            for l in range(L):
                used[l, state.indices[:, l]] = True
        reseeded = 0
        if cfg.reseed_dead_codes and state is not None:
            for l in range(L):
                dead = np.flatnonzero(~used[l])
                if len(dead) == 0:
                    continue
                pool = state.residuals[l]
                picks = rng.integers(len(pool), size=len(dead))
                model.codebooks[l, dead] = pool[picks]
                # Stale moments would drag the fresh codes straight back.
                opt.m[-1][l, dead] = 0.0
                opt.v[-1][l, dead] = 0.0
                reseeded += len(dead)
        entry = {
            "epoch": epoch + 1,
            "rec": rec_sum / len(X),
            "rq": rq_sum / len(X),
            "utilization": [float(u) for u in used.mean(axis=1)],
            "reseeded": reseeded,
        }
        history.append(entry)
        log.debug("epoch %d rec=%.5f rq=%.5f util=%s", epoch + 1, entry["rec"], entry["rq"], entry["utilization"])
    return model, history


def utilization(codes: np.ndarray, codebook_size: int) -> list[float]:
    """Fraction of codes used at least once, per level, for an (N, L) code array."""
    codes = np.atleast_2d(codes)
    return [len(np.unique(codes[:, l])) / codebook_size for l in range(codes.shape[1])]


def tokenize_all(
    embeddings: EmbeddingTable, model: RqVaeModel, ids: Sequence[str] | None = None
) -> tuple[dict[str, list[int]], dict[str, np.ndarray]]:
    """Raw code sequences and quantized vectors for each requested location."""
    ids = list(embeddings.ids) if ids is None else list(ids)
    index = embeddings.index
    missing = [i for i in ids if i not in index]
    if missing:
        raise KeyError(f"location {missing[0]!r} missing from embedding table")
    if not ids:
        return {}, {}
    X = embeddings.vectors[[index[i] for i in ids]]
    idx, zhat, _ = quantize_batch(model.encode(X), model.codebooks)
    codes = {loc: [int(c) for c in idx[n]] for n, loc in enumerate(ids)}
    zhats = {loc: zhat[n].copy() for n, loc in enumerate(ids)}
    return codes, zhats


# --------------------------------------------------------------- checkpoints

def save_model(
    manifest_path: str | Path, model: RqVaeModel, cfg: QuantizerConfig, history: list[dict] | None = None
) -> None:
    manifest_path = Path(manifest_path)
    blob = manifest_path.with_suffix(".bin")
    params = model.parameters()
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": cfg.to_dict(),
        "input_dim": model.input_dim,
        "epoch": len(history or []),
        "loss_history": history or [],
        "parameters": [{"name": n, "shape": list(p.shape)} for n, p in zip(model.parameter_names(), params)],
        "blob": blob.name,
    }
    blob.write_bytes(b"".join(np.ascontiguousarray(p, dtype="<f4").tobytes() for p in params))
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_model(manifest_path: str | Path) -> tuple[RqVaeModel, QuantizerConfig, list[dict]]:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise LoadError(f"model manifest {manifest_path} not found", field="manifest") from None
    cfg = QuantizerConfig.from_dict(manifest["config"])
    shell = init_model(
        QuantizerConfig.from_dict({**manifest["config"], "codebook_init": "random"}), None, manifest["input_dim"]
    )
    blob = manifest_path.parent / manifest.get("blob", manifest_path.with_suffix(".bin").name)
    if not blob.exists():
        raise LoadError(f"model blob {blob} not found", field="blob")
    flat = np.frombuffer(blob.read_bytes(), dtype="<f4").astype(np.float64)
    needed = sum(p.size for p in shell.parameters())
    if flat.size != needed:
        raise LoadError(f"model blob holds {flat.size} values, expected {needed}", field="blob")
    offset = 0
    for p in shell.parameters():
        p[...] = flat[offset:offset + p.size].reshape(p.shape)
        offset += p.size
    return shell, cfg, manifest.get("loss_history", [])
