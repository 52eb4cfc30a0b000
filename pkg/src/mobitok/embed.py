"""Initial location representations.

Two sources: vectors produced offline by a language model and stored as a
manifest + float32 blob, or a deterministic character-trigram hashing
featurizer so the pipeline runs without any model.

Manifest layout (JSON)::

    {"format_version": 1, "dim": D, "count": N, "ids": [...], "blob": "name.bin"}

The blob holds N*D little-endian float32 values, row-major in ``ids`` order.
``blob`` is optional and defaults to the manifest path with a ``.bin`` suffix.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import LoadError

FORMAT_VERSION = 1
DEFAULT_EXTERNAL_DIM = 2048
_HASH_KEY = b"mobitok-trigram-v1"
# Start/end markers so that every non-empty text yields at least one trigram.
_BOS, _EOS = "\x02", "\x03"


@dataclass(frozen=True)
class EmbeddingTable:
    ids: tuple[str, ...]
    vectors: np.ndarray  # (count, dim) float64

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.ids):
            raise ValueError(f"vectors shape {self.vectors.shape} does not match {len(self.ids)} ids")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate ids in embedding table")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embedding table contains non-finite values")
        self.vectors.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def row(self, loc_id: str) -> np.ndarray:
        return self.vectors[self.index[loc_id]]

    @cached_property
    def index(self) -> dict[str, int]:
        return {i: n for n, i in enumerate(self.ids)}

    def as_dict(self) -> dict[str, np.ndarray]:
        return {i: self.vectors[n] for n, i in enumerate(self.ids)}

    @classmethod
    def from_mapping(cls, entries: Mapping[str, np.ndarray], ids: Sequence[str] | None = None) -> "EmbeddingTable":
        ids = list(entries) if ids is None else list(ids)
        if not ids:
            return cls((), np.zeros((0, 0)))
        return cls(tuple(ids), np.stack([np.asarray(entries[i], dtype=np.float64) for i in ids]))


def _blob_path(manifest_path: Path, manifest: dict) -> Path:
    name = manifest.get("blob")
    return manifest_path.parent / name if name else manifest_path.with_suffix(".bin")


def load_embeddings(manifest_path: str | Path) -> EmbeddingTable:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise LoadError(f"embedding manifest {manifest_path} not found", field="manifest") from None
    for key in ("dim", "count", "ids"):
        if key not in manifest:
            raise LoadError(f"manifest lacks {key!r}", field=key)
    dim, count, ids = manifest["dim"], manifest["count"], manifest["ids"]
    if not isinstance(dim, int) or dim < 0:
        raise LoadError(f"bad dim {dim!r}", field="dim")
    if count != len(ids):
        raise LoadError(f"count {count} disagrees with {len(ids)} ids", field="count")
    blob = _blob_path(manifest_path, manifest)
    if not blob.exists():
        raise LoadError(f"embedding blob {blob} not found", field="blob")
    raw = blob.read_bytes()
    expected = dim * count * 4
    if len(raw) != expected:
        raise LoadError(f"blob has {len(raw)} bytes, expected dim*count*4 = {expected}", field="blob")
    vec = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(count, dim)
    return EmbeddingTable(tuple(str(i) for i in ids), vec)


def save_embeddings(manifest_path: str | Path, table: EmbeddingTable) -> None:
    manifest_path = Path(manifest_path)
    blob = manifest_path.with_suffix(".bin")
    dim = table.dim if len(table) else 0
    manifest = {
        "format_version": FORMAT_VERSION,
        "dim": dim,
        "count": len(table),
        "ids": list(table.ids),
        "blob": blob.name,
    }
    blob.write_bytes(np.ascontiguousarray(table.vectors, dtype="<f4").tobytes())
    manifest_path.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")


def _trigram_hash(gram: str) -> int:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=_HASH_KEY).digest()
    return int.from_bytes(digest, "little")


def trigrams(text: str) -> list[str]:
    if not text:
        return []
    padded = _BOS + text + _EOS
    return [padded[i:i + 3] for i in range(len(padded) - 2)]


def hash_featurize(description: str, dim: int = 256) -> np.ndarray:
    """L2-normalized signed-hash bag of character trigrams."""
    if dim < 8:
        raise ValueError(f"dim must be >= 8, got {dim}")
    vec = np.zeros(dim, dtype=np.float64)
    grams = trigrams(description)
    if not grams:
        return vec
    hashes = [_trigram_hash(g) for g in grams]
    for h in hashes:
        vec[h % dim] += -1.0 if h >> 63 else 1.0
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        # Every signed contribution cancelled; fall back to unsigned counts.
        for h in hashes:
            vec[h % dim] += 1.0
        norm = np.linalg.norm(vec)
    return vec / norm


def featurize_all(descriptions: Mapping[str, str], dim: int = 256) -> EmbeddingTable:
    ids = sorted(descriptions)
    return EmbeddingTable.from_mapping({i: hash_featurize(descriptions[i], dim) for i in ids}, ids)
