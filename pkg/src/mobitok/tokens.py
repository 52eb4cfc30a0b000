"""Location token vocabulary and the prefix trie used for constrained decoding."""

from __future__ import annotations

import json
import re
import string
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

from .errors import ConfigError, InvalidPrefixError

MAX_LEVELS = 26
TOKEN_RE = re.compile(r"<(?:[a-z]|dup)_\d+>")


def level_token(level: int, index: int) -> str:
    """``level_token(0, 5) == "<a_5>"``."""
    if not 0 <= level < MAX_LEVELS:
        raise ConfigError(f"at most {MAX_LEVELS} levels are supported, got level {level}", field="levels")
    return f"<{string.ascii_lowercase[level]}_{index}>"


def dup_token(j: int) -> str:
    return f"<dup_{j}>"


def format_tokens(tokens: Sequence[str]) -> str:
    return "".join(tokens)


def parse_tokens(text: str) -> list[str]:
    return TOKEN_RE.findall(text)


class TokenMap:
    """Injective mapping location id -> token sequence."""

    def __init__(self, sequences: Mapping[str, Sequence[str]]):
        self._seq = {k: tuple(v) for k, v in sequences.items()}
        self._inverse: dict[tuple[str, ...], str] = {}
        for loc, seq in self._seq.items():
            if seq in self._inverse:
                raise ValueError(f"locations {self._inverse[seq]!r} and {loc!r} share token sequence {seq}")
            self._inverse[seq] = loc

    def __getitem__(self, loc_id: str) -> tuple[str, ...]:
        return self._seq[loc_id]

    def __contains__(self, loc_id: object) -> bool:
        return loc_id in self._seq

    def __len__(self) -> int:
        return len(self._seq)

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._seq))

    def items(self):
        return ((k, self._seq[k]) for k in sorted(self._seq))

    def text(self, loc_id: str) -> str:
        return format_tokens(self._seq[loc_id])

    def lookup(self, tokens: Sequence[str] | str) -> str | None:
        if isinstance(tokens, str):
            tokens = parse_tokens(tokens)
        return self._inverse.get(tuple(tokens))

    @property
    def vocabulary(self) -> frozenset[str]:
        return frozenset(t for seq in self._seq.values() for t in seq)

    def to_json(self) -> dict[str, list[str]]:
        return {k: list(v) for k, v in self.items()}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TokenMap":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TokenMap) and self._seq == other._seq


def assign_tokens(raw: Mapping[str, Sequence[int]]) -> TokenMap:
    """Name raw code indices; identical code sequences get a trailing ``<dup_j>``."""
    lengths = {len(c) for c in raw.values()}
    if len(lengths) > 1:
        raise ValueError(f"raw code sequences have mixed lengths {sorted(lengths)}")
    groups: dict[tuple[int, ...], list[str]] = defaultdict(list)
    for loc in sorted(raw):
        groups[tuple(int(c) for c in raw[loc])].append(loc)
    sequences = {}
    for codes, locs in groups.items():
        base = [level_token(l, c) for l, c in enumerate(codes)]
        if len(locs) == 1:
            sequences[locs[0]] = base
        else:
            for j, loc in enumerate(locs):
                sequences[loc] = base + [dup_token(j)]
    return TokenMap(sequences)


@dataclass
class TrieNode:
    children: dict[str, "TrieNode"] = field(default_factory=dict)
    location_id: str | None = None

    @property
    def is_leaf(self) -> bool:
        return self.location_id is not None


@dataclass(frozen=True)
class Continuation:
    tokens: tuple[str, ...]
    location_id: str | None = None


class TokenTrie:
    def __init__(self, root: TrieNode, size: int):
        self.root = root
        self.size = size

    def __len__(self) -> int:
        return self.size

    def node(self, prefix: Sequence[str]) -> TrieNode:
        node = self.root
        for depth, tok in enumerate(prefix):
            nxt = node.children.get(tok)
            if nxt is None:
                raise InvalidPrefixError(f"prefix {list(prefix[:depth + 1])} is not in the trie")
            node = nxt
        return node

    def leaves(self) -> Iterator[tuple[tuple[str, ...], str]]:
        """Depth-first (path, location_id) pairs in sorted token order."""
        stack: list[tuple[tuple[str, ...], TrieNode]] = [((), self.root)]
        while stack:
            path, node = stack.pop()
            if node.is_leaf:
                yield path, node.location_id  # type: ignore[misc]
            for tok in reversed(list(node.children)):
                stack.append((path + (tok,), node.children[tok]))


def build_trie(token_map: TokenMap) -> TokenTrie:
    root = TrieNode()
    for loc, seq in token_map.items():
        if not seq:
            raise ValueError(f"location {loc!r} has an empty token sequence")
        node = root
        for tok in seq:
            if node.is_leaf:
                raise ValueError(f"sequence of {loc!r} extends the leaf of {node.location_id!r}")
            node = node.children.setdefault(tok, TrieNode())
        if node.is_leaf or node.children:
            raise ValueError(f"sequence of {loc!r} is a prefix of another sequence")
        node.location_id = loc

    def sort_children(n: TrieNode) -> None:
        n.children = dict(sorted(n.children.items()))
        for child in n.children.values():
            sort_children(child)

    sort_children(root)
    return TokenTrie(root, len(token_map))


def allowed_next(trie: TokenTrie, prefix: Sequence[str]) -> Continuation:
    node = trie.node(prefix)
    if node.is_leaf:
        return Continuation((), node.location_id)
    return Continuation(tuple(node.children))
