import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mobitok.errors import ConfigError, InvalidPrefixError
from mobitok.tokens import (
    TokenMap,
    allowed_next,
    assign_tokens,
    build_trie,
    format_tokens,
    level_token,
    parse_tokens,
)

raw_maps = st.integers(1, 4).flatmap(
    lambda L: st.dictionaries(
        st.text("abcdefgh", min_size=1, max_size=3), st.lists(st.integers(0, 3), min_size=L, max_size=L), max_size=40
    )
)


def test_naming_rule():
    assert assign_tokens({"x": [5, 17]})["x"] == ("<a_5>", "<b_17>")
    assert level_token(25, 0) == "<z_0>"
    with pytest.raises(ConfigError):
        level_token(26, 0)


def test_collisions_get_dup_suffix_in_id_order():
    tm = assign_tokens({"q": [1, 2, 3, 4], "p": [1, 2, 3, 4], "r": [1, 2, 3, 5]})
    assert tm["p"] == ("<a_1>", "<b_2>", "<c_3>", "<d_4>", "<dup_0>")
    assert tm["q"] == ("<a_1>", "<b_2>", "<c_3>", "<d_4>", "<dup_1>")
    assert tm["r"] == ("<a_1>", "<b_2>", "<c_3>", "<d_5>")


def test_mixed_lengths_rejected():
    with pytest.raises(ValueError):
        assign_tokens({"a": [1], "b": [1, 2]})


@given(raw_maps)
def test_assignment_is_injective_and_prefix_free(raw):
    tm = assign_tokens(raw)
    seqs = [tm[k] for k in raw]
    for a, b in itertools.combinations(seqs, 2):
        assert a != b
        assert a[: len(b)] != b and b[: len(a)] != a
    for k in raw:
        assert tm.lookup(tm[k]) == k
        assert tm.lookup(tm.text(k)) == k


@given(raw_maps)
def test_trie_leaves_equal_map(raw):
    tm = assign_tokens(raw)
    trie = build_trie(tm)
    leaves = dict((loc, path) for path, loc in trie.leaves())
    assert leaves == {k: tm[k] for k in raw}
    assert len(trie) == len(raw)


def test_single_location_trie():
    trie = build_trie(TokenMap({"only": ["<a_0>", "<b_1>"]}))
    assert list(trie.leaves()) == [(("<a_0>", "<b_1>"), "only")]


def test_hand_built_trie_shape():
    trie = build_trie(TokenMap({"A": ["<a_1>", "<b_1>"], "B": ["<a_1>", "<b_2>"]}))
    assert list(trie.root.children) == ["<a_1>"]
    child = trie.root.children["<a_1>"]
    assert [c.location_id for c in child.children.values()] == ["A", "B"]


def test_allowed_next():
    tm = TokenMap({"A": ["<a_1>", "<b_1>"], "B": ["<a_1>", "<b_2>"], "C": ["<a_3>", "<b_0>"]})
    trie = build_trie(tm)
    assert allowed_next(trie, []).tokens == ("<a_1>", "<a_3>")
    assert allowed_next(trie, ["<a_1>"]).tokens == ("<b_1>", "<b_2>")
    leaf = allowed_next(trie, ["<a_3>", "<b_0>"])
    assert leaf.location_id == "C" and leaf.tokens == ()
    with pytest.raises(InvalidPrefixError):
        allowed_next(trie, ["<a_2>"])
    with pytest.raises(KeyError):
        allowed_next(trie, ["<a_1>", "<b_1>", "<c_0>"])


def test_prefix_violation_rejected():
    with pytest.raises(ValueError):
        build_trie(TokenMap({"A": ["<a_1>"], "B": ["<a_1>", "<b_2>"]}))


def test_map_rejects_shared_sequences():
    with pytest.raises(ValueError):
        TokenMap({"A": ["<a_1>"], "B": ["<a_1>"]})


def test_text_round_trip_and_parse():
    assert format_tokens(["<a_1>", "<b_22>", "<dup_0>"]) == "<a_1><b_22><dup_0>"
    assert parse_tokens("go to <a_1><b_22><dup_0> now, <sep> is not one") == ["<a_1>", "<b_22>", "<dup_0>"]


def test_save_load(tmp_path):
    tm = assign_tokens({"x": [1, 2], "y": [1, 2], "z": [0, 0]})
    tm.save(tmp_path / "m.json")
    assert TokenMap.load(tmp_path / "m.json") == tm
    assert tm.vocabulary == {"<a_1>", "<b_2>", "<dup_0>", "<dup_1>", "<a_0>", "<b_0>"}
