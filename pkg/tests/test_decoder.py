import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mobitok.decoder import (
    BOUNDARY,
    NgramScorer,
    beam_search,
    fit_from_trajectories,
    fit_ngram,
    path_log_prob,
    trajectory_stream,
)
from mobitok.errors import ConfigError
from mobitok.ingest import Trajectory
from mobitok.tokens import TokenMap, assign_tokens, build_trie

from helpers import HashScorer, TableScorer, exhaustive_ranking, rec


def random_map(rng: random.Random, n_leaves: int, levels: int, k: int) -> TokenMap:
    return assign_tokens({f"L{i:03d}": [rng.randrange(k) for _ in range(levels)] for i in range(n_leaves)})


# --------------------------------------------------------------- n-grams

def test_single_bigram_without_smoothing():
    scorer = fit_ngram([["x", "y"]], order=2, k=0.0)
    assert scorer.prob(["x"], "y") == 1.0


def test_add_k_hand_arithmetic():
    # |V| = {x, y, <sep>} = 3; count(x, y) = 2; count(x) = 2.
    scorer = fit_ngram([["x", "y"], ["x", "y"]], order=2, k=0.1)
    assert len(scorer.vocabulary) == 3
    assert scorer.prob(["x"], "y") == pytest.approx(2.1 / 2.3, rel=1e-12)
    assert scorer.prob(["x"], "x") == pytest.approx(0.1 / 2.3, rel=1e-12)


def test_leading_boundary_is_not_a_target():
    scorer = fit_ngram([[BOUNDARY, "x", BOUNDARY]], order=2, k=0.0)
    # (<sep>, <sep>) would be counted if the start marker were a target.
    assert scorer.prob([BOUNDARY], "x") == 1.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.sampled_from("abcd"), min_size=1, max_size=8), min_size=1, max_size=6),
       st.integers(1, 4), st.floats(0.01, 2.0), st.lists(st.sampled_from("abcde"), max_size=5))
def test_probabilities_normalize(streams, order, k, ctx):
    scorer = fit_ngram(streams, order, k, vocabulary="e")
    total = math.fsum(scorer.prob(ctx, t) for t in scorer.vocabulary)
    assert abs(total - 1.0) <= 1e-9


def test_unknown_token_has_zero_probability():
    scorer = fit_ngram([["a", "b"]], 2, 0.1)
    assert scorer.prob(["a"], "zzz") == 0.0
    assert scorer.log_prob(["a"], "zzz") == -math.inf


def test_fit_rejects_empty_data():
    with pytest.raises(ValueError):
        fit_ngram([], 3)
    with pytest.raises(ValueError):
        fit_ngram([[]], 3)


def test_bad_scorer_settings():
    with pytest.raises(ConfigError):
        NgramScorer(0, 0.1, [], {})
    with pytest.raises(ConfigError):
        NgramScorer(2, -1.0, [], {})


def test_save_load_roundtrip(tmp_path):
    scorer = fit_ngram([["a", "b", "c"], ["b", "c", "a"]], 3, 0.5)
    scorer.save(tmp_path / "s.json")
    back = NgramScorer.load(tmp_path / "s.json")
    for ctx in ([], ["a"], ["b", "c"], ["z", "z"]):
        for t in scorer.vocabulary:
            assert back.prob(ctx, t) == scorer.prob(ctx, t)


def test_trajectory_stream_layout():
    tm = TokenMap({"A": ["<a_1>", "<b_2>"], "B": ["<a_0>", "<b_0>"]})
    assert trajectory_stream(["A", "B"], tm) == [BOUNDARY, "<a_1>", "<b_2>", BOUNDARY, "<a_0>", "<b_0>", BOUNDARY]


def test_fit_from_trajectories_learns_transitions():
    tm = TokenMap({"A": ["<a_0>"], "B": ["<a_1>"], "C": ["<a_2>"]})
    trajs = [Trajectory("u", (rec("u", "A", 0), rec("u", "B", 1), rec("u", "C", 2)))] * 5
    scorer = fit_from_trajectories(trajs, tm, order=3, k=0.1)
    ctx = trajectory_stream(["A"], tm)
    assert max(tm.vocabulary, key=lambda t: scorer.prob(ctx, t)) == "<a_1>"


# ----------------------------------------------------------- beam search

def test_single_leaf():
    trie = build_trie(TokenMap({"only": ["<a_0>", "<b_0>"]}))
    for width in (1, 3, 50):
        assert beam_search(HashScorer(["<a_0>", "<b_0>"], "s"), [], trie, width, 5).location_ids == ["only"]


def test_three_leaves_hand_set_probabilities():
    tm = TokenMap({"P": ["<a_0>", "<b_0>"], "Q": ["<a_0>", "<b_1>"], "R": ["<a_1>", "<b_0>"]})
    # Path products: P = 0.7 * 5/7 = 0.5, Q = 0.7 * 2/7 = 0.2, R = 0.2 * 1.5 = 0.3.
    table = {
        (BOUNDARY, "<a_0>"): 0.7,
        (BOUNDARY, "<a_1>"): 0.2,
        ("<a_0>", "<b_0>"): 5 / 7,
        ("<a_0>", "<b_1>"): 2 / 7,
        # Scores need not normalize.
        ("<a_1>", "<b_0>"): 1.5,
    }
    scorer = TableScorer(table)
    trie = build_trie(tm)
    result = beam_search(scorer, [BOUNDARY], trie, width=15, topn=3)
    assert result.location_ids == ["P", "R", "Q"]
    assert [s for _, s in result.ranked] == pytest.approx([math.log(0.5), math.log(0.3), math.log(0.2)])
    assert list(result.ranked) == exhaustive_ranking(scorer, [BOUNDARY], trie, 3)


@pytest.mark.parametrize("seed", range(15))
def test_wide_beam_is_exhaustive(seed):
    rng = random.Random(seed)
    tm = random_map(rng, rng.randint(1, 200), rng.randint(1, 3), rng.randint(2, 8))
    trie = build_trie(tm)
    scorer = HashScorer(tm.vocabulary, f"s{seed}")
    topn = rng.randint(1, 20)
    got = beam_search(scorer, [BOUNDARY], trie, width=len(tm), topn=topn)
    assert list(got.ranked) == exhaustive_ranking(scorer, [BOUNDARY], trie, topn)


def test_beam_scores_are_path_log_probs():
    rng = random.Random(7)
    tm = random_map(rng, 60, 3, 4)
    scorer = HashScorer(tm.vocabulary, "p")
    for loc, s in beam_search(scorer, [], build_trie(tm), 5, 10).ranked:
        assert s == path_log_prob(scorer, [], tm[loc])


def test_beam_rejects_bad_sizes():
    trie = build_trie(TokenMap({"a": ["<a_0>"]}))
    with pytest.raises(ConfigError):
        beam_search(HashScorer([], ""), [], trie, width=0)
    with pytest.raises(ConfigError):
        beam_search(HashScorer([], ""), [], trie, topn=0)
