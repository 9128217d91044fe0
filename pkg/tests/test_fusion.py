from __future__ import annotations

import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dialect_corpus.fusion import (
    EPS,
    Hypothesis,
    align_pair,
    build_wtn,
    compute_confidence,
    detokenize,
    edit_counts,
    fuse,
    llm_correct,
    partition_by_confidence,
    rover_vote,
    tokenize,
)
from dialect_corpus.records import LabelTier, UtteranceRecord
from oracles import alignment_cost, all_sequences, enumerate_alignments


def H(system: str, text: str) -> Hypothesis:
    return Hypothesis(system, tuple(text))


# --- tokenizer ---------------------------------------------------------------

def test_tokenize_examples():
    assert tokenize("四川话") == ["四", "川", "话"]
    assert tokenize("GPS信号") == ["GPS", "信", "号"]
    assert tokenize("") == []
    assert tokenize("买 5G 手机, OK?") == ["买", "5G", "手", "机", ",", "OK", "?"]


tokens_strategy = st.lists(st.one_of(
    st.sampled_from(list("四川话巴适嘛，。!?-")),
    st.from_regex(r"[A-Za-z0-9]{1,4}", fullmatch=True),
), max_size=15)


@settings(max_examples=300)
@given(tokens_strategy)
def test_detokenize_round_trip(tokens):
    assert tokenize(detokenize(tokens)) == tokens


# --- pairwise alignment ------------------------------------------------------

def test_align_examples():
    assert align_pair(["x"], ["x"]) == ([("x", "x")], 0)
    assert align_pair(["a", "b"], ["b"]) == ([("a", EPS), ("b", "b")], 1)
    pairs, d = align_pair(["a", "b", "c"], ["a", "x", "c"])
    assert d == 1 and pairs == [("a", "a"), ("b", "x"), ("c", "c")]


def _preferred(alignments):
    """Backtrace order: from the last column, diagonal before deletion
    before insertion, i.e. lexicographically smallest reversed op codes."""
    def rank(pair):
        a, b = pair
        return 0 if a is not None and b is not None else (1 if b is None else 2)
    return min(alignments, key=lambda al: [rank(p) for p in reversed(al)])


def test_align_matches_enumeration_small():
    seqs = all_sequences("abc", 3)
    for a, b in itertools.product(seqs, repeat=2):
        alignments = enumerate_alignments(a, b)
        best = min(alignment_cost(al) for al in alignments)
        optimal = [al for al in alignments if alignment_cost(al) == best]
        pairs, d = align_pair(list(a), list(b))
        assert d == best
        assert pairs == _preferred(optimal), (a, b)


def test_edit_counts_balance():
    c = edit_counts(list("四川话好听"), list("四川话好听嘛"))
    assert (c.substitutions, c.deletions, c.insertions) == (0, 0, 1)


# --- WTN and voting ----------------------------------------------------------

def test_single_hypothesis_one_slot_per_token():
    wtn = build_wtn([H("s1", "abc")])
    assert len(wtn) == 3 and wtn.column(0) == ["a", "b", "c"]


def test_identical_pair_slots():
    wtn = build_wtn([H("s1", "abc"), H("s2", "abc")])
    assert all([t for t, _ in slot] == [slot[0][0]] * 2 for slot in wtn.slots)


def test_gap_slot_example():
    wtn = build_wtn([H("s1", "abc"), H("s2", "ac"), H("s3", "abc")])
    assert [t for t, _ in wtn.slots[1]] == ["b", EPS, "b"]
    assert rover_vote(wtn) == ["a", "b", "c"]


def test_priority_breaks_ties():
    wtn = build_wtn([H("sys1", "x"), H("sys2", "y")])
    assert rover_vote(wtn, ["sys1", "sys2"]) == ["x"]
    assert rover_vote(wtn, ["sys2", "sys1"]) == ["y"]


def test_unanimous_identity():
    hyps = [H(s, "四川话") for s in ("a", "b", "c")]
    assert rover_vote(build_wtn(hyps)) == list("四川话")


@settings(max_examples=200, deadline=None)
@given(st.lists(st.text(alphabet="abcd", max_size=8), min_size=1, max_size=4))
def test_wtn_shape(texts):
    hyps = [H(f"s{i}", t) for i, t in enumerate(texts)]
    wtn = build_wtn(hyps)
    assert all(len(slot) == len(hyps) for slot in wtn.slots)
    assert max(len(t) for t in texts) <= len(wtn) <= sum(len(t) for t in texts)
    for i, t in enumerate(texts):
        assert [tok for tok in wtn.column(i) if tok is not EPS] == list(t)


@settings(max_examples=100)
@given(st.text(alphabet="abcd", max_size=10), st.integers(1, 5))
def test_n_copies_vote_identity(text, n):
    assert rover_vote(build_wtn([H(f"s{i}", text) for i in range(n)])) == list(text)


# --- correction --------------------------------------------------------------

def test_llm_identity_backend():
    out = llm_correct(list("abc"), [], lambda c, h: c)
    assert out.tokens == list("abc") and out.accepted


def test_llm_length_violation_keeps_consensus():
    out = llm_correct(list("abc"), [], lambda c, h: c + ["d"])
    assert out.tokens == list("abc") and out.violation and not out.accepted


def test_llm_substitution_accepted():
    out = llm_correct(list("abc"), [], lambda c, h: ["a", "x", "c"])
    assert out.tokens == ["a", "x", "c"] and out.accepted


def test_llm_failure_flagged():
    def boom(c, h):
        raise RuntimeError("down")
    out = llm_correct(list("abc"), [], boom)
    assert out.tokens == list("abc") and out.failed and out.candidate is None


# --- confidence --------------------------------------------------------------

def test_confidence_examples():
    assert compute_confidence(list("abc"), [list("abc")] * 4) == 1.0
    assert compute_confidence(list("abc"), [list("xyz")]) == 0.0
    assert abs(compute_confidence(list("abc"), [list("abc"), list("abc"), list("abx"), list("abc")])
               - 11 / 12) < 1e-9
    assert compute_confidence([], [list("abc")]) == 0.0


@settings(max_examples=200)
@given(st.text(alphabet="abc", min_size=1, max_size=6),
       st.lists(st.text(alphabet="abc", max_size=6), min_size=1, max_size=4), st.randoms())
def test_confidence_symmetric_and_bounded(final, cands, rnd):
    c = compute_confidence(list(final), [list(x) for x in cands])
    shuffled = cands[:]
    rnd.shuffle(shuffled)
    assert 0.0 <= c <= 1.0
    assert c == pytest.approx(compute_confidence(list(final), [list(x) for x in shuffled]), abs=1e-12)


def test_fuse_counts_rejected_candidate():
    hyps = [H("a", "abc"), H("b", "abc"), H("c", "abc")]
    result = fuse(hyps, lambda c, h: c + ["z"])
    assert result.final == list("abc")
    assert result.correction.violation
    # three perfect candidates plus one of length 4 at distance 1
    assert result.confidence == pytest.approx((3 + (1 - 1 / 4)) / 4)


# --- partition ---------------------------------------------------------------

def _rec(uid, conf):
    return UtteranceRecord(uid, "s", "a.wav", 0.0, 6.0, 6.0, "news", 20.0, confidence=conf)


def test_partition_examples():
    out = partition_by_confidence([_rec("a", 0.95), _rec("b", 0.90), _rec("c", 0.899), _rec("d", 0.59)])
    assert [r.label_tier for r in out] == [LabelTier.STRONG, LabelTier.STRONG, LabelTier.WEAK,
                                           LabelTier.DISCARDED]


def test_partition_requires_confidence():
    with pytest.raises(ValueError, match="confidence"):
        partition_by_confidence([_rec("a", None)])
