import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _oracles import all_sequences, brute_force_edit_costs, canonical_sequences
from revkit.decode_eval import (DecodeError, PhoneLoopGraph, ScoreReport, edit_table, per, phone_loop_decode,
                                posteriors_to_loglik, score_corpus)


def test_uniform_posteriors_with_uniform_priors_are_flat():
    p = np.full((4, 6), 1 / 6)
    ll = posteriors_to_loglik(p, np.log(np.full(6, 1 / 6)))
    assert np.allclose(ll, 0.0)


def test_loglik_scaling_and_log_domain():
    rng = np.random.default_rng(0)
    p = rng.dirichlet(np.ones(5), size=3)
    pri = np.log(rng.dirichlet(np.ones(5)))
    a = posteriors_to_loglik(p, pri, acoustic_scale=0.5)
    assert np.allclose(a, 0.5 * (np.log(p) - pri))
    assert np.allclose(posteriors_to_loglik(np.log(p), pri, 0.5, log_domain=True), a)


def test_loglik_rejects_zero_prior_and_width_mismatch():
    with pytest.raises(DecodeError):
        posteriors_to_loglik(np.ones((2, 2)) / 2, np.array([0.0, -np.inf]))
    with pytest.raises(DecodeError):
        posteriors_to_loglik(np.ones((2, 3)) / 3, np.log(np.ones(2) / 2))


def scripted_scores(phones, durations, n_phones, margin=10.0):
    rows = []
    for p, d in zip(phones, durations):
        for k in range(3):
            for _ in range(d):
                row = np.zeros(3 * n_phones)
                row[3 * p + k] = margin
                rows.append(row)
    return np.array(rows)


def test_single_phone_utterance():
    ll = scripted_scores([2], [4], 4)
    assert phone_loop_decode(ll, PhoneLoopGraph(4)) == [2]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=8), st.integers(0, 2**31 - 1))
def test_decoder_recovers_scripted_sequence(phones, seed):
    durations = np.random.default_rng(seed).integers(1, 5, size=len(phones))
    ll = scripted_scores(phones, durations, 6)
    assert phone_loop_decode(ll, PhoneLoopGraph(6)) == phones


def test_decoder_too_short_and_width_mismatch():
    with pytest.raises(DecodeError, match="too short"):
        phone_loop_decode(np.zeros((2, 6)), PhoneLoopGraph(2))
    with pytest.raises(DecodeError):
        phone_loop_decode(np.zeros((5, 7)), PhoneLoopGraph(2))


def test_insertion_penalty_never_adds_phones():
    rng = np.random.default_rng(4)
    ll = 3 * rng.standard_normal((80, 15))
    counts = [len(phone_loop_decode(ll, PhoneLoopGraph(5, insertion_penalty=pen))) for pen in (0, 1, 3, 10, 50)]
    assert all(b <= a for a, b in zip(counts, counts[1:]))
    assert counts[-1] < counts[0]


def test_per_basic_cases():
    assert per(list("abc"), list("abc")).per == 0.0
    rep = per(list("abc"), list("abd"))
    assert (rep.substitutions, rep.deletions, rep.insertions) == (1, 0, 0)
    assert per(list("abc"), []).per == 100.0
    assert per(list("abc"), list("abcx")).insertions == 1
    assert per(list("ab"), list("xxxxxx")).per == 300.0
    with pytest.raises(ValueError, match="empty reference"):
        per([], ["a"])


def test_edit_table_corner():
    d = edit_table("kitten", "sitting")
    assert d[-1, -1] == 3
    assert d[0].tolist() == list(range(8))


@pytest.mark.parametrize("a,b", [(1, 3), (3, 3), (4, 2), (2, 5)])
def test_per_matches_brute_force_small(a, b):
    refs, hyps = all_sequences(3, a), all_sequences(3, b)
    best = brute_force_edit_costs(refs, hyps)
    for i, r in enumerate(refs.tolist()):
        for j, h in enumerate(hyps.tolist()):
            assert per(r, h).errors == best[i, j]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=6), st.lists(st.integers(0, 3), max_size=6),
       st.permutations(range(4)))
def test_per_invariant_under_relabelling(ref, hyp, perm):
    mapped = per([perm[s] for s in ref], [perm[s] for s in hyp])
    assert mapped.errors == per(ref, hyp).errors


def test_canonical_sequence_counts():
    # restricted growth strings with at most 4 blocks
    assert [len(canonical_sequences(4, n)) for n in range(1, 7)] == [1, 2, 5, 15, 51, 187]


def test_score_corpus_ignores_symbols():
    refs = {"u1": ["sil", "a", "b", "sil"], "u2": ["c"]}
    hyps = {"u1": ["a", "sil", "b"], "u2": ["d"]}
    rep = score_corpus(refs, hyps, ignore=["sil"])
    assert rep.ref_tokens == 3 and rep.errors == 1
    assert rep.per == pytest.approx(100 / 3)
    assert rep.per_utterance == {"u1": 0.0, "u2": 100.0}
    with pytest.raises(KeyError):
        score_corpus({"x": ["a"]}, {})


def test_score_report_tsv():
    rep = ScoreReport().add(per(["a", "b"], ["a"], "u"))
    text = rep.to_tsv()
    assert "u\t50.00" in text and "TOTAL\t50.00" in text
