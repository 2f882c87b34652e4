import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from revkit.align_gmm import (Alignment, AlignmentError, GmmAcousticModel, HmmTopology, PhoneSet, em_train,
                              expand, flat_start, force_align, is_legal_path, sample_from_model,
                              split_components, train_aligner, transfer_alignment, viterbi_left_to_right)


def random_model(n_phones, dim, seed, sep=3.0, self_loop=0.8, n_mix=1):
    rng = np.random.default_rng(seed)
    s = 3 * n_phones
    return GmmAcousticModel(
        weights=np.full((s, n_mix), 1.0 / n_mix),
        means=sep * rng.standard_normal((s, n_mix, dim)),
        variances=np.ones((s, n_mix, dim)),
        log_self=np.full(s, np.log(self_loop)),
        log_fwd=np.full(s, np.log1p(-self_loop)),
    )


def sampled_corpus(model, n_phones, n_utts, seed):
    rng = np.random.default_rng(seed)
    corpus, truth = [], []
    for i in range(n_utts):
        phones = list(rng.integers(0, n_phones, size=int(rng.integers(3, 7))))
        x, states = sample_from_model(model, phones, rng)
        corpus.append((f"u{i}", phones, x))
        truth.append(states)
    return corpus, truth


def test_phone_set_basics():
    ps = PhoneSet.synthetic(3)
    assert ps.symbols == ("sil", "p0", "p1", "p2")
    assert ps.n_states == 12
    assert ps.encode(["sil", "p2"]) == [0, 3]
    with pytest.raises(KeyError):
        ps.index("zz")
    with pytest.raises(ValueError):
        PhoneSet(("a", "b"))


def test_phone_set_from_file(tmp_path):
    (tmp_path / "phones.txt").write_text("sil\na\nb\n")
    assert PhoneSet.from_file(tmp_path / "phones.txt").symbols == ("sil", "a", "b")


def test_topology_validation():
    with pytest.raises(ValueError):
        HmmTopology(self_loop=1.0)


def test_expand():
    assert expand([2, 0]).tolist() == [6, 7, 8, 0, 1, 2]


def test_flat_start_uses_thirds():
    # one phone, 9 frames: frames 0-2, 3-5, 6-8 land on the three states
    x = np.arange(9.0)[:, None]
    m = flat_start([("u", [0], x)], 3)
    assert m.means[:, 0, 0].tolist() == [1.0, 4.0, 7.0]
    assert np.allclose(m.weights, 1.0)


def test_flat_start_too_short():
    with pytest.raises(AlignmentError, match="too short"):
        flat_start([("u", [0, 1], np.zeros((5, 2)))], 6)


def test_viterbi_too_short():
    with pytest.raises(AlignmentError, match="too short for transcript"):
        viterbi_left_to_right(np.zeros((2, 3)), np.zeros(3), np.zeros(3))


def test_viterbi_picks_obvious_path():
    ll = np.full((6, 3), -10.0)
    ll[[0, 1], 0] = 0
    ll[[2, 3, 4], 1] = 0
    ll[5, 2] = 0
    path, _ = viterbi_left_to_right(ll, np.log(np.full(3, 0.5)), np.log(np.full(3, 0.5)))
    assert path.tolist() == [0, 0, 1, 1, 1, 2]


def test_force_align_exact_length_is_one_frame_per_state():
    m = random_model(2, 3, 0)
    ali = force_align(m, np.zeros((6, 3)), [1, 0], "u")
    assert ali.states.tolist() == [3, 4, 5, 0, 1, 2]
    with pytest.raises(AlignmentError, match="u"):
        force_align(m, np.zeros((5, 3)), [1, 0], "u")


@pytest.mark.parametrize("seed", range(5))
def test_force_align_recovers_generated_states(seed):
    model = random_model(4, 6, seed)
    corpus, truth = sampled_corpus(model, 4, 20, seed + 100)
    hits = total = 0
    for (uid, phones, x), states in zip(corpus, truth):
        ali = force_align(model, x, phones, uid)
        assert is_legal_path(ali.states, phones)
        hits += int(np.sum(ali.states == states))
        total += len(states)
    assert hits / total >= 0.90


def test_force_align_is_deterministic():
    model = random_model(3, 4, 1)
    corpus, _ = sampled_corpus(model, 3, 3, 2)
    uid, phones, x = corpus[0]
    a, b = force_align(model, x, phones), force_align(model, x, phones)
    assert np.array_equal(a.states, b.states) and a.score == b.score


def test_em_loglik_non_decreasing():
    model = random_model(3, 4, 7, sep=2.0)
    corpus, _ = sampled_corpus(model, 3, 30, 8)
    _, hist = em_train(flat_start(corpus, 9), corpus, iterations=10)
    for a, b in zip(hist, hist[1:]):
        assert b >= a - 1e-6 * abs(a)


def test_mixup_weights_sum_to_one():
    model = random_model(2, 3, 3)
    grown = split_components(model, 4)
    assert grown.n_mix == 4
    assert np.allclose(grown.weights.sum(1), 1.0)
    corpus, _ = sampled_corpus(model, 2, 10, 4)
    trained, _ = em_train(flat_start(corpus, 6), corpus, iterations=4, mixup_schedule={1: 2, 2: 4})
    assert trained.n_mix == 4
    assert np.allclose(trained.weights.sum(1), 1.0)
    assert np.all(trained.variances > 0)


def test_train_aligner_learns_generated_data():
    model = random_model(3, 5, 11, sep=4.0)
    corpus, truth = sampled_corpus(model, 3, 40, 12)
    learned = train_aligner(corpus, 9, iterations=8)
    hits = total = 0
    for (uid, phones, x), states in zip(corpus, truth):
        hits += int(np.sum(force_align(learned, x, phones).states == states))
        total += len(states)
    assert hits / total >= 0.85


def test_model_save_load(tmp_path):
    m = random_model(2, 3, 5, n_mix=2)
    m.save(tmp_path / "gmm.npz")
    back = GmmAcousticModel.load(tmp_path / "gmm.npz")
    for name in ("weights", "means", "variances", "log_self", "log_fwd"):
        assert np.array_equal(getattr(m, name), getattr(back, name))


def test_transfer_alignment_cases():
    ali = Alignment("u", np.array([0, 0, 1, 2, 2]))
    same = transfer_alignment(ali, 5)
    assert np.array_equal(same.states, ali.states) and same.adjusted == 0
    longer = transfer_alignment(ali, 7)
    assert longer.states.tolist() == [0, 0, 1, 2, 2, 2, 2] and longer.adjusted == 2
    shorter = transfer_alignment(ali, 4)
    assert shorter.states.tolist() == [0, 0, 1, 2] and shorter.adjusted == -1
    with pytest.raises(AlignmentError, match="time base mismatch"):
        transfer_alignment(ali, 20)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=5), st.integers(0, 30), st.integers(0, 2**31 - 1))
def test_viterbi_output_is_legal(phones, extra, seed):
    n = 3 * len(phones)
    ll = np.random.default_rng(seed).standard_normal((n + extra, n))
    path, _ = viterbi_left_to_right(ll, np.log(np.full(n, 0.6)), np.log(np.full(n, 0.4)))
    states = expand(phones)[path]
    assert is_legal_path(states, phones)


def test_is_legal_path_rejects_skips():
    assert is_legal_path(np.array([0, 1, 1, 2]), [0])
    assert not is_legal_path(np.array([0, 2, 2]), [0])
    assert not is_legal_path(np.array([0, 1]), [0])
    assert not is_legal_path(np.array([1, 2, 0]), [0])
