from dataclasses import replace

import numpy as np
import pytest

from revkit import bench
from revkit.align_gmm import PhoneSet, is_legal_path
from revkit.frontend import ContextWindowSpec, FrameSpec
from revkit.signal_io import load_manifest, read_archive, read_wav

SMALL = bench.SyntheticCorpusSpec(n_utterances=6, seed=3)


def test_label_count_matches_frame_count():
    for u in bench.synth_corpus(SMALL):
        n = len(u.wave)
        assert len(u.labels) == 1 + (n - 400) // 160


def test_corpus_is_deterministic():
    a, b = bench.synth_corpus(SMALL), bench.synth_corpus(SMALL)
    for ua, ub in zip(a, b):
        assert np.array_equal(ua.wave.samples, ub.wave.samples)
        assert np.array_equal(ua.labels, ub.labels)
    other = bench.synth_corpus(bench.SyntheticCorpusSpec(n_utterances=6, seed=4))
    assert not np.array_equal(a[0].wave.samples[:100], other[0].wave.samples[:100])


def test_phone_durations_within_bounds():
    for u in bench.synth_corpus(SMALL):
        durs = np.diff(u.boundaries) / 16000
        speech = np.array([s != "sil" for s in u.transcript])
        assert np.all((durs[speech] >= 0.060 - 1 / 16000) & (durs[speech] <= 0.200 + 1 / 16000))
        assert u.transcript[0] == u.transcript[-1] == "sil"
        assert 5 <= speech.sum() <= 15


def test_oracle_labels_are_legal_paths():
    phones = PhoneSet.synthetic(10)
    for u in bench.synth_corpus(SMALL):
        assert is_legal_path(u.labels, u.phone_ids)
        assert u.phone_ids == phones.encode(u.transcript)


def test_oracle_labels_split_thirds():
    # one 90 ms phone after a 100 ms lead-in: frame centres decide membership
    bounds = np.array([0, 1600, 1600 + 1440, 1600 + 1440 + 1600])
    labels = bench.oracle_labels(bounds, [0, 2, 0], bounds[-1], FrameSpec())
    centres = 160 * np.arange(len(labels)) + 200
    inside = (centres >= 1600) & (centres < 3040)
    phone_labels = labels[inside]
    assert set(phone_labels // 3) == {2}
    counts = np.bincount(phone_labels % 3, minlength=3)
    assert counts.max() - counts.min() <= 1


def test_spec_invariants():
    with pytest.raises(ValueError):
        bench.SyntheticCorpusSpec(formant_range=(200, 9000))
    with pytest.raises(ValueError):
        bench.SyntheticCorpusSpec(duration_range=(0.01, 0.2))


def test_write_corpus_round_trip(tmp_path):
    utts = bench.synth_corpus(bench.SyntheticCorpusSpec(n_utterances=2, seed=1))
    bench.write_corpus(utts, tmp_path)
    m = load_manifest(tmp_path / "manifest.tsv", set(PhoneSet.synthetic(10).symbols))
    assert m.ids() == [u.utterance_id for u in utts]
    rec = m.records[0]
    assert np.array_equal(read_wav(m.audio(rec)).samples, utts[0].wave.samples.astype(np.float32))
    assert np.array_equal(read_archive(tmp_path / rec.oracle_labels_path).ravel(), utts[0].labels)


def fake_results():
    out = []
    for w in ("P16-F0", "P0-F16"):
        for seed in range(3):
            out.append(bench.ArmResult("rev", w, "standard", "none", seed, 10.0 + seed + (w == "P0-F16"),
                                       50.0 - seed, 5 + seed))
    return out


def test_report_rows_detail_and_aggregate():
    rows = bench.report_rows(fake_results())
    assert len(rows) == 6 + 2
    assert rows[0] == ["rev", "P16-F0", "standard", "none", "0", "10.0", "50.00", "5"]
    assert rows[6][4] == "mean±std" and rows[6][5] == "11.0±1.0"
    with pytest.raises(ValueError):
        bench.report_rows([])


def test_markdown_round_trips_tsv(tmp_path):
    res = fake_results()
    tsv = bench.emit_report(res, "tsv", tmp_path / "r.tsv")
    md = bench.emit_report(res, "markdown", tmp_path / "r.md")
    tsv_rows = [line.split("\t") for line in tsv.strip().splitlines()[1:]]
    assert bench.parse_markdown_report(md) == tsv_rows
    assert (tmp_path / "r.tsv").read_text() == tsv


def test_per_has_one_decimal():
    res = [bench.ArmResult("clean", "P8-F8", "standard", "none", 0, 12.345, 60.0, 3)]
    assert bench.report_rows(res)[0][5] == "12.3"


def test_seed_wins():
    res = fake_results()
    assert bench.seed_wins(res, {"window": "P16-F0"}, {"window": "P0-F16"}, "per") == (0, 3, 0)
    assert bench.seed_wins(res, {"window": "P16-F0"}, {"window": "P0-F16"}) == (0, 0, 3)


def test_config_parse_and_text_round_trip():
    cfg = bench.parse_config("condition = rev_noise\nseeds=0,2 # two\nwindows=P8-F8,P16-F0\nt60=0.5\n")
    assert cfg.condition == "rev_noise" and cfg.seeds == (0, 2)
    assert cfg.windows == ("P8-F8", "P16-F0") and cfg.t60 == 0.5
    assert bench.parse_config(cfg.to_text()) == cfg


def test_config_errors():
    with pytest.raises(ValueError, match="unknown key"):
        bench.parse_config("bogus=1")
    with pytest.raises(ValueError, match="line 2"):
        bench.parse_config("t60=0.3\nnonsense")
    with pytest.raises(ValueError):
        bench.ExperimentConfig(condition="clean", supervision="ct_lab")
    with pytest.raises(ValueError):
        bench.ExperimentConfig(window="P8")


TINY = dict(seeds=(0,), n_train=12, n_dev=4, n_test=4, hidden_layers=1, hidden_units=32, max_epochs=2,
            gmm_iterations=3, gmm_mixtures=1, n_phones=4, t60=0.3)


def test_tiny_window_sweep_runs():
    cfg = bench.ExperimentConfig(condition="rev", **TINY)
    res = bench.run_window_sweep(cfg, ["P4-F0", "P0-F4"])
    assert [r.window for r in res] == ["P4-F0", "P0-F4"]
    for r in res:
        assert 0 <= r.frame_acc <= 100 and r.per >= 0 and r.epochs >= 1


def test_tiny_supervision_and_pretraining_arms_share_data():
    cfg = bench.ExperimentConfig(condition="rev_noise", window="P2-F2", **TINY)
    sup = bench.run_supervision_experiment(cfg)
    assert [r.supervision for r in sup] == ["standard", "ct_lab"]
    pre = bench.run_pretraining_experiment(replace(cfg, condition="rev"))
    assert [(r.supervision, r.pretraining) for r in pre] == [("ct_lab", "rbm"), ("ct_lab", "ct")]
    assert pre[0].history.epochs[0].learning_rate == pre[1].history.epochs[0].learning_rate == 0.005


def test_seed_data_shapes():
    cfg = bench.ExperimentConfig(condition="rev", **TINY)
    data = bench.prepare_seed(cfg, 0)
    tr, dv, te = data.inputs(ContextWindowSpec(2, 2))
    assert tr[0].shape[1] == 45 * 5 and tr[0].dtype == np.float32
    for split in (data.train, data.dev, data.test):
        for f_clean, f_dist in zip(split.clean_feats, split.distant_feats):
            assert f_clean.shape == f_dist.shape
    y_std, _ = data.labels("standard")
    y_ct, _ = data.labels("ct_lab")
    assert [len(a) for a in y_std] == [len(a) for a in y_ct] == [len(f) for f in data.train.distant_feats]
