"""``revkit`` command line."""
from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import acoustic_net as net
from . import bench
from .align_gmm import (Alignment, GmmAcousticModel, PhoneSet, align_corpus, em_train, flat_start,
                        transfer_alignment)
from .contamination import ContaminationSpec, contaminate_corpus
from .decode_eval import PhoneLoopGraph, phone_loop_decode, posteriors_to_loglik, score_corpus
from .frontend import (ContextWindowSpec, NormalizationStats, StatsAccumulator, apply_normalizer,
                       base_features, splice)
from .ir_lab import SweepSpec, estimate_ir, estimate_t60, generate_ess, inverse_filter, load_ir, save_ir, synth_ir
from .signal_io import (load_manifest, read_archive, read_indexed_archive, read_wav, write_archive,
                        write_indexed_archive, write_wav)

log = logging.getLogger("revkit")


# ---------------------------------------------------------------------------
# helpers


def _phones(args) -> PhoneSet:
    return PhoneSet.from_file(args.phones) if args.phones else PhoneSet.synthetic(10)


def _manifest(path, phones: PhoneSet):
    return load_manifest(path, set(phones.symbols))


def _base(manifest) -> list[np.ndarray]:
    return [base_features(read_wav(manifest.audio(r))) for r in manifest]


def _window(args) -> ContextWindowSpec:
    return ContextWindowSpec(args.past, args.future)


def _stats_path(model_path) -> Path:
    return Path(str(model_path) + ".stats.rvk")


def _stats_digest(stats: NormalizationStats) -> str:
    return hashlib.sha256(stats.to_matrix().astype("<f4").tobytes()).hexdigest()[:16]


def _fit_stats(feats: list[np.ndarray], window: ContextWindowSpec) -> NormalizationStats:
    acc = StatsAccumulator()
    for f in feats:
        acc.add(splice(f, window))
    return acc.finalize()


def _inputs(feats, window, stats) -> list[np.ndarray]:
    return [apply_normalizer(splice(f, window), stats, np.float32) for f in feats]


def _labels(manifest, ali_path, feats) -> list[np.ndarray]:
    """Alignment rows for each record, stretched or cut to the feature length."""
    alis = read_indexed_archive(ali_path)
    out = []
    for rec, f in zip(manifest, feats):
        if rec.utterance_id not in alis:
            raise SystemExit(f"no alignment for {rec.utterance_id} in {ali_path}")
        states = alis[rec.utterance_id].ravel().astype(np.int64)
        out.append(transfer_alignment(Alignment(rec.utterance_id, states), len(f)).states)
    return out


def _dataset(manifest_path, ali_path, phones, window, stats=None):
    manifest = _manifest(manifest_path, phones)
    feats = _base(manifest)
    if stats is None:
        stats = _fit_stats(feats, window)
    x = np.concatenate(_inputs(feats, window, stats))
    y = np.concatenate(_labels(manifest, ali_path, feats))
    return (x, y), stats


def _schedule(args, lr=None) -> net.TrainSchedule:
    return net.TrainSchedule(initial_lr=lr or args.lr, max_epochs=args.max_epochs, batch_size=args.batch_size,
                             seed=args.seed)


def _save(model: net.MlpModel, stats: NormalizationStats, window: ContextWindowSpec, path) -> None:
    model.meta["window"] = window.name
    model.meta["feature_config"] = "mfcc13+pitch2+d+dd/cmvn:" + _stats_digest(stats)
    net.save_model(model, path)
    write_archive(_stats_path(path), stats.to_matrix())


def _load(path) -> tuple[net.MlpModel, NormalizationStats, ContextWindowSpec]:
    model = net.load_model(path)
    stats = NormalizationStats.from_matrix(read_archive(_stats_path(path)))
    want = model.meta.get("feature_config", "").rpartition(":")[2]
    if want and want != _stats_digest(stats):
        raise SystemExit(f"{path}: normalisation statistics do not match the model")
    return model, stats, ContextWindowSpec.parse(model.meta["window"])


def _sweep(args) -> SweepSpec:
    return SweepSpec(args.f_start, args.f_end, args.duration, args.amplitude)


# ---------------------------------------------------------------------------
# commands


def cmd_ess_generate(args):
    spec = _sweep(args)
    write_wav(generate_ess(spec), args.out)
    if args.inverse:
        write_wav(inverse_filter(spec), args.inverse)


def cmd_ir_estimate(args):
    ir = estimate_ir(read_wav(args.recording), _sweep(args), args.length)
    save_ir(ir, args.out)


def cmd_ir_synth(args):
    length = args.length or int(round(1.2 * args.t60 * 16000))
    save_ir(synth_ir(args.t60, length, direct_delay=args.direct_delay, seed=args.seed, drr_db=args.drr), args.out)


def cmd_t60(args):
    ana = estimate_t60(load_ir(args.ir))
    print(f"{ana.t60:.4f}")


def cmd_contaminate(args):
    ir = load_ir(args.ir)
    noise = read_wav(args.noise) if args.noise else None
    spec = ContaminationSpec(ir, noise, args.snr, noise_offset_seed=args.seed, snr_jitter_db=args.snr_jitter)
    contaminate_corpus(load_manifest(args.manifest), spec, args.out)


def cmd_feats(args):
    manifest = load_manifest(args.manifest)
    window = _window(args)
    feats = _base(manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.stats:
        stats = NormalizationStats.from_matrix(read_archive(args.stats))
    else:
        stats = _fit_stats(feats, window)
        write_archive(out / "stats.rvk", stats.to_matrix())
    write_indexed_archive(out / "feats.rvk", list(zip(manifest.ids(), _inputs(feats, window, stats))))


def cmd_align_train(args):
    phones = _phones(args)
    manifest = _manifest(args.manifest, phones)
    corpus = [(r.utterance_id, phones.encode(r.transcript), f) for r, f in zip(manifest, _base(manifest))]
    model, hist = em_train(flat_start(corpus, phones.n_states), corpus, args.iterations,
                           bench.mixup_schedule(args.iterations, args.mixtures))
    for i, ll in enumerate(hist):
        log.info("iteration %d: log-likelihood %.2f", i, ll)
    model.save(args.out)


def cmd_align(args):
    phones = _phones(args)
    manifest = _manifest(args.manifest, phones)
    corpus = [(r.utterance_id, phones.encode(r.transcript), f) for r, f in zip(manifest, _base(manifest))]
    alis = align_corpus(GmmAcousticModel.load(args.model), corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_indexed_archive(out / "ali.rvk", [(a.utterance_id, a.states.astype(np.uint32)) for a in alis])


def cmd_train(args):
    phones = _phones(args)
    window = _window(args)
    train_set, stats = _dataset(args.manifest, args.ali, phones, window)
    dev_set, _ = _dataset(args.dev_manifest, args.dev_ali, phones, window, stats)
    if args.init:
        init, _, _ = _load(args.init)
    else:
        layout = [train_set[0].shape[1]] + [args.hidden_units] * args.hidden_layers + [phones.n_states]
        init = net.init_random(layout, args.seed)
    model, hist = net.train(init, train_set, dev_set, _schedule(args))
    print(f"epochs_to_converge\t{hist.epochs_to_converge}\nbest_dev_accuracy\t{hist.best_dev_accuracy:.2f}")
    _save(model, stats, window, args.out)


def cmd_pretrain_rbm(args):
    phones = _phones(args)
    window = _window(args)
    manifest = _manifest(args.manifest, phones)
    feats = _base(manifest)
    stats = _fit_stats(feats, window)
    x = np.concatenate(_inputs(feats, window, stats))
    layout = [x.shape[1]] + [args.hidden_units] * args.hidden_layers + [phones.n_states]
    model = net.rbm_pretrain(x, layout, args.epochs, args.lr_gb, args.lr_bb, args.seed, args.batch_size)
    _save(model, stats, window, args.out)


def cmd_pretrain_ct(args):
    phones = _phones(args)
    ct_model, _, window = _load(args.ct_model)
    train_set, stats = _dataset(args.manifest, args.ali, phones, window)
    dev_set, _ = _dataset(args.dev_manifest, args.dev_ali, phones, window, stats)
    model, hist = net.ct_pretrain_transfer(ct_model, train_set, dev_set, _schedule(args), args.lr,
                                           phones.n_states)
    print(f"epochs_to_converge\t{hist.epochs_to_converge}\nbest_dev_accuracy\t{hist.best_dev_accuracy:.2f}")
    _save(model, stats, window, args.out)


def cmd_frame_acc(args):
    phones = _phones(args)
    model, stats, window = _load(args.model)
    (x, y), _ = _dataset(args.manifest, args.ali, phones, window, stats)
    print(f"{net.frame_accuracy(model, x, y):.2f}")


def cmd_decode(args):
    phones = _phones(args)
    model, stats, window = _load(args.model)
    if model.log_priors is None:
        raise SystemExit(f"{args.model}: model has no class priors")
    manifest = _manifest(args.manifest, phones)
    graph = PhoneLoopGraph(len(phones), insertion_penalty=args.ins_penalty)
    lines = []
    for rec, x in zip(manifest, _inputs(_base(manifest), window, stats)):
        ll = posteriors_to_loglik(net.log_posteriors(model, x), model.log_priors, args.scale, log_domain=True)
        lines.append(rec.utterance_id + "\t" + " ".join(phones.symbols[p] for p in phone_loop_decode(ll, graph)))
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_score(args):
    refs = {r.utterance_id: r.transcript for r in load_manifest(args.ref)}
    hyps = {}
    for line in Path(args.hyp).read_text(encoding="utf-8").splitlines():
        if line.strip():
            uid, _, rest = line.partition("\t")
            hyps[uid] = rest.split()
    report = score_corpus(refs, hyps, ignore=args.ignore)
    text = report.to_tsv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_synth_corpus(args):
    phones = PhoneSet.synthetic(args.n_phones)
    spec = bench.SyntheticCorpusSpec(n_phones=args.n_phones, n_utterances=args.n_utterances, seed=args.seed)
    out = Path(args.out)
    bench.write_corpus(bench.synth_corpus(spec, phones), out)
    (out / "phones.txt").write_text("\n".join(phones.symbols) + "\n", encoding="utf-8")


def cmd_experiment(args):
    cfg = bench.load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with threadpool_limits(limits=args.threads):
        results = bench.run_experiment(cfg)
    bench.emit_report(results, "tsv", out / "report.tsv")
    bench.emit_report(results, "markdown", out / "report.md")
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")


# ---------------------------------------------------------------------------
# parser


def _sweep_args(p):
    p.add_argument("--f-start", type=float, default=20.0)
    p.add_argument("--f-end", type=float, default=7900.0)
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--amplitude", type=float, default=1.0)


def _phones_arg(p):
    p.add_argument("--phones", help="phone list, one symbol per line (default: sil p0..p9)")


def _window_args(p):
    p.add_argument("--past", type=int, default=8)
    p.add_argument("--future", type=int, default=8)


def _train_args(p, lr):
    p.add_argument("--manifest", required=True)
    p.add_argument("--ali", required=True)
    p.add_argument("--dev-manifest", required=True)
    p.add_argument("--dev-ali", required=True)
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--max-epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _phones_arg(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="revkit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ess-generate", help="write an exponential sine sweep")
    _sweep_args(p)
    p.add_argument("--inverse", help="also write the inverse filter here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ess_generate)

    p = sub.add_parser("ir-estimate", help="impulse response from a recorded sweep")
    _sweep_args(p)
    p.add_argument("--recording", required=True)
    p.add_argument("--length", type=int, required=True, help="taps to keep")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ir_estimate)

    p = sub.add_parser("ir-synth", help="synthetic exponentially decaying impulse response")
    p.add_argument("--t60", type=float, required=True)
    p.add_argument("--length", type=int, help="taps (default 1.2 * T60 seconds)")
    p.add_argument("--direct-delay", type=int, default=0)
    p.add_argument("--drr", type=float, default=0.0, help="direct-to-reverberant ratio in dB")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ir_synth)

    p = sub.add_parser("t60", help="reverberation time of an impulse response")
    p.add_argument("ir")
    p.set_defaults(func=cmd_t60)

    p = sub.add_parser("contaminate", help="reverberate (and add noise to) a corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ir", required=True)
    p.add_argument("--noise")
    p.add_argument("--snr", type=float, default=10.0)
    p.add_argument("--snr-jitter", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_contaminate)

    p = sub.add_parser("feats", help="spliced, normalised features")
    p.add_argument("--manifest", required=True)
    _window_args(p)
    p.add_argument("--stats", help="existing normalisation archive (default: fit on this manifest)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_feats)

    p = sub.add_parser("align-train", help="train the monophone GMM aligner")
    p.add_argument("--manifest", required=True)
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--mixtures", type=int, default=4)
    p.add_argument("--out", required=True)
    _phones_arg(p)
    p.set_defaults(func=cmd_align_train)

    p = sub.add_parser("align", help="forced alignment")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _phones_arg(p)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("train", help="train the MLP acoustic model")
    _train_args(p, 0.008)
    _window_args(p)
    p.add_argument("--hidden-layers", type=int, default=4)
    p.add_argument("--hidden-units", type=int, default=300)
    p.add_argument("--init", help="start from this model instead of a random one")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("pretrain-rbm", help="RBM-initialised network")
    p.add_argument("--manifest", required=True)
    _window_args(p)
    p.add_argument("--hidden-layers", type=int, default=4)
    p.add_argument("--hidden-units", type=int, default=300)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--lr-gb", type=float, default=0.001)
    p.add_argument("--lr-bb", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _phones_arg(p)
    p.set_defaults(func=cmd_pretrain_rbm)

    p = sub.add_parser("pretrain-ct", help="fine-tune a close-talk model on distant data")
    p.add_argument("--ct-model", required=True)
    _train_args(p, 0.005)
    p.set_defaults(func=cmd_pretrain_ct)

    p = sub.add_parser("frame-acc", help="frame accuracy against alignments")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--ali", required=True)
    _phones_arg(p)
    p.set_defaults(func=cmd_frame_acc)

    p = sub.add_parser("decode", help="phone-loop decoding")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--ins-penalty", type=float, default=0.0)
    p.add_argument("--out", required=True)
    _phones_arg(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("score", help="phone error rate")
    p.add_argument("--ref", required=True, help="reference manifest")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ignore", nargs="*", default=["sil"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("synth-corpus", help="synthetic corpus with oracle labels")
    p.add_argument("--n-utterances", type=int, default=400)
    p.add_argument("--n-phones", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_corpus)

    p = sub.add_parser("experiment", help="run an experiment from a key=value config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"revkit {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
