"""Synthetic corpora and end-to-end experiment drivers.

Each seed builds its own phone inventory, train/dev/test utterances, room
responses and (for rev_noise) pink noise, so seeds are independent
replications.  Arms within one experiment share everything except the
variable under study.
"""
from __future__ import annotations

import logging
import statistics
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import acoustic_net as net
from .align_gmm import PhoneSet, align_corpus, em_train, flat_start, transfer_alignment
from .contamination import ContaminationSpec, contaminate, pink_noise
from .decode_eval import PhoneLoopGraph, phone_loop_decode, posteriors_to_loglik, score_corpus
from .frontend import ContextWindowSpec, FrameSpec, StatsAccumulator, apply_normalizer, base_features, splice
from .ir_lab import synth_ir
from .signal_io import Manifest, Record, Waveform, write_archive, write_manifest, write_wav

log = logging.getLogger(__name__)

TABLE2_WINDOWS = ("P16-F0", "P10-F6", "P8-F8", "P6-F10", "P0-F16")
REPORT_COLUMNS = ("condition", "window", "supervision", "pretraining", "seed", "PER%", "frame_acc%", "epochs")


# ---------------------------------------------------------------------------
# Synthetic corpus


@dataclass(frozen=True)
class PhoneRecipe:
    freqs: tuple[float, float]
    amps: tuple[float, float]
    noise_level: float


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    n_phones: int = 10
    n_utterances: int = 400
    phones_per_utterance: tuple[int, int] = (5, 15)
    duration_range: tuple[float, float] = (0.060, 0.200)
    silence_range: tuple[float, float] = (0.100, 0.200)
    envelope: float = 0.010
    formant_range: tuple[float, float] = (200.0, 4000.0)
    noise_range: tuple[float, float] = (0.01, 0.1)
    freq_jitter: float = 0.03
    seed: int = 0
    inventory_seed: int | None = None
    sample_rate: int = 16000
    prefix: str = "utt"

    def __post_init__(self):
        if self.formant_range[1] >= self.sample_rate / 2:
            raise ValueError("formant frequencies must stay below Nyquist")
        if min(self.duration_range[0], self.silence_range[0]) < 0.030:
            raise ValueError("segments must span at least 3 frames")


@dataclass
class Utterance:
    utterance_id: str
    wave: Waveform
    transcript: tuple[str, ...]
    phone_ids: list[int]
    labels: np.ndarray  # oracle per-frame state ids
    boundaries: np.ndarray  # sample index where each segment starts, plus the end


def make_inventory(spec: SyntheticCorpusSpec) -> list[PhoneRecipe]:
    seed = spec.seed if spec.inventory_seed is None else spec.inventory_seed
    rng = np.random.default_rng([seed, 7])
    lo, hi = np.log(spec.formant_range[0]), np.log(spec.formant_range[1])
    recipes = []
    for _ in range(spec.n_phones):
        f = np.sort(np.exp(rng.uniform(lo, hi, size=2)))
        a = rng.uniform(0.1, 0.3, size=2)
        recipes.append(PhoneRecipe((float(f[0]), float(f[1])), (float(a[0]), float(a[1])),
                                   float(rng.uniform(*spec.noise_range))))
    return recipes


def _envelope(n: int, ramp: int) -> np.ndarray:
    env = np.ones(n)
    ramp = min(ramp, n // 2)
    if ramp:
        r = 0.5 - 0.5 * np.cos(np.pi * (np.arange(ramp) + 0.5) / ramp)
        env[:ramp] = r
        env[n - ramp :] = r[::-1]
    return env


def oracle_labels(boundaries: np.ndarray, phone_ids: Sequence[int], n_samples: int,
                  frame_spec: FrameSpec = FrameSpec(), sample_rate: int = 16000) -> np.ndarray:
    """Per-frame state ids: frame centres pick the segment, segments split into thirds."""
    n_frames = frame_spec.n_frames(n_samples, sample_rate)
    flen, hop = frame_spec.frame_samples(sample_rate), frame_spec.hop_samples(sample_rate)
    centres = hop * np.arange(n_frames) + flen // 2
    seg = np.searchsorted(boundaries, centres, side="right") - 1
    seg = np.clip(seg, 0, len(phone_ids) - 1)
    labels = np.empty(n_frames, dtype=np.int64)
    for k, p in enumerate(phone_ids):
        idx = np.flatnonzero(seg == k)
        if idx.size < 3:
            raise ValueError("segment shorter than 3 frames")
        pos = np.minimum(3 * np.arange(idx.size) // idx.size, 2)
        labels[idx] = 3 * p + pos
    return labels


def synth_corpus(spec: SyntheticCorpusSpec, phones: PhoneSet | None = None) -> list[Utterance]:
    phones = phones or PhoneSet.synthetic(spec.n_phones)
    inventory = make_inventory(spec)
    sil = phones.index(phones.silence)
    speech = [phones.index(f"p{i}") for i in range(spec.n_phones)]
    rng = np.random.default_rng([spec.seed, 11])
    sr = spec.sample_rate
    ramp = int(round(spec.envelope * sr))
    out = []
    for u in range(spec.n_utterances):
        n_ph = int(rng.integers(spec.phones_per_utterance[0], spec.phones_per_utterance[1] + 1))
        seq = [sil] + [speech[int(k)] for k in rng.integers(spec.n_phones, size=n_ph)] + [sil]
        pieces, starts, pos = [], [], 0
        for k, p in enumerate(seq):
            rng_dur = spec.silence_range if p == sil else spec.duration_range
            n = int(round(rng.uniform(*rng_dur) * sr))
            t = np.arange(n) / sr
            if p == sil:
                x = 0.003 * rng.standard_normal(n)
            else:
                rec = inventory[speech.index(p)]
                x = rec.noise_level * rng.standard_normal(n)
                for f, a in zip(rec.freqs, rec.amps):
                    f = f * (1.0 + rng.uniform(-spec.freq_jitter, spec.freq_jitter))
                    x += a * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
                x *= _envelope(n, ramp)
            pieces.append(x)
            starts.append(pos)
            pos += n
        bounds = np.array(starts + [pos])
        wave = Waveform(np.concatenate(pieces), sr)
        labels = oracle_labels(bounds, seq, len(wave), sample_rate=sr)
        out.append(Utterance(f"{spec.prefix}{spec.seed:03d}_{u:04d}", wave,
                             tuple(phones.symbols[p] for p in seq), seq, labels, bounds))
    return out


def write_corpus(utts: Sequence[Utterance], out_dir, condition: str = "clean") -> Manifest:
    """Write WAVs, oracle label archives and a manifest under ``out_dir``."""
    out_dir = Path(out_dir)
    records = []
    for u in utts:
        wav = Path("wav") / f"{u.utterance_id}.wav"
        lab = Path("labels") / f"{u.utterance_id}.rvk"
        write_wav(u.wave, out_dir / wav, "float32")
        (out_dir / lab).parent.mkdir(parents=True, exist_ok=True)
        write_archive(out_dir / lab, u.labels.astype(np.uint32))
        records.append(Record(u.utterance_id, str(wav), u.transcript, condition, str(lab)))
    manifest = Manifest(records, root=out_dir)
    write_manifest(manifest, out_dir / "manifest.tsv")
    return manifest


# ---------------------------------------------------------------------------
# Experiment configuration


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "window_sweep"
    condition: str = "rev"
    windows: tuple[str, ...] = TABLE2_WINDOWS
    window: str = "P10-F6"
    supervision: str = "standard"
    pretraining: str = "none"
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    t60: float = 0.7
    drr_db: float = 0.0
    snr_db: float = 10.0
    n_phones: int = 10
    n_train: int = 400
    n_dev: int = 50
    n_test: int = 100
    hidden_layers: int = 4
    hidden_units: int = 300
    initial_lr: float = 0.008
    fine_tune_lr: float = 0.005
    max_epochs: int = 20
    batch_size: int = 64
    gmm_iterations: int = 10
    gmm_mixtures: int = 4
    rbm_epochs: int = 1
    acoustic_scale: float = 1.0
    insertion_penalty: float = 0.0

    def __post_init__(self):
        if self.experiment not in ("window_sweep", "supervision", "pretraining"):
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.condition not in ("clean", "rev", "rev_noise"):
            raise ValueError(f"unknown condition {self.condition!r}")
        if self.supervision not in ("standard", "ct_lab"):
            raise ValueError(f"unknown supervision {self.supervision!r}")
        if self.pretraining not in ("none", "rbm", "ct"):
            raise ValueError(f"unknown pretraining {self.pretraining!r}")
        if self.condition == "clean" and (self.supervision == "ct_lab" or self.pretraining == "ct"):
            raise ValueError("close-talk supervision or pre-training needs a contaminated condition")
        for w in self.windows + (self.window,):
            ContextWindowSpec.parse(w)

    def schedule(self, seed: int, initial_lr: float | None = None) -> net.TrainSchedule:
        return net.TrainSchedule(initial_lr=initial_lr or self.initial_lr, max_epochs=self.max_epochs,
                                 batch_size=self.batch_size, seed=seed)

    def layout(self, window: ContextWindowSpec, n_classes: int) -> list[int]:
        return [45 * window.length] + [self.hidden_units] * self.hidden_layers + [n_classes]

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name}={','.join(map(str, v)) if isinstance(v, tuple) else v}")
        return "\n".join(lines) + "\n"


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Flat ``key=value`` lines; ``#`` starts a comment; lists are comma-separated."""
    base = base or ExperimentConfig()
    types = {f.name: type(getattr(base, f.name)) for f in fields(base)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        kind = types[key]
        if kind is tuple:
            items = [v.strip() for v in val.split(",") if v.strip()]
            values[key] = tuple(int(v) for v in items) if key == "seeds" else tuple(items)
        elif kind is bool:
            values[key] = val.lower() in ("1", "true", "yes")
        else:
            values[key] = kind(val)
    return replace(base, **values)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Per-seed data


@dataclass
class Split:
    utts: list[Utterance]
    clean_feats: list[np.ndarray]
    distant_feats: list[np.ndarray]

    @property
    def oracle(self) -> list[np.ndarray]:
        return [u.labels for u in self.utts]

    def corpus(self, distant: bool):
        feats = self.distant_feats if distant else self.clean_feats
        return [(u.utterance_id, u.phone_ids, f) for u, f in zip(self.utts, feats)]


@dataclass
class SeedData:
    seed: int
    config: ExperimentConfig
    phones: PhoneSet
    train: Split
    dev: Split
    test: Split
    _labels: dict = field(default_factory=dict)
    _inputs: dict = field(default_factory=dict)

    @property
    def n_states(self) -> int:
        return self.phones.n_states

    def labels(self, supervision: str) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Train/dev frame labels for the distant features under a supervision source."""
        if supervision not in self._labels:
            self._labels[supervision] = make_labels(self, supervision)
        return self._labels[supervision]

    def inputs(self, window: ContextWindowSpec, distant: bool = True):
        """Spliced, normalised (train, dev, test) matrices; stats fit on train."""
        key = (window, distant)
        if key not in self._inputs:
            self._inputs[key] = spliced_inputs(self, window, distant)
        return self._inputs[key]


def prepare_seed(cfg: ExperimentConfig, seed: int) -> SeedData:
    phones = PhoneSet.synthetic(cfg.n_phones)
    sr = 16000
    splits = {}
    ir_len = int(round(1.2 * cfg.t60 * sr))
    for k, (name, n) in enumerate((("train", cfg.n_train), ("dev", cfg.n_dev), ("test", cfg.n_test))):
        spec = SyntheticCorpusSpec(n_phones=cfg.n_phones, n_utterances=n, seed=seed * 10 + k,
                                   inventory_seed=seed, prefix=f"{name}")
        utts = synth_corpus(spec, phones)
        clean = [base_features(u.wave) for u in utts]
        if cfg.condition == "clean":
            distant = clean
        else:
            # one room response per split, as with separate train/dev/test positions
            ir = synth_ir(cfg.t60, ir_len, sr, direct_delay=0, seed=1000 * seed + k, drr_db=cfg.drr_db)
            noise = pink_noise(10 * sr, seed=2000 * seed + k) if cfg.condition == "rev_noise" else None
            cspec = ContaminationSpec(ir, noise, cfg.snr_db, noise_offset_seed=3000 * seed + k)
            distant = [base_features(contaminate(u.wave, cspec, u.utterance_id)[0]) for u in utts]
        splits[name] = Split(utts, clean, distant)
    return SeedData(seed, cfg, phones, splits["train"], splits["dev"], splits["test"])


def mixup_schedule(iterations: int, mixtures: int) -> dict[int, int]:
    """Double the mixture size every second iteration from iteration 2 up to ``mixtures``."""
    sched, m, it = {}, 1, 2
    while m < mixtures and it < iterations:
        m = min(2 * m, mixtures)
        sched[it] = m
        it += 2
    return sched


def train_gmm(data: SeedData, distant: bool):
    corpus = data.train.corpus(distant)
    model, _ = em_train(flat_start(corpus, data.n_states), corpus, data.config.gmm_iterations,
                         mixup_schedule(data.config.gmm_iterations, data.config.gmm_mixtures))
    return model


def make_labels(data: SeedData, supervision: str):
    """standard: aligner trained and run on the distant audio;
    ct_lab: aligner trained and run on the close-talk audio, labels inherited."""
    if supervision == "oracle":
        return data.train.oracle, data.dev.oracle
    distant = supervision == "standard" and data.config.condition != "clean"
    gmm = train_gmm(data, distant)
    out = []
    for split in (data.train, data.dev):
        alis = align_corpus(gmm, split.corpus(distant))
        if not distant:
            alis = [transfer_alignment(a, len(f)) for a, f in zip(alis, split.distant_feats)]
        out.append([a.states for a in alis])
    return out[0], out[1]


def spliced_inputs(data: SeedData, window: ContextWindowSpec, distant: bool):
    def feats(split):
        return split.distant_feats if distant else split.clean_feats

    acc = StatsAccumulator()
    for f in feats(data.train):
        acc.add(splice(f, window))
    stats = acc.finalize()
    out = []
    for split in (data.train, data.dev, data.test):
        out.append([apply_normalizer(splice(f, window), stats, np.float32) for f in feats(split)])
    return out


# ---------------------------------------------------------------------------
# Arms


@dataclass
class ArmResult:
    condition: str
    window: str
    supervision: str
    pretraining: str
    seed: int
    per: float
    frame_acc: float
    epochs: int
    history: net.TrainHistory | None = None
    model: net.MlpModel | None = None

    def row(self) -> dict:
        return {"condition": self.condition, "window": self.window, "supervision": self.supervision,
                "pretraining": self.pretraining, "seed": self.seed, "PER%": self.per,
                "frame_acc%": self.frame_acc, "epochs": self.epochs}


def evaluate(model: net.MlpModel, data: SeedData, test_inputs: list[np.ndarray], cfg: ExperimentConfig):
    """Test frame accuracy against oracle labels, and phone-loop PER (silence ignored)."""
    x = np.concatenate(test_inputs)
    acc = net.frame_accuracy(model, x, np.concatenate(data.test.oracle))
    graph = PhoneLoopGraph(len(data.phones), insertion_penalty=cfg.insertion_penalty)
    hyps, refs = {}, {}
    for u, xi in zip(data.test.utts, test_inputs):
        ll = posteriors_to_loglik(net.log_posteriors(model, xi), model.log_priors, cfg.acoustic_scale,
                                  log_domain=True)
        hyps[u.utterance_id] = [data.phones.symbols[p] for p in phone_loop_decode(ll, graph)]
        refs[u.utterance_id] = u.transcript
    report = score_corpus(refs, hyps, ignore=(data.phones.silence,))
    return report.per, acc


def run_arm(data: SeedData, window: ContextWindowSpec, supervision: str, pretraining: str,
            ct_model: net.MlpModel | None = None) -> ArmResult:
    cfg = data.config
    tr_x, dv_x, te_x = data.inputs(window)
    tr_y, dv_y = data.labels(supervision)
    train_set = (np.concatenate(tr_x), np.concatenate(tr_y))
    dev_set = (np.concatenate(dv_x), np.concatenate(dv_y))
    layout = cfg.layout(window, data.n_states)
    if pretraining == "none":
        model, hist = net.train(net.init_random(layout, data.seed), train_set, dev_set, cfg.schedule(data.seed))
    elif pretraining == "rbm":
        init = net.rbm_pretrain(train_set[0], layout, cfg.rbm_epochs, seed=data.seed, batch_size=cfg.batch_size)
        model, hist = net.train(init, train_set, dev_set, cfg.schedule(data.seed, cfg.fine_tune_lr))
    elif pretraining == "ct":
        if ct_model is None:
            ct_model = train_close_talk(data, window)
        model, hist = net.ct_pretrain_transfer(ct_model, train_set, dev_set, cfg.schedule(data.seed),
                                               cfg.fine_tune_lr, data.n_states)
    else:
        raise ValueError(pretraining)
    per_, acc = evaluate(model, data, te_x, cfg)
    log.info("seed %d %s %s %s %s: PER %.1f acc %.2f epochs %d", data.seed, cfg.condition, window.name,
             supervision, pretraining, per_, acc, hist.epochs_to_converge)
    return ArmResult(cfg.condition, window.name, supervision, pretraining, data.seed, per_, acc,
                     hist.epochs_to_converge, hist, model)


def train_close_talk(data: SeedData, window: ContextWindowSpec) -> net.MlpModel:
    """Random-init network trained on close-talk features with close-talk alignments."""
    cfg = data.config
    tr_x, dv_x, _ = data.inputs(window, distant=False)
    tr_y, dv_y = data.labels("ct_lab")
    layout = cfg.layout(window, data.n_states)
    model, _ = net.train(net.init_random(layout, data.seed), (np.concatenate(tr_x), np.concatenate(tr_y)),
                         (np.concatenate(dv_x), np.concatenate(dv_y)), cfg.schedule(data.seed))
    return model


def run_window_sweep(cfg: ExperimentConfig, windows: Sequence[str] | None = None) -> list[ArmResult]:
    windows = [ContextWindowSpec.parse(w) for w in (windows or cfg.windows)]
    results = []
    for seed in cfg.seeds:
        data = prepare_seed(cfg, seed)
        for w in windows:
            results.append(run_arm(data, w, cfg.supervision, cfg.pretraining))
    return results


def run_supervision_experiment(cfg: ExperimentConfig) -> list[ArmResult]:
    if cfg.condition == "clean":
        raise ValueError("supervision experiment needs a contaminated condition")
    window = ContextWindowSpec.parse(cfg.window)
    results = []
    for seed in cfg.seeds:
        data = prepare_seed(cfg, seed)
        for sup in ("standard", "ct_lab"):
            results.append(run_arm(data, window, sup, cfg.pretraining if cfg.pretraining != "ct" else "none"))
    return results


def run_pretraining_experiment(cfg: ExperimentConfig) -> list[ArmResult]:
    if cfg.condition == "clean":
        raise ValueError("pre-training experiment needs a contaminated condition")
    window = ContextWindowSpec.parse(cfg.window)
    results = []
    for seed in cfg.seeds:
        data = prepare_seed(cfg, seed)
        for pre in ("rbm", "ct"):
            results.append(run_arm(data, window, "ct_lab", pre))
    return results


def run_experiment(cfg: ExperimentConfig) -> list[ArmResult]:
    if cfg.experiment == "window_sweep":
        return run_window_sweep(cfg)
    if cfg.experiment == "supervision":
        return run_supervision_experiment(cfg)
    return run_pretraining_experiment(cfg)


# ---------------------------------------------------------------------------
# Reports


def _fmt(col: str, v) -> str:
    if col == "PER%":
        return f"{v:.1f}"
    if col == "frame_acc%":
        return f"{v:.2f}"
    return str(v)


def _mean_std(vals: Sequence[float], digits: int) -> str:
    sd = statistics.stdev(vals) if len(vals) > 1 else 0.0
    return f"{statistics.fmean(vals):.{digits}f}±{sd:.{digits}f}"


def report_rows(results: Sequence[ArmResult]) -> list[list[str]]:
    if not results:
        raise ValueError("no results to report")
    rows = [[_fmt(c, r.row()[c]) for c in REPORT_COLUMNS] for r in results]
    groups: dict[tuple, list[ArmResult]] = {}
    for r in results:
        groups.setdefault((r.condition, r.window, r.supervision, r.pretraining), []).append(r)
    for key, rs in groups.items():
        rows.append(list(key) + ["mean±std", _mean_std([r.per for r in rs], 1),
                                 _mean_std([r.frame_acc for r in rs], 2),
                                 _mean_std([float(r.epochs) for r in rs], 1)])
    return rows


def emit_report(results: Sequence[ArmResult], fmt: str = "tsv", path=None) -> str:
    rows = report_rows(results)
    if fmt == "tsv":
        text = "\n".join("\t".join(r) for r in [list(REPORT_COLUMNS)] + rows) + "\n"
    elif fmt == "markdown":
        lines = ["| " + " | ".join(REPORT_COLUMNS) + " |", "|" + "---|" * len(REPORT_COLUMNS)]
        lines += ["| " + " | ".join(r) + " |" for r in rows]
        text = "\n".join(lines) + "\n"
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def parse_markdown_report(text: str) -> list[list[str]]:
    rows = []
    for line in text.strip().splitlines()[2:]:
        rows.append([c.strip() for c in line.strip().strip("|").split("|")])
    return rows


def seed_wins(results: Sequence[ArmResult], arm_a: dict, arm_b: dict, metric: str = "frame_acc") -> tuple[int, int, int]:
    """(#seeds where a > b, #seeds where b > a, #ties) on ``metric``."""
    def pick(spec):
        return {r.seed: getattr(r, metric) for r in results if all(getattr(r, k) == v for k, v in spec.items())}

    a, b = pick(arm_a), pick(arm_b)
    seeds = sorted(set(a) & set(b))
    wins_a = sum(a[s] > b[s] for s in seeds)
    wins_b = sum(b[s] > a[s] for s in seeds)
    return wins_a, wins_b, len(seeds) - wins_a - wins_b
