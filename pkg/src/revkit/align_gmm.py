"""Monophone 3-state left-to-right GMM-HMM aligner.

Flat start, hard-assignment (Viterbi) EM and forced alignment.  State ids are
``phone_index * 3 + position``.  Models are trained on unspliced 45-dim
features.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

log = logging.getLogger(__name__)

STATES_PER_PHONE = 3
VAR_FLOOR = 1e-4
WEIGHT_FLOOR = 1e-5
TRANS_CLAMP = (0.01, 0.99)
MAX_TRANSFER_GAP = 5


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class PhoneSet:
    symbols: tuple[str, ...]
    silence: str = "sil"

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("phone symbols must be unique")
        if self.silence not in self.symbols:
            raise ValueError(f"silence symbol {self.silence!r} missing from phone set")

    @classmethod
    def synthetic(cls, n_phones: int, silence: str = "sil") -> "PhoneSet":
        return cls((silence,) + tuple(f"p{i}" for i in range(n_phones)), silence)

    @classmethod
    def from_file(cls, path, silence: str = "sil") -> "PhoneSet":
        syms = Path(path).read_text(encoding="utf-8").split()
        return cls(tuple(syms), silence)

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, sym) -> bool:
        return sym in self.symbols

    def index(self, sym: str) -> int:
        try:
            return self.symbols.index(sym)
        except ValueError:
            raise KeyError(f"unknown phone {sym!r}") from None

    def encode(self, transcript: Sequence[str]) -> list[int]:
        return [self.index(s) for s in transcript]

    @property
    def n_states(self) -> int:
        return STATES_PER_PHONE * len(self.symbols)


@dataclass(frozen=True)
class HmmTopology:
    states_per_phone: int = STATES_PER_PHONE
    self_loop: float = 0.5

    def __post_init__(self):
        if self.states_per_phone != STATES_PER_PHONE:
            raise ValueError("only 3-state phone models are supported")
        if not 0 < self.self_loop < 1:
            raise ValueError("self-loop probability must lie in (0, 1)")


def expand(phone_ids: Sequence[int]) -> np.ndarray:
    """State sequence of the left-to-right expansion of a phone string."""
    p = np.asarray(phone_ids, dtype=np.int64)
    return (STATES_PER_PHONE * p[:, None] + np.arange(STATES_PER_PHONE)[None, :]).ravel()


@dataclass(frozen=True)
class Alignment:
    utterance_id: str
    states: np.ndarray
    score: float = float("nan")
    adjusted: int = 0

    @property
    def n_frames(self) -> int:
        return int(self.states.shape[0])

    def phones(self) -> np.ndarray:
        return self.states // STATES_PER_PHONE


def is_legal_path(states: np.ndarray, phone_ids: Sequence[int]) -> bool:
    """True if ``states`` walks the transcript's expansion start to end without skips."""
    seq = expand(phone_ids)
    states = np.asarray(states)
    if states.size < seq.size:
        return False
    pos = 0
    if states[0] != seq[0]:
        return False
    for s in states[1:]:
        if s == seq[pos]:
            continue
        if pos + 1 < seq.size and s == seq[pos + 1]:
            pos += 1
            continue
        return False
    return pos == seq.size - 1


@dataclass
class GmmAcousticModel:
    weights: np.ndarray  # (S, m)
    means: np.ndarray  # (S, m, D)
    variances: np.ndarray  # (S, m, D)
    log_self: np.ndarray  # (S,)
    log_fwd: np.ndarray  # (S,)

    @property
    def n_states(self) -> int:
        return self.weights.shape[0]

    @property
    def n_mix(self) -> int:
        return self.weights.shape[1]

    @property
    def dim(self) -> int:
        return self.means.shape[2]

    def copy(self) -> "GmmAcousticModel":
        return GmmAcousticModel(*(a.copy() for a in (self.weights, self.means, self.variances,
                                                      self.log_self, self.log_fwd)))

    def component_loglik(self, x: np.ndarray) -> np.ndarray:
        """log(w_k N(x; mu_k, var_k)) for every frame, state and component, (T, S, m)."""
        x = np.asarray(x, dtype=np.float64)
        inv = 1.0 / self.variances
        s, m, d = self.means.shape
        inv2 = inv.reshape(s * m, d)
        mu2 = (self.means * inv).reshape(s * m, d)
        const = -0.5 * (d * np.log(2 * np.pi) + np.log(self.variances).sum(-1)
                        + (self.means**2 * inv).sum(-1))
        quad = -0.5 * (x**2) @ inv2.T + x @ mu2.T
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return quad.reshape(len(x), s, m) + (const + logw)[None]

    def state_loglik(self, x: np.ndarray) -> np.ndarray:
        return logsumexp(self.component_loglik(x), axis=2)

    def save(self, path) -> None:
        np.savez(path, weights=self.weights, means=self.means, variances=self.variances,
                 log_self=self.log_self, log_fwd=self.log_fwd)

    @classmethod
    def load(cls, path) -> "GmmAcousticModel":
        with np.load(path) as z:
            return cls(z["weights"], z["means"], z["variances"], z["log_self"], z["log_fwd"])


def viterbi_left_to_right(loglik: np.ndarray, log_self: np.ndarray, log_fwd: np.ndarray) -> tuple[np.ndarray, float]:
    """Best path through a strict left-to-right chain.

    ``loglik`` is (T, N) over the chain positions.  The path starts in
    position 0 and must end in position N-1.  Returns (positions, score).
    """
    t_len, n = loglik.shape
    if t_len < n:
        raise AlignmentError(f"utterance too short for transcript: {t_len} frames, {n} states")
    delta = np.full(n, -np.inf)
    delta[0] = loglik[0, 0]
    moved = np.zeros((t_len, n), dtype=bool)
    for t in range(1, t_len):
        stay = delta + log_self
        move = np.full(n, -np.inf)
        move[1:] = delta[:-1] + log_fwd[:-1]
        moved[t] = move > stay
        delta = np.where(moved[t], move, stay) + loglik[t]
    score = float(delta[-1])
    if not np.isfinite(score):
        raise AlignmentError("no complete path through the transcript")
    path = np.empty(t_len, dtype=np.int64)
    k = n - 1
    for t in range(t_len - 1, -1, -1):
        path[t] = k
        if t and moved[t, k]:
            k -= 1
    return path, score


def force_align(model: GmmAcousticModel, features: np.ndarray, phone_ids: Sequence[int],
                utterance_id: str = "") -> Alignment:
    seq = expand(phone_ids)
    if len(features) < seq.size:
        raise AlignmentError(
            f"{utterance_id or 'utterance'}: transcript too long ({seq.size} states) for {len(features)} frames"
        )
    ll = model.state_loglik(features)[:, seq]
    pos, score = viterbi_left_to_right(ll, model.log_self[seq], model.log_fwd[seq])
    return Alignment(utterance_id, seq[pos], score)


Corpus = Sequence[tuple[str, Sequence[int], np.ndarray]]


def _check_corpus(corpus: Corpus) -> None:
    if not corpus:
        raise AlignmentError("empty corpus")


def flat_start(corpus: Corpus, n_states: int, topology: HmmTopology = HmmTopology()) -> GmmAcousticModel:
    """Single-Gaussian model from a uniform split of each utterance over its states.

    ``corpus`` holds (utterance_id, phone_ids, features) triples.
    """
    _check_corpus(corpus)
    dim = corpus[0][2].shape[1]
    acc = np.zeros((n_states, dim))
    acc2 = np.zeros((n_states, dim))
    cnt = np.zeros(n_states)
    g_sum, g_sq, g_n = np.zeros(dim), np.zeros(dim), 0
    for uid, phones, x in corpus:
        seq = expand(phones)
        t_len = len(x)
        if t_len < seq.size:
            raise AlignmentError(f"{uid}: utterance too short for transcript")
        bounds = (np.arange(seq.size + 1) * t_len) // seq.size
        labels = np.repeat(seq, np.diff(bounds))
        np.add.at(acc, labels, x)
        np.add.at(acc2, labels, x**2)
        np.add.at(cnt, labels, 1)
        g_sum += x.sum(0)
        g_sq += (x**2).sum(0)
        g_n += t_len
    g_mean = g_sum / g_n
    g_var = np.maximum(g_sq / g_n - g_mean**2, VAR_FLOOR)
    means = np.tile(g_mean, (n_states, 1))
    variances = np.tile(g_var, (n_states, 1))
    seen = cnt > 0
    means[seen] = acc[seen] / cnt[seen, None]
    # single-frame states fall back to the global variance
    multi = cnt > 1
    variances[multi] = np.maximum(acc2[multi] / cnt[multi, None] - means[multi] ** 2, VAR_FLOOR)
    return GmmAcousticModel(
        weights=np.ones((n_states, 1)),
        means=means[:, None, :],
        variances=variances[:, None, :],
        log_self=np.full(n_states, np.log(topology.self_loop)),
        log_fwd=np.full(n_states, np.log1p(-topology.self_loop)),
    )


def split_components(model: GmmAcousticModel, target: int) -> GmmAcousticModel:
    """Grow every state's mixture to ``target`` by splitting the heaviest component.

    The two halves get means shifted by +/-0.1 standard deviations.
    """
    m = model.n_mix
    if target <= m:
        return model
    s, _, d = model.means.shape
    w = np.zeros((s, target))
    mu = np.zeros((s, target, d))
    var = np.zeros((s, target, d))
    w[:, :m], mu[:, :m], var[:, :m] = model.weights, model.means, model.variances
    for k in range(m, target):
        j = np.argmax(w[:, :k], axis=1)
        rows = np.arange(s)
        shift = 0.1 * np.sqrt(var[rows, j])
        w[rows, j] *= 0.5
        w[rows, k] = w[rows, j]
        var[rows, k] = var[rows, j]
        mu[rows, k] = mu[rows, j] - shift
        mu[rows, j] = mu[rows, j] + shift
    return GmmAcousticModel(w, mu, var, model.log_self.copy(), model.log_fwd.copy())


def _reestimate(model: GmmAcousticModel, frames_by_state: dict[int, list[np.ndarray]],
                n_self: np.ndarray, n_fwd: np.ndarray) -> GmmAcousticModel:
    new = model.copy()
    for s, chunks in frames_by_state.items():
        x = np.concatenate(chunks)
        # one EM step of the state's mixture on its hard-assigned frames
        comp = model.component_loglik(x)[:, s, :]
        resp = np.exp(comp - logsumexp(comp, axis=1, keepdims=True))
        occ = resp.sum(0)
        live = occ > 1e-8
        w = occ / occ.sum()
        w = np.maximum(w, WEIGHT_FLOOR)
        new.weights[s] = w / w.sum()
        mu = (resp.T @ x)[live] / occ[live, None]
        ex2 = (resp.T @ x**2)[live] / occ[live, None]
        new.means[s, live] = mu
        new.variances[s, live] = np.maximum(ex2 - mu**2, VAR_FLOOR)
    total = n_self + n_fwd
    seen = total > 0
    p = np.clip(n_self[seen] / total[seen], *TRANS_CLAMP)
    new.log_self[seen] = np.log(p)
    new.log_fwd[seen] = np.log1p(-p)
    return new


def align_corpus(model: GmmAcousticModel, corpus: Corpus) -> list[Alignment]:
    out = []
    for uid, phones, x in corpus:
        try:
            out.append(force_align(model, x, phones, uid))
        except AlignmentError as exc:
            raise AlignmentError(f"{uid}: {exc}") from exc
    return out


def em_train(model: GmmAcousticModel, corpus: Corpus, iterations: int = 10,
             mixup_schedule: dict[int, int] | None = None) -> tuple[GmmAcousticModel, list[float]]:
    """Viterbi EM.  Returns the model and the corpus log-likelihood per iteration.

    Iteration ``i`` (0-based) first grows the mixtures if ``mixup_schedule``
    has an entry for ``i``, then aligns everything (the recorded likelihood),
    then re-estimates Gaussians and transition probabilities.
    """
    _check_corpus(corpus)
    mixup_schedule = mixup_schedule or {}
    history = []
    for it in range(iterations):
        if it in mixup_schedule:
            model = split_components(model, mixup_schedule[it])
        frames_by_state: dict[int, list[np.ndarray]] = {}
        n_self = np.zeros(model.n_states)
        n_fwd = np.zeros(model.n_states)
        total = 0.0
        for ali, (uid, phones, x) in zip(align_corpus(model, corpus), corpus):
            total += ali.score
            st = ali.states
            same = st[1:] == st[:-1]
            np.add.at(n_self, st[:-1][same], 1)
            np.add.at(n_fwd, st[:-1][~same], 1)
            order = np.argsort(st, kind="stable")
            bounds = np.flatnonzero(np.diff(st[order])) + 1
            for grp in np.split(order, bounds):
                frames_by_state.setdefault(int(st[grp[0]]), []).append(x[grp])
        history.append(total)
        log.debug("em iteration %d: loglik %.3f (m=%d)", it, total, model.n_mix)
        model = _reestimate(model, frames_by_state, n_self, n_fwd)
    return model, history


def train_aligner(corpus: Corpus, n_states: int, iterations: int = 10,
                  mixup_schedule: dict[int, int] | None = None) -> GmmAcousticModel:
    model, _ = em_train(flat_start(corpus, n_states), corpus, iterations, mixup_schedule)
    return model


def transfer_alignment(clean: Alignment, distant_frame_count: int) -> Alignment:
    """Reuse a clean-audio alignment for the time-aligned contaminated copy."""
    gap = distant_frame_count - clean.n_frames
    if abs(gap) > MAX_TRANSFER_GAP:
        raise AlignmentError(
            f"time base mismatch for {clean.utterance_id}: {clean.n_frames} clean vs {distant_frame_count} distant frames"
        )
    if gap > 0:
        states = np.concatenate([clean.states, np.repeat(clean.states[-1:], gap)])
    else:
        states = clean.states[:distant_frame_count].copy()
    if gap:
        log.info("%s: alignment adjusted by %+d frames", clean.utterance_id, gap)
    return replace(clean, states=states, adjusted=gap)


def sample_from_model(model: GmmAcousticModel, phone_ids: Sequence[int],
                      rng: np.random.Generator, min_frames: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Draw (features, true states) from the HMM expanded for ``phone_ids``."""
    seq = expand(phone_ids)
    states = []
    for s in seq:
        p_self = np.exp(model.log_self[s])
        dur = max(min_frames, int(rng.geometric(1.0 - p_self)))
        states.extend([s] * dur)
    states = np.asarray(states)
    comp = np.array([rng.choice(model.n_mix, p=model.weights[s]) for s in states])
    mu = model.means[states, comp]
    sd = np.sqrt(model.variances[states, comp])
    return mu + sd * rng.standard_normal(mu.shape), states
