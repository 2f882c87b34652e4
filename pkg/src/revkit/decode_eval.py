"""Phone-loop Viterbi decoding over hybrid scores, and PER scoring."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .align_gmm import STATES_PER_PHONE


class DecodeError(ValueError):
    pass


def posteriors_to_loglik(posteriors: np.ndarray, log_priors: np.ndarray, acoustic_scale: float = 1.0,
                         log_domain: bool = False) -> np.ndarray:
    """Scaled log-likelihoods: scale * (log p(s|o) - log P(s)).

    Pass ``log_domain=True`` when ``posteriors`` already holds log-posteriors.
    """
    log_priors = np.asarray(log_priors, dtype=np.float64)
    if not np.all(np.isfinite(log_priors)):
        raise DecodeError("class priors must be strictly positive")
    p = np.asarray(posteriors, dtype=np.float64)
    if p.shape[1] != log_priors.shape[0]:
        raise DecodeError(f"{p.shape[1]} posterior columns but {log_priors.shape[0]} priors")
    if not log_domain:
        with np.errstate(divide="ignore"):
            p = np.log(p)
        p = np.maximum(p, -1e30)
    return acoustic_scale * (p - log_priors[None, :])


@dataclass(frozen=True)
class PhoneLoopGraph:
    """Uniform loop over every phone's 3-state left-to-right model."""

    n_phones: int
    self_loop: float = 0.5
    insertion_penalty: float = 0.0

    def __post_init__(self):
        if self.n_phones < 1:
            raise ValueError("need at least one phone")
        if not 0 < self.self_loop < 1:
            raise ValueError("self-loop probability must lie in (0, 1)")

    @property
    def n_states(self) -> int:
        return STATES_PER_PHONE * self.n_phones

    @property
    def log_entry(self) -> float:
        """Score for entering any phone: uniform choice minus the insertion penalty."""
        return -np.log(self.n_phones) - self.insertion_penalty


def phone_loop_decode(loglik: np.ndarray, graph: PhoneLoopGraph) -> list[int]:
    """Best phone-index sequence through the loop."""
    loglik = np.asarray(loglik, dtype=np.float64)
    t_len, n = loglik.shape
    if n != graph.n_states:
        raise DecodeError(f"score matrix has {n} columns, graph has {graph.n_states} states")
    if t_len < STATES_PER_PHONE:
        raise DecodeError("too short for one phone")
    ll = loglik.reshape(t_len, graph.n_phones, STATES_PER_PHONE)
    ls, lf = np.log(graph.self_loop), np.log1p(-graph.self_loop)
    delta = np.full((graph.n_phones, STATES_PER_PHONE), -np.inf)
    delta[:, 0] = graph.log_entry + ll[0, :, 0]
    # back[t, p, k]: for k>0, True if reached by a forward move; for k=0, the
    # predecessor phone index (or -1 for a self-loop)
    fwd_back = np.zeros((t_len, graph.n_phones, STATES_PER_PHONE), dtype=bool)
    entry_back = np.full((t_len, graph.n_phones), -1, dtype=np.int64)
    for t in range(1, t_len):
        stay = delta + ls
        new = stay.copy()
        move = delta[:, :-1] + lf
        better = move > stay[:, 1:]
        new[:, 1:] = np.where(better, move, stay[:, 1:])
        fwd_back[t, :, 1:] = better
        exits = delta[:, -1] + lf
        best_prev = int(np.argmax(exits))
        enter = exits[best_prev] + graph.log_entry
        take = enter > stay[:, 0]
        new[:, 0] = np.where(take, enter, stay[:, 0])
        entry_back[t] = np.where(take, best_prev, -1)
        delta = new + ll[t]
    p = int(np.argmax(delta[:, -1]))
    if not np.isfinite(delta[p, -1]):
        raise DecodeError("no complete path")
    phones = [p]
    k = STATES_PER_PHONE - 1
    for t in range(t_len - 1, 0, -1):
        if k > 0:
            if fwd_back[t, p, k]:
                k -= 1
        else:
            prev = entry_back[t, p]
            if prev >= 0:
                p, k = int(prev), STATES_PER_PHONE - 1
                phones.append(p)
    return phones[::-1]


@dataclass
class ScoreReport:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    ref_tokens: int = 0
    per_utterance: dict[str, float] = field(default_factory=dict)

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def per(self) -> float:
        return 100.0 * self.errors / self.ref_tokens if self.ref_tokens else 0.0

    def add(self, other: "ScoreReport") -> "ScoreReport":
        self.substitutions += other.substitutions
        self.deletions += other.deletions
        self.insertions += other.insertions
        self.ref_tokens += other.ref_tokens
        self.per_utterance.update(other.per_utterance)
        return self

    def to_tsv(self) -> str:
        lines = ["utterance_id\tper"]
        lines += [f"{k}\t{v:.2f}" for k, v in sorted(self.per_utterance.items())]
        lines.append(f"TOTAL\t{self.per:.2f}")
        lines.append(f"# S={self.substitutions} D={self.deletions} I={self.insertions} N={self.ref_tokens}")
        return "\n".join(lines) + "\n"


def _table(ref: list, hyp: list) -> list[list[int]]:
    prev = list(range(len(hyp) + 1))
    rows = [prev]
    for i, r in enumerate(ref, 1):
        row = [i]
        left = i
        for j, h in enumerate(hyp):
            left += 1
            up = prev[j + 1] + 1
            if up < left:
                left = up
            diag = prev[j] + (r != h)
            if diag < left:
                left = diag
            row.append(left)
        rows.append(row)
        prev = row
    return rows


def edit_table(ref: Sequence, hyp: Sequence) -> np.ndarray:
    """Full (len(ref)+1, len(hyp)+1) Levenshtein cost table."""
    return np.array(_table(list(ref), list(hyp)), dtype=np.int64)


def per(reference: Sequence, hypothesis: Sequence, utterance_id: str | None = None) -> ScoreReport:
    """Levenshtein alignment with unit costs.

    The backtrace prefers a match/substitution, then an insertion, then a
    deletion, so S/D/I splits are deterministic.
    """
    ref, hyp = list(reference), list(hypothesis)
    if not ref:
        raise ValueError("empty reference")
    d = _table(ref, hyp)
    i, j = len(ref), len(hyp)
    s = dl = ins = 0
    while i or j:
        if i and j and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif j and d[i][j] == d[i][j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dl += 1
            i -= 1
    rep = ScoreReport(int(s), dl, ins, len(ref))
    if utterance_id is not None:
        rep.per_utterance[utterance_id] = rep.per
    return rep


def score_corpus(refs: dict[str, Sequence], hyps: dict[str, Sequence], ignore: Sequence = ()) -> ScoreReport:
    """Corpus PER; symbols in ``ignore`` (e.g. silence) are dropped from both sides."""
    total = ScoreReport()
    drop = set(ignore)
    for uid, ref in refs.items():
        if uid not in hyps:
            raise KeyError(f"no hypothesis for {uid}")
        r = [p for p in ref if p not in drop]
        h = [p for p in hyps[uid] if p not in drop]
        total.add(per(r, h, uid))
    return total
