"""Sigmoid/softmax MLP acoustic model with newbob-style learning-rate control.

Learning rates are per frame: an SGD step moves the parameters by
``lr * sum_over_minibatch(gradient)``, the convention under which the usual
0.008 rate for this family of recipes is meaningful.  Losses are reported as
per-frame means.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit, log_softmax

log = logging.getLogger(__name__)

MODEL_MAGIC = "RVKNET 1"


class LayoutError(ValueError):
    pass


@dataclass
class MlpModel:
    weights: list[np.ndarray]  # (fan_in, fan_out) each
    biases: list[np.ndarray]
    log_priors: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise LayoutError("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[1],):
                raise LayoutError(f"layer {i}: bias shape {b.shape} does not match {w.shape}")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise LayoutError(f"layer {i}: input {w.shape[0]} != previous output {self.weights[i - 1].shape[1]}")

    @property
    def layout(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def dtype(self):
        return self.weights[0].dtype

    def copy(self) -> "MlpModel":
        return MlpModel([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                        None if self.log_priors is None else self.log_priors.copy(), dict(self.meta))

    def astype(self, dtype) -> "MlpModel":
        return MlpModel([w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases],
                        self.log_priors, dict(self.meta))

    def parameters(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def same_parameters(self, other: "MlpModel") -> bool:
        return self.layout == other.layout and all(
            np.array_equal(a, b) for a, b in zip(self.parameters(), other.parameters()))


def init_random(layout: Sequence[int], seed: int = 0, dtype=np.float32) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    if len(layout) < 2 or min(layout) < 1:
        raise LayoutError(f"invalid layout {layout}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layout[:-1], layout[1:]):
        r = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-r, r, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return MlpModel(weights, biases)


def _check_input(model: MlpModel, x: np.ndarray) -> None:
    if x.ndim != 2 or x.shape[1] != model.n_inputs:
        raise LayoutError(f"input width {x.shape[-1]} != model input size {model.n_inputs}")


def _activations(model: MlpModel, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    acts = [x]
    h = x
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        h = expit(h @ w + b)
        acts.append(h)
    logits = h @ model.weights[-1] + model.biases[-1]
    return acts, log_softmax(logits, axis=1)


def log_posteriors(model: MlpModel, x: np.ndarray, batch: int = 4096) -> np.ndarray:
    x = np.asarray(x, dtype=model.dtype)
    _check_input(model, x)
    return np.concatenate([_activations(model, x[i : i + batch])[1] for i in range(0, len(x), batch)]) \
        if len(x) else np.zeros((0, model.n_classes), model.dtype)


def forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Softmax posteriors, one row per frame."""
    return np.exp(log_posteriors(model, x))


def _check_labels(model: MlpModel, y: np.ndarray) -> None:
    if y.size and (y.min() < 0 or y.max() >= model.n_classes):
        raise ValueError(f"labels must lie in [0, {model.n_classes})")


def gradients(model: MlpModel, x: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean cross-entropy and its gradient with respect to every weight and bias."""
    x = np.asarray(x, dtype=model.dtype)
    y = np.asarray(y)
    _check_input(model, x)
    _check_labels(model, y)
    n = len(x)
    acts, logp = _activations(model, x)
    ce = -float(np.mean(logp[np.arange(n), y], dtype=np.float64))
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    gw, gb = [None] * len(model.weights), [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            a = acts[i]
            delta = (delta @ model.weights[i].T) * a * (1.0 - a)
    return ce, gw, gb


def cross_entropy(model: MlpModel, x: np.ndarray, y: np.ndarray) -> float:
    logp = log_posteriors(model, x)
    return -float(np.mean(logp[np.arange(len(y)), np.asarray(y)], dtype=np.float64))


def backprop_step(model: MlpModel, x: np.ndarray, y: np.ndarray, lr: float) -> float:
    """One in-place SGD step; returns the minibatch cross-entropy before the update."""
    ce, gw, gb = gradients(model, x, y)
    if lr:
        scale = model.dtype.type(lr * len(x))
        for w, g in zip(model.weights, gw):
            w -= scale * g
        for b, g in zip(model.biases, gb):
            b -= scale * g
    return ce


def frame_accuracy(model: MlpModel, x: np.ndarray, labels: np.ndarray) -> float:
    """Percentage of frames whose argmax posterior (lowest index on ties) equals the label."""
    labels = np.asarray(labels)
    if len(x) != len(labels):
        raise ValueError(f"{len(x)} frames but {len(labels)} labels")
    if not len(labels):
        raise ValueError("no frames to score")
    pred = np.argmax(log_posteriors(model, x), axis=1)
    return 100.0 * float(np.mean(pred == labels))


def estimate_log_priors(labels: np.ndarray, n_classes: int) -> np.ndarray:
    """Add-one smoothed class log-priors from training label counts."""
    counts = np.bincount(np.asarray(labels), minlength=n_classes).astype(np.float64) + 1.0
    return np.log(counts / counts.sum())


# ---------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class TrainSchedule:
    initial_lr: float = 0.008
    keep_threshold: float = 0.5
    stop_threshold: float = 0.1
    max_epochs: int = 20
    batch_size: int = 64
    momentum: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be positive")
        if not self.stop_threshold < self.keep_threshold:
            raise ValueError("stop_threshold must be below keep_threshold")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("invalid batch size or epoch count")


class LrController:
    """Keep the rate while dev accuracy gains exceed ``keep_threshold`` points,
    then halve it every epoch until a gain falls below ``stop_threshold``.
    Gains are measured against the previous epoch.  The stop test only applies
    once halving has started, so a flat first epoch (a deep sigmoid net still
    on its initial plateau) starts the halving instead of ending training.
    """

    def __init__(self, schedule: TrainSchedule):
        self.schedule = schedule
        self.lr = schedule.initial_lr
        self.halving = False
        self.stopped = False

    def update(self, increment: float) -> float | None:
        """Feed one epoch's accuracy gain; returns the next rate or None to stop."""
        if self.stopped:
            return None
        if self.halving and increment < self.schedule.stop_threshold:
            self.stopped = True
            return None
        if self.halving or increment <= self.schedule.keep_threshold:
            self.halving = True
            self.lr *= 0.5
        return self.lr


def replay_schedule(increments: Sequence[float], schedule: TrainSchedule = TrainSchedule()) -> list[float | str]:
    """Learning-rate decisions for a sequence of accuracy gains, ending in "stop" if triggered."""
    ctrl = LrController(schedule)
    trace: list[float | str] = []
    for inc in increments:
        nxt = ctrl.update(inc)
        if nxt is None:
            trace.append("stop")
            break
        trace.append(nxt)
    return trace


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    learning_rate: float
    train_ce: float
    dev_accuracy: float
    increment: float


@dataclass
class TrainHistory:
    initial_dev_accuracy: float
    epochs: list[EpochRecord] = field(default_factory=list)
    epochs_to_converge: int = 0
    best_epoch: int = 0

    @property
    def learning_rates(self) -> list[float]:
        return [e.learning_rate for e in self.epochs]

    @property
    def best_dev_accuracy(self) -> float:
        accs = [self.initial_dev_accuracy] + [e.dev_accuracy for e in self.epochs]
        return max(accs)


def train(model: MlpModel, train_set: tuple[np.ndarray, np.ndarray], dev_set: tuple[np.ndarray, np.ndarray],
          schedule: TrainSchedule = TrainSchedule()) -> tuple[MlpModel, TrainHistory]:
    """Minibatch SGD under the accuracy-driven schedule; returns the best-on-dev model.

    The input model is left untouched.
    """
    x, y = train_set
    x_dev, y_dev = dev_set
    if len(x_dev) == 0:
        raise ValueError("dev set is empty")
    x = np.asarray(x, dtype=model.dtype)
    y = np.asarray(y)
    _check_input(model, x)
    _check_labels(model, y)
    model = model.copy()
    rng = np.random.default_rng(schedule.seed)
    ctrl = LrController(schedule)
    prev = frame_accuracy(model, x_dev, y_dev)
    history = TrainHistory(initial_dev_accuracy=prev)
    best, best_acc = model.copy(), prev
    velocity = [np.zeros_like(p) for p in model.parameters()] if schedule.momentum else None
    for epoch in range(1, schedule.max_epochs + 1):
        lr = ctrl.lr
        order = rng.permutation(len(x))
        total, n_seen = 0.0, 0
        for i in range(0, len(order), schedule.batch_size):
            idx = order[i : i + schedule.batch_size]
            if velocity is None:
                ce = backprop_step(model, x[idx], y[idx], lr)
            else:
                ce = _momentum_step(model, x[idx], y[idx], lr, schedule.momentum, velocity)
            total += ce * len(idx)
            n_seen += len(idx)
        acc = frame_accuracy(model, x_dev, y_dev)
        inc = acc - prev
        prev = acc
        history.epochs.append(EpochRecord(epoch, lr, total / n_seen, acc, inc))
        log.info("epoch %d lr %.5g ce %.4f dev acc %.2f%% (%+.2f)", epoch, lr, total / n_seen, acc, inc)
        if acc > best_acc:
            best, best_acc = model.copy(), acc
            history.best_epoch = epoch
        if ctrl.update(inc) is None:
            history.epochs_to_converge = epoch
            break
    else:
        history.epochs_to_converge = len(history.epochs)
    best.log_priors = estimate_log_priors(y, model.n_classes)
    return best, history


def _momentum_step(model, x, y, lr, momentum, velocity) -> float:
    ce, gw, gb = gradients(model, x, y)
    grads = [g for pair in zip(gw, gb) for g in pair]
    for p, v, g in zip(model.parameters(), velocity, grads):
        v *= momentum
        v -= (lr * len(x)) * g
        p += v
    return ce


# ---------------------------------------------------------------------------
# Pre-training


@dataclass
class RbmLayer:
    weights: np.ndarray
    visible_bias: np.ndarray
    hidden_bias: np.ndarray
    gaussian_visible: bool
    recon_errors: list[float] = field(default_factory=list)

    def hidden_probs(self, v: np.ndarray) -> np.ndarray:
        return expit(v @ self.weights + self.hidden_bias)

    def visible_mean(self, h: np.ndarray) -> np.ndarray:
        a = h @ self.weights.T + self.visible_bias
        return a if self.gaussian_visible else expit(a)


@dataclass
class RbmStack:
    layers: list[RbmLayer]

    @property
    def hidden_sizes(self) -> list[int]:
        return [layer.weights.shape[1] for layer in self.layers]


def train_rbm(v_data: np.ndarray, n_hidden: int, gaussian_visible: bool, epochs: int, lr: float,
              rng: np.random.Generator, batch_size: int = 64, init_std: float = 0.1) -> RbmLayer:
    """CD-1 with sampled hidden states and mean-field visible reconstructions.

    Updates use the minibatch-mean statistics (unlike the per-frame SGD steps
    of ``backprop_step``).  Raises ValueError if the parameters stop being finite.
    """
    dtype = v_data.dtype
    n_vis = v_data.shape[1]
    layer = RbmLayer(
        weights=(init_std * rng.standard_normal((n_vis, n_hidden))).astype(dtype),
        visible_bias=np.zeros(n_vis, dtype) if gaussian_visible else
        np.log(np.clip(v_data.mean(0), 1e-3, 1 - 1e-3) / (1 - np.clip(v_data.mean(0), 1e-3, 1 - 1e-3))).astype(dtype),
        hidden_bias=np.zeros(n_hidden, dtype),
        gaussian_visible=gaussian_visible,
    )
    for _ in range(epochs):
        order = rng.permutation(len(v_data))
        err, n = 0.0, 0
        for i in range(0, len(order), batch_size):
            v0 = v_data[order[i : i + batch_size]]
            h0 = layer.hidden_probs(v0)
            h_sample = (rng.random(h0.shape) < h0).astype(dtype)
            v1 = layer.visible_mean(h_sample)
            h1 = layer.hidden_probs(v1)
            step = dtype.type(lr / len(v0))
            layer.weights += step * (v0.T @ h0 - v1.T @ h1)
            layer.visible_bias += step * (v0 - v1).sum(0)
            layer.hidden_bias += step * (h0 - h1).sum(0)
            err += float(np.sum((v0 - v1) ** 2, dtype=np.float64))
            n += v0.size
        if not (np.isfinite(err) and np.isfinite(layer.weights).all()):
            raise ValueError(f"RBM training diverged (lr {lr})")
        layer.recon_errors.append(err / n)
    return layer


def train_rbm_stack(x: np.ndarray, hidden_sizes: Sequence[int], epochs_per_layer: int = 1,
                    lr_gb: float = 0.001, lr_bb: float = 0.01, seed: int = 0,
                    batch_size: int = 64) -> RbmStack:
    """Greedy layer-wise pre-training: Gaussian-Bernoulli first, Bernoulli-Bernoulli above."""
    rng = np.random.default_rng(seed)
    v = np.asarray(x, dtype=np.float32)
    layers = []
    for i, n_hidden in enumerate(hidden_sizes):
        layer = train_rbm(v, n_hidden, gaussian_visible=(i == 0), epochs=epochs_per_layer,
                          lr=lr_gb if i == 0 else lr_bb, rng=rng, batch_size=batch_size)
        layers.append(layer)
        v = layer.hidden_probs(v)
    return RbmStack(layers)


def rbm_pretrain(x: np.ndarray, layout: Sequence[int], epochs_per_layer: int = 1, lr_gb: float = 0.001,
                 lr_bb: float = 0.01, seed: int = 0, batch_size: int = 64) -> MlpModel:
    """MLP whose hidden layers come from an RBM stack; the output layer is random."""
    layout = list(layout)
    if x.shape[1] != layout[0]:
        raise LayoutError(f"feature width {x.shape[1]} != layout input {layout[0]}")
    stack = train_rbm_stack(x, layout[1:-1], epochs_per_layer, lr_gb, lr_bb, seed, batch_size)
    model = init_random(layout, seed)
    for i, layer in enumerate(stack.layers):
        model.weights[i] = layer.weights.astype(model.dtype)
        model.biases[i] = layer.hidden_bias.astype(model.dtype)
    return model


def ct_pretrain_transfer(ct_model: MlpModel, train_set, dev_set, schedule: TrainSchedule = TrainSchedule(),
                         fine_tune_lr: float = 0.005, n_classes: int | None = None) -> tuple[MlpModel, TrainHistory]:
    """Initialise from a close-talk model and fine-tune on distant data."""
    x, y = train_set
    if x.shape[1] != ct_model.n_inputs:
        raise LayoutError(f"close-talk model expects {ct_model.n_inputs} inputs, data has {x.shape[1]}")
    if n_classes is not None and n_classes != ct_model.n_classes:
        raise LayoutError(f"close-talk model has {ct_model.n_classes} outputs, task needs {n_classes}")
    if np.asarray(y).max() >= ct_model.n_classes:
        raise LayoutError("labels exceed the close-talk model's output layer")
    return train(ct_model, train_set, dev_set, replace(schedule, initial_lr=fine_tune_lr))


# ---------------------------------------------------------------------------
# Persistence


def save_model(model: MlpModel, path) -> None:
    acts = ["sigmoid"] * (len(model.weights) - 1) + ["softmax"]
    priors = "none" if model.log_priors is None else " ".join(repr(float(p)) for p in np.exp(model.log_priors))
    n_params = sum(p.size for p in model.parameters())
    lines = [
        MODEL_MAGIC,
        "layout " + " ".join(map(str, model.layout)),
        "activations " + " ".join(acts),
        "window " + str(model.meta.get("window", "none")),
        "feature_config " + str(model.meta.get("feature_config", "none")),
        "priors " + priors,
        f"payload float32-le {n_params}",
        "",
    ]
    with open(path, "wb") as fh:
        fh.write("\n".join(lines).encode("utf-8") + b"\n")
        for p in model.parameters():
            fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def load_model(path) -> MlpModel:
    raw = Path(path).read_bytes()
    head, sep, payload = raw.partition(b"\n\n")
    if not sep:
        raise ValueError(f"{path}: missing header terminator")
    lines = head.decode("utf-8").split("\n")
    if lines[0] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a model file")
    fields = dict(line.split(" ", 1) for line in lines[1:])
    layout = [int(v) for v in fields["layout"].split()]
    n_params = int(fields["payload"].split()[1])
    flat = np.frombuffer(payload, dtype="<f4")
    if flat.size != n_params:
        raise ValueError(f"{path}: payload has {flat.size} values, header says {n_params}")
    weights, biases, pos = [], [], 0
    for fan_in, fan_out in zip(layout[:-1], layout[1:]):
        weights.append(flat[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out).astype(np.float32))
        pos += fan_in * fan_out
        biases.append(flat[pos : pos + fan_out].astype(np.float32))
        pos += fan_out
    priors = None
    if fields["priors"] != "none":
        priors = np.log(np.array([float(v) for v in fields["priors"].split()]))
    meta = {k: fields[k] for k in ("window", "feature_config") if fields.get(k, "none") != "none"}
    return MlpModel(weights, biases, priors, meta)
