"""Downstream evaluation: quadrant labels, linear probe, fine-tuning, metrics.

Heads are trained with Adam (L2 weight decay added to the gradient) and a
per-epoch cosine-decayed learning rate ``lr_e = lr * (1 + cos(pi e / E)) / 2``.
For step ``t`` (1-based) with gradient ``g``::

    g  <- g + weight_decay * w
    m  <- b1 m + (1 - b1) g
    v  <- b2 v + (1 - b2) g**2
    w  <- w - lr_e * (m / (1 - b1**t)) / (sqrt(v / (1 - b2**t)) + eps)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .augment import _unwrap
from .contrastive import EncoderSpec, encode, encoder_backward

N_CLASSES = 4


class QuadrantLabel(IntEnum):
    LALV = 0
    LAHV = 1
    HALV = 2
    HAHV = 3


def quadrant_label(arousal: int, valence: int) -> QuadrantLabel:
    """Bin 1..5 self-ratings into an arousal/valence quadrant (threshold 3, ties high)."""
    for name, r in (("arousal", arousal), ("valence", valence)):
        if not 1 <= r <= 5:
            raise ValueError(f"{name} rating {r} outside [1, 5]")
    high_a, high_v = arousal >= 3, valence >= 3
    return QuadrantLabel(2 * high_a + high_v)


def flatten_features(ccgram) -> np.ndarray:
    return np.ascontiguousarray(_unwrap(ccgram)).reshape(-1)


# --------------------------------------------------------------------------
# heads

@dataclass(frozen=True)
class ProbeConfig:
    learning_rate: float = 1e-4
    epochs: int = 50
    batch_size: int = 16
    weight_decay: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def lr_at(self, epoch: int) -> float:
        return 0.5 * self.learning_rate * (1.0 + math.cos(math.pi * epoch / max(self.epochs, 1)))


FINETUNE_CONFIG = ProbeConfig(learning_rate=5e-6)


def init_head(widths, seed: int) -> dict[str, np.ndarray]:
    """Head ``widths[0] -> ... -> widths[-1]``; small Gaussian weights, zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x4EAD]))
    params = {}
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        scale = 0.01 if i == len(widths) - 2 else math.sqrt(2.0 / a)
        params[f"head.{i}.weight"] = rng.standard_normal((a, b)) * scale
        params[f"head.{i}.bias"] = np.zeros(b)
    return params


def _head_depth(params) -> int:
    return sum(1 for k in params if k.endswith(".weight") and k.startswith("head."))


def head_forward(params, x, cache: list | None = None) -> np.ndarray:
    depth = _head_depth(params)
    a = x
    for i in range(depth):
        pre = a @ params[f"head.{i}.weight"] + params[f"head.{i}.bias"]
        if cache is not None:
            cache.append((a, pre))
        a = np.maximum(pre, 0.0) if i < depth - 1 else pre
    return a


def head_backward(params, cache, grad_logits):
    grads = {}
    g = grad_logits
    for i in reversed(range(_head_depth(params))):
        a, pre = cache[i]
        grads[f"head.{i}.weight"] = a.T @ g
        grads[f"head.{i}.bias"] = g.sum(axis=0)
        g = g @ params[f"head.{i}.weight"].T
        if i:
            g = g * (cache[i - 1][1] > 0)
    return grads, g


def softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient with respect to the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(labels))
    loss = float(np.mean(logz - shifted[rows, labels]))
    p = np.exp(shifted - logz[:, None])
    p[rows, labels] -= 1.0
    return loss, p / len(labels)


class Adam:
    def __init__(self, params: dict[str, np.ndarray], cfg: ProbeConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads, lr):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for name, g in grads.items():
            w = params[name]
            g = g + c.weight_decay * w
            m, v = self.m[name], self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            w -= lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


def _check_labels(features, labels):
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.intp)
    if x.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise ValueError("features must be (n, d) with one label per row")
    if y.min() < 0 or y.max() >= N_CLASSES:
        raise ValueError(f"labels must be in 0..{N_CLASSES - 1}")
    return x, y


def _fit(params, step_fn, n: int, cfg: ProbeConfig, seed: int) -> list[float]:
    """Generic mini-batch loop; ``step_fn(batch_idx) -> (loss, grads)``."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x0B5E]))
    opt = Adam(params, cfg)
    history = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            loss, grads = step_fn(perm[start:start + cfg.batch_size])
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            opt.step(params, grads, lr)
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return history


def _train_head(x, y, hidden, cfg, seed):
    params = init_head((x.shape[1], *hidden, N_CLASSES), seed)

    def step(idx):
        cache: list = []
        loss, g = softmax_xent(head_forward(params, x[idx], cache), y[idx])
        return loss, head_backward(params, cache, g)[0]

    return params, _fit(params, step, len(y), cfg, seed)


@dataclass
class ProbeModel:
    weight: np.ndarray
    bias: np.ndarray
    config: ProbeConfig = ProbeConfig()
    history: list[float] = field(default_factory=list)

    def logits(self, features) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.weight + self.bias

    def predict(self, features) -> np.ndarray:
        return np.argmax(self.logits(features), axis=1)


def train_linear_probe(features, labels, config: ProbeConfig = ProbeConfig(), seed: int = 0) -> ProbeModel:
    """Softmax regression on fixed features."""
    x, y = _check_labels(features, labels)
    params, history = _train_head(x, y, (), config, seed)
    return ProbeModel(params["head.0.weight"], params["head.0.bias"], config, history)


# --------------------------------------------------------------------------
# metrics

@dataclass
class Metrics:
    weighted_accuracy: float
    weighted_f1: float
    confusion: np.ndarray
    balanced_accuracy: float

    def as_dict(self) -> dict[str, float]:
        return {
            "weighted_accuracy": self.weighted_accuracy,
            "weighted_f1": self.weighted_f1,
            "balanced_accuracy": self.balanced_accuracy,
            "n_samples": int(self.confusion.sum()),
        }


def confusion_matrix(y_true, y_pred, n_classes: int = N_CLASSES) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.intp), np.asarray(y_pred, dtype=np.intp)), 1)
    return cm


def metrics_from_predictions(y_true, y_pred, n_classes: int = N_CLASSES) -> Metrics:
    """Support-weighted recall (= accuracy) and support-weighted F1.

    A class with no true and no predicted samples has F1 0; it also has zero
    weight. ``balanced_accuracy`` is the unweighted mean recall over present
    classes.
    """
    y_true = np.asarray(y_true)
    if y_true.size == 0:
        raise ValueError("empty evaluation set")
    cm = confusion_matrix(y_true, y_pred, n_classes)
    support = cm.sum(axis=1).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    tp = np.diag(cm).astype(np.float64)
    weights = support / support.sum()
    present = support > 0
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=present)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return Metrics(
        weighted_accuracy=float(np.sum(weights * recall)),
        weighted_f1=float(np.sum(weights * f1)),
        confusion=cm,
        balanced_accuracy=float(recall[present].mean()),
    )


def evaluate(model, features, labels) -> Metrics:
    """Metrics for anything with a ``predict(features)`` method."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty evaluation set")
    return metrics_from_predictions(labels, model.predict(features))


def write_report(path, values: dict, stream=None) -> None:
    """Flat ``key=value`` report, also echoed to ``stream`` when given."""
    lines = [f"{k}={_fmt(v)}" for k, v in values.items()]
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    if stream is not None:
        stream.write(text)


def _fmt(v):
    if isinstance(v, float):
        return repr(round(v, 12))
    return str(v)


# --------------------------------------------------------------------------
# fine-tuning

@dataclass
class FinetunedModel:
    spec: EncoderSpec
    encoder_weights: dict[str, np.ndarray]
    head: dict[str, np.ndarray]
    history: list[float] = field(default_factory=list)

    def predict(self, inputs) -> np.ndarray:
        h = encode(self.spec, self.encoder_weights, np.asarray(inputs, dtype=np.float64))
        return np.argmax(head_forward(self.head, h), axis=1)


def finetune(spec: EncoderSpec, encoder_weights, train_inputs, train_labels, test_inputs, test_labels,
             head_hidden: tuple[int, ...] = (64,), config: ProbeConfig = FINETUNE_CONFIG,
             seed: int = 0, freeze_encoder: bool = False):
    """Train a head (and, unless frozen, the encoder) on flattened inputs.

    Returns ``(FinetunedModel, Metrics on the test split)``. With
    ``freeze_encoder=True`` and ``head_hidden=()`` this reduces exactly to
    :func:`train_linear_probe` on frozen features.
    """
    x, y = _check_labels(train_inputs, train_labels)
    enc = {k: v.copy() for k, v in encoder_weights.items() if k.startswith("encoder.")}
    if freeze_encoder:
        feats = encode(spec, enc, x)
        head, history = _train_head(feats, y, tuple(head_hidden), config, seed)
    else:
        head = init_head((spec.feature_dim, *head_hidden, N_CLASSES), seed)
        params = {**enc, **head}

        def step(idx):
            enc_cache: list = []
            head_cache: list = []
            h = encode(spec, params, x[idx], enc_cache)
            loss, g = softmax_xent(head_forward(params, h, head_cache), y[idx])
            grads, g_h = head_backward(params, head_cache, g)
            grads.update(encoder_backward(spec, params, enc_cache, grad_h=g_h))
            return loss, grads

        history = _fit(params, step, len(y), config, seed)
        enc = {k: v for k, v in params.items() if k.startswith("encoder.")}
        head = {k: v for k, v in params.items() if k.startswith("head.")}
    model = FinetunedModel(spec, enc, head, history)
    return model, evaluate(model, test_inputs, test_labels)
