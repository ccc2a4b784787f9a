"""Contrastive pre-training primitives.

NT-Xent over a batch of ``2N`` projections ``z`` where each anchor ``i`` has
exactly one positive ``p(i)``::

    loss_i = -log( exp(sim(z_i, z_p(i)) / tau) / sum_{k != i} exp(sim(z_i, z_k) / tau) )

averaged over all ``2N`` anchors. The encoder is a small multilayer
perceptron and the projector two affine layers with a nonlinearity between
them; only the encoder is kept after pre-training.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .augment import MaskPolicy, _unwrap, prepare_view, sample_stream, sample_view_pair

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "identity")


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine similarity of a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


@dataclass(frozen=True)
class NTXentConfig:
    temperature: float = 0.07

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")


@dataclass
class EmbeddingBatch:
    """``2N`` vectors with a perfect matching between the two views of each sample."""

    vectors: np.ndarray
    pairing: np.ndarray | None = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        n2 = self.vectors.shape[0]
        if self.vectors.ndim != 2 or n2 < 2:
            raise ValueError("need a 2-D batch of at least two vectors")
        if self.pairing is None:
            if n2 % 2:
                raise ValueError("default pairing needs an even batch")
            n = n2 // 2
            self.pairing = np.concatenate([np.arange(n, n2), np.arange(n)])
        self.pairing = np.asarray(self.pairing, dtype=np.intp)
        p = self.pairing
        idx = np.arange(n2)
        if p.shape != (n2,) or np.any(p == idx) or np.any(p[p] != idx):
            raise ValueError("pairing is not a perfect matching")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("non-finite embedding")

    @classmethod
    def from_views(cls, z_i, z_j) -> "EmbeddingBatch":
        return cls(np.concatenate([np.asarray(z_i), np.asarray(z_j)], axis=0))


def _as_batch(batch) -> EmbeddingBatch:
    return batch if isinstance(batch, EmbeddingBatch) else EmbeddingBatch(batch)


def nt_xent_loss(batch, cfg: NTXentConfig = NTXentConfig()) -> float:
    b = _as_batch(batch)
    return kernels.nt_xent(b.vectors, b.pairing, cfg.temperature)[0]


def nt_xent_gradient(batch, cfg: NTXentConfig = NTXentConfig()) -> np.ndarray:
    """Gradient of :func:`nt_xent_loss` with respect to every vector, shape ``(2N, D)``."""
    b = _as_batch(batch)
    return kernels.nt_xent(b.vectors, b.pairing, cfg.temperature)[1]


def nt_xent_loss_and_gradient(batch, cfg: NTXentConfig = NTXentConfig()):
    b = _as_batch(batch)
    return kernels.nt_xent(b.vectors, b.pairing, cfg.temperature)


# --------------------------------------------------------------------------
# encoder / projector

@dataclass(frozen=True)
class EncoderSpec:
    """``layers`` runs from input width to feature width H."""

    layers: tuple[int, ...]
    activation: str = "relu"
    projector_hidden: int | None = None
    projector_dim: int = 256

    def __post_init__(self):
        if len(self.layers) < 2 or min(self.layers) < 1:
            raise ValueError("encoder needs an input width and at least one positive layer width")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.projector_dim < 1:
            raise ValueError("projector_dim must be positive")

    @property
    def input_dim(self) -> int:
        return self.layers[0]

    @property
    def feature_dim(self) -> int:
        return self.layers[-1]

    @property
    def projector_widths(self) -> tuple[int, int, int]:
        hidden = self.projector_hidden or self.feature_dim
        return self.feature_dim, hidden, self.projector_dim

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for i, (a, b) in enumerate(zip(self.layers[:-1], self.layers[1:])):
            shapes[f"encoder.{i}.weight"] = (a, b)
            shapes[f"encoder.{i}.bias"] = (b,)
        h, p, o = self.projector_widths
        shapes["projector.0.weight"] = (h, p)
        shapes["projector.0.bias"] = (p,)
        shapes["projector.1.weight"] = (p, o)
        shapes["projector.1.bias"] = (o,)
        return shapes


def init_weights(spec: EncoderSpec, seed: int = 0) -> dict[str, np.ndarray]:
    """He-normal weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in spec.param_shapes().items():
        if name.endswith("weight"):
            weights[name] = rng.standard_normal(shape) * math.sqrt(2.0 / shape[0])
        else:
            weights[name] = np.zeros(shape)
    return weights


def _act(x, kind):
    return np.maximum(x, 0.0) if kind == "relu" else x


def _act_grad(pre, grad, kind):
    return grad * (pre > 0) if kind == "relu" else grad


def encode(spec: EncoderSpec, weights, x, cache: list | None = None) -> np.ndarray:
    """Encoder features ``h``; ``cache`` collects ``(input, pre-activation)`` per layer."""
    a = np.asarray(x, dtype=np.float64)
    for i in range(len(spec.layers) - 1):
        pre = a @ weights[f"encoder.{i}.weight"] + weights[f"encoder.{i}.bias"]
        if cache is not None:
            cache.append((a, pre))
        a = _act(pre, spec.activation)
    return a


def project(spec: EncoderSpec, weights, h, cache: list | None = None) -> np.ndarray:
    pre = h @ weights["projector.0.weight"] + weights["projector.0.bias"]
    mid = _act(pre, spec.activation)
    if cache is not None:
        cache.append((h, pre))
        cache.append((mid, None))
    return mid @ weights["projector.1.weight"] + weights["projector.1.bias"]


def encoder_forward(spec: EncoderSpec, weights, x):
    """Return ``(h, z)`` for one input vector or a batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.input_dim:
        raise ValueError(f"input has {x.shape[-1]} features, encoder expects {spec.input_dim}")
    h = encode(spec, weights, x)
    return h, project(spec, weights, h)


def encoder_backward(spec: EncoderSpec, weights, cache, grad_z=None, grad_h=None,
                     include_encoder: bool = True) -> dict[str, np.ndarray]:
    """Backpropagate through the cache filled by :func:`encode` and :func:`project`.

    ``grad_z`` flows through the projector; ``grad_h`` is added at the feature
    layer (used when a classification head replaces the projector).
    """
    grads: dict[str, np.ndarray] = {}
    n_enc = len(spec.layers) - 1
    g_h = None if grad_h is None else np.asarray(grad_h, dtype=np.float64)
    if grad_z is not None:
        h, pre0 = cache[n_enc]
        mid, _ = cache[n_enc + 1]
        grads["projector.1.weight"] = mid.T @ grad_z
        grads["projector.1.bias"] = grad_z.sum(axis=0)
        g = _act_grad(pre0, grad_z @ weights["projector.1.weight"].T, spec.activation)
        grads["projector.0.weight"] = h.T @ g
        grads["projector.0.bias"] = g.sum(axis=0)
        g_from_z = g @ weights["projector.0.weight"].T
        g_h = g_from_z if g_h is None else g_h + g_from_z
    if include_encoder and g_h is not None:
        g = g_h
        for i in reversed(range(n_enc)):
            a, pre = cache[i]
            g = _act_grad(pre, g, spec.activation)
            grads[f"encoder.{i}.weight"] = a.T @ g
            grads[f"encoder.{i}.bias"] = g.sum(axis=0)
            if i:
                g = g @ weights[f"encoder.{i}.weight"].T
    return grads


# --------------------------------------------------------------------------
# pre-training

@dataclass(frozen=True)
class SSLConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-6
    warmup_fraction: float = 0.1
    temperature: float = 0.07
    image_size: tuple[int, int] | None = (239, 239)

    def lr_at(self, epoch: int) -> float:
        """Linear warm-up over the first ``warmup_fraction`` of epochs, then cosine decay."""
        warm = int(round(self.warmup_fraction * self.epochs))
        if epoch < warm:
            return self.learning_rate * (epoch + 1) / warm
        span = max(self.epochs - warm, 1)
        return 0.5 * self.learning_rate * (1.0 + math.cos(math.pi * (epoch - warm) / span))


@dataclass
class TrainResult:
    weights: dict[str, np.ndarray]
    history: list[float] = field(default_factory=list)


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled index batches, each at least ``min(batch_size, n)`` long."""
    perm = rng.permutation(n)
    return np.array_split(perm, max(1, n // batch_size))


def view_batch(images, indices, policy: MaskPolicy, seed: int, epoch: int, size):
    xi, xj = [], []
    for idx in indices:
        pair = sample_view_pair(images[idx], policy, sample_stream(seed, epoch, idx))
        vi, _ = prepare_view(pair.view_i, None, policy, None, size)
        vj, _ = prepare_view(pair.view_j, None, policy, None, size)
        xi.append(vi.ravel())
        xj.append(vj.ravel())
    return np.concatenate([np.stack(xi), np.stack(xj)])


def train_simclr(dataset, policy: MaskPolicy = MaskPolicy(), spec: EncoderSpec | None = None,
                 config: SSLConfig = SSLConfig(), seed: int = 0,
                 weights: dict[str, np.ndarray] | None = None) -> TrainResult:
    """Contrastive pre-training with masked view pairs.

    Gradient descent with momentum; learning rate from :meth:`SSLConfig.lr_at`.
    Each sample's views in epoch ``e`` come from the stream ``(seed, e, index)``
    so the run is a pure function of its arguments.
    """
    images = [_unwrap(x) for x in dataset]
    if len(images) < 2:
        raise ValueError("need at least two samples")
    if config.batch_size < 2:
        raise ValueError("batch size must be at least 2")
    shape = config.image_size or images[0].shape
    in_dim = int(np.prod(shape))
    if spec is None:
        spec = EncoderSpec((in_dim, 128, 64))
    if spec.input_dim != in_dim:
        raise ValueError(f"encoder input {spec.input_dim} != flattened image size {in_dim}")
    weights = init_weights(spec, seed) if weights is None else {k: v.copy() for k, v in weights.items()}
    velocity = {k: np.zeros_like(v) for k, v in weights.items()}
    nt_cfg = NTXentConfig(config.temperature)
    order_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xB47C]))

    history: list[float] = []
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        losses = []
        for batch in epoch_batches(len(images), config.batch_size, order_rng):
            x = view_batch(images, batch, policy, seed, epoch, config.image_size)
            cache: list = []
            h = encode(spec, weights, x, cache)
            z = project(spec, weights, h, cache)
            loss, grad_z = nt_xent_loss_and_gradient(z, nt_cfg)
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            grads = encoder_backward(spec, weights, cache, grad_z=grad_z)
            for name, g in grads.items():
                v = velocity[name]
                v *= config.momentum
                v += g + config.weight_decay * weights[name]
                weights[name] -= lr * v
            losses.append(loss)
        history.append(float(np.mean(losses)))
        log.debug("epoch %d lr %.4g loss %.6f", epoch, lr, history[-1])
    return TrainResult(weights, history)


def extract_features(spec: EncoderSpec, weights, images, size=(239, 239)) -> np.ndarray:
    """Frozen-encoder features for unmasked images (resized as during pre-training)."""
    rows = [prepare_view(im, None, MaskPolicy(), None, size)[0].ravel() for im in images]
    return encode(spec, weights, np.stack(rows))
