"""Small fully-connected networks trained by mini-batch SGD.

The same machinery serves the mirror-symmetric behavior autoencoder
(30-24-16-8-16-24-30, ReLU hidden layers, linear output) and the softmax
MLP baseline classifier.
"""

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import BadShape, DimensionMismatch, EmptyInput, NonFinite

_CHUNK = 512


@dataclass
class MlpNetwork:
    sizes: list
    weights: list  # weights[i] has shape (sizes[i+1], sizes[i])
    biases: list
    hidden_activation: str = "relu"
    output: str = "linear"  # "linear" | "softmax"
    n_encoder: int = None  # layers up to the bottleneck (autoencoders only)

    @property
    def n_layers(self):
        return len(self.weights)

    def params(self):
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self):
        return copy.deepcopy(self)

    def state(self):
        return {
            "sizes": list(self.sizes),
            "hidden_activation": self.hidden_activation,
            "output": self.output,
            "n_encoder": self.n_encoder,
            "weights": list(self.weights),
            "biases": list(self.biases),
        }

    @classmethod
    def from_state(cls, state):
        return cls(
            list(state["sizes"]),
            [np.asarray(w, float) for w in state["weights"]],
            [np.asarray(b, float) for b in state["biases"]],
            state["hidden_activation"],
            state["output"],
            state["n_encoder"],
        )


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 0.01
    seed: int = 0
    early_stop_patience: int = 20
    tolerance: float = 1e-5

    def __post_init__(self):
        for name in ("epochs", "batch_size", "learning_rate", "early_stop_patience", "tolerance"):
            if not getattr(self, name) > 0:
                raise BadShape(f"train config {name} must be positive")


def autoencoder_sizes(input_dim=30, hidden=(24, 16, 8)):
    hidden = list(hidden)
    return [input_dim] + hidden + hidden[-2::-1] + [input_dim]


def init_network(layer_sizes, seed, mirrored=True, output="linear", hidden_activation="relu"):
    """Glorot-uniform weights, zero biases. Draws happen layer by layer in order."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise BadShape(f"invalid layer sizes {layer_sizes}")
    n_encoder = None
    if mirrored:
        if len(sizes) % 2 == 0 or sizes != sizes[::-1]:
            raise BadShape(f"autoencoder layer sizes must mirror around the bottleneck: {sizes}")
        n_encoder = len(sizes) // 2
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpNetwork(sizes, weights, biases, hidden_activation, output, n_encoder)


def _relu(z):
    return np.maximum(z, 0.0)


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def affine_rowstable(x, w, b):
    # elementwise product + reduction: a row's result never depends on its batch
    out = np.empty((x.shape[0], w.shape[0]))
    for i in range(0, x.shape[0], _CHUNK):
        out[i:i + _CHUNK] = (x[i:i + _CHUNK, None, :] * w[None, :, :]).sum(axis=2)
    return out + b


def _run(net, x, stop=None, rowstable=True):
    a = x
    stop = net.n_layers if stop is None else stop
    for i in range(stop):
        w, b = net.weights[i], net.biases[i]
        z = affine_rowstable(a, w, b) if rowstable else a @ w.T + b
        a = _relu(z) if i < net.n_layers - 1 else z
    return a


def _as_batch(net, x):
    x = np.asarray(x, float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != net.sizes[0]:
        raise DimensionMismatch(f"network expects {net.sizes[0]} inputs, got {x.shape[1]}")
    return x, single


def forward(net, x):
    """Return ``(embedding, reconstruction)`` for one row or a batch."""
    x, single = _as_batch(net, x)
    emb = _run(net, x, stop=net.n_encoder)
    a = emb
    for i in range(net.n_encoder, net.n_layers):
        z = affine_rowstable(a, net.weights[i], net.biases[i])
        a = _relu(z) if i < net.n_layers - 1 else z
    if single:
        return emb[0], a[0]
    return emb, a


def encode(net, x):
    x, single = _as_batch(net, x)
    emb = _run(net, x, stop=net.n_encoder)
    return emb[0] if single else emb


def predict_output(net, x):
    """Network output (softmax probabilities for classifier networks)."""
    x, _ = _as_batch(net, x)
    z = _run(net, x)
    return _softmax(z) if net.output == "softmax" else z


def loss_and_grads(net, x, target):
    """Mean loss over the batch and its gradients, in ``net.params()`` order.

    Linear output: mean over rows of the per-dimension mean squared error.
    Softmax output: mean cross-entropy against one-hot ``target``.
    """
    acts = [x]
    pre = []
    a = x
    for i in range(net.n_layers):
        z = a @ net.weights[i].T + net.biases[i]
        pre.append(z)
        a = _relu(z) if i < net.n_layers - 1 else z
        acts.append(a)
    n = x.shape[0]
    if net.output == "softmax":
        p = _softmax(a)
        loss = -np.mean(np.sum(target * np.log(np.clip(p, 1e-300, None)), axis=1))
        delta = (p - target) / n
    else:
        diff = a - target
        loss = np.mean(diff ** 2)
        delta = 2.0 * diff / diff.size
    grads = [None] * (2 * net.n_layers)
    for i in range(net.n_layers - 1, -1, -1):
        grads[2 * i] = delta.T @ acts[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        if i:
            delta = (delta @ net.weights[i]) * (pre[i - 1] > 0)
    return float(loss), grads


def dataset_loss(net, x, target):
    return loss_and_grads(net, x, target)[0]


def train(net, rows, cfg, targets=None):
    """Mini-batch SGD. Returns ``(trained copy, per-epoch loss over the whole set)``.

    ``targets`` defaults to ``rows`` (reconstruction). Stops after
    ``cfg.epochs`` or once the best loss has failed to improve by
    ``cfg.tolerance`` for ``cfg.early_stop_patience`` consecutive epochs.
    """
    rows = np.asarray(rows, float)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise EmptyInput("no training rows")
    if rows.shape[1] != net.sizes[0]:
        raise DimensionMismatch(f"network expects {net.sizes[0]} inputs, got {rows.shape[1]}")
    targets = rows if targets is None else np.asarray(targets, float)
    net = net.copy()
    rng = np.random.default_rng(cfg.seed)
    n = rows.shape[0]
    bs = min(cfg.batch_size, n)
    curve = []
    best = np.inf
    stale = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        # divergence surfaces as NonFinite below, not as numpy warnings
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, bs):
                idx = order[start:start + bs]
                _, grads = loss_and_grads(net, rows[idx], targets[idx])
                for p, g in zip(net.params(), grads):
                    p -= cfg.learning_rate * g
            loss = dataset_loss(net, rows, targets)
        if not np.isfinite(loss):
            raise NonFinite(f"training loss became {loss} after {len(curve) + 1} epochs")
        curve.append(loss)
        if best - loss < cfg.tolerance:
            stale += 1
        else:
            stale = 0
        best = min(best, loss)
        if stale >= cfg.early_stop_patience:
            break
    return net, np.array(curve)


@dataclass
class EncodedFlow:
    embeddings: np.ndarray  # (n_nonempty, V)
    empty: np.ndarray  # (L,) bool
    segment_index: np.ndarray = field(default=None)  # 1-based indices of the embedded segments


def encode_all(net, behavior_matrices, empty_masks):
    """Embed every non-empty segment of every flow; empty segments get no row."""
    out = []
    for bf, mask in zip(behavior_matrices, empty_masks):
        mask = np.asarray(mask, bool)
        keep = ~mask
        rows = np.asarray(bf, float)[keep]
        v = net.sizes[net.n_encoder]
        emb = encode(net, rows) if len(rows) else np.zeros((0, v))
        out.append(EncodedFlow(emb, mask, np.flatnonzero(keep) + 1))
    return out
