"""Dense-weight GCN over a sparse propagation operator, with analytic gradients."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gttt.errors import NumericError, ValidationError

CHECKPOINT_VERSION = 1


@dataclass
class GcnModel:
    """Stack of GCN layers ``Z = A @ H @ W + b`` with ReLU between layers.

    The first ``frozen_prefix`` layers are never touched by test-time
    adaptation.
    """

    weights: list
    biases: list
    frozen_prefix: int = 1

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValidationError("need one bias per weight matrix and at least one layer")
        for a, b in zip(self.weights, self.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValidationError(f"layer dims {a.shape} -> {b.shape} do not chain")
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[1],):
                raise ValidationError("bias length must equal layer output width")
        if not 0 <= self.frozen_prefix < len(self.weights):
            raise ValidationError(f"frozen_prefix {self.frozen_prefix} not in [0, {len(self.weights)})")

    @classmethod
    def init(cls, dims, seed, frozen_prefix=1):
        """Glorot-uniform weights, zero biases. ``dims = [in, hidden..., classes]``."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(dims, dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, frozen_prefix)

    @property
    def num_layers(self):
        return len(self.weights)

    @property
    def dims(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def num_classes(self):
        return self.weights[-1].shape[1]

    def copy(self):
        return GcnModel([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.frozen_prefix)

    def same_as(self, other):
        """Bit-for-bit parameter equality."""
        return all(
            np.array_equal(a, b)
            for a, b in zip(self.weights + self.biases, other.weights + other.biases)
        )


@dataclass
class Prediction:
    probs: np.ndarray
    logits: np.ndarray

    def argmax(self):
        return self.probs.argmax(axis=1)

    def max_prob(self):
        return self.probs.max(axis=1)


@dataclass
class Gradients:
    weights: list
    biases: list
    loss: float


@dataclass
class Adam:
    """Adam optimizer state (the moments are allocated on first step)."""

    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0

    def step(self, model, grads, first_layer=0):
        """Update layers ``first_layer..`` of ``model`` in place."""
        params = model.weights + model.biases
        gs = grads.weights + grads.biases
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        L = model.num_layers
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for idx, (p, g) in enumerate(zip(params, gs)):
            if idx % L < first_layer:
                continue
            if self.weight_decay and idx < L:
                g = g + self.weight_decay * p
            self.m[idx] = self.beta1 * self.m[idx] + (1 - self.beta1) * g
            self.v[idx] = self.beta2 * self.v[idx] + (1 - self.beta2) * g * g
            p -= self.lr * (self.m[idx] / c1) / (np.sqrt(self.v[idx] / c2) + self.eps)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward(model, adj, features, dropout=0.0, rng=None):
    h = np.asarray(features, dtype=np.float64)
    if h.shape[1] != model.dims[0]:
        raise ValidationError(f"features have {h.shape[1]} columns, model expects {model.dims[0]}")
    if h.shape[0] != adj.num_nodes:
        raise ValidationError("feature rows do not match adjacency size")
    cache = []
    for layer, (w, b) in enumerate(zip(model.weights, model.biases)):
        keep = None
        if dropout > 0.0 and layer > 0:
            keep = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
            h = h * keep
        ah = adj.matmul(h)
        z = ah @ w + b
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite activations in layer {layer}")
        cache.append((ah, z, keep))
        h = np.maximum(z, 0.0) if layer < model.num_layers - 1 else z
    return Prediction(softmax(h), h), cache


def forward(model, adj, features):
    return _forward(model, adj, features)[0]


def _masked(mask, n):
    mask = np.asarray(mask)
    if mask.dtype == bool:
        if mask.shape != (n,):
            raise ValidationError("mask length must equal the number of nodes")
        idx = np.flatnonzero(mask)
    else:
        idx = mask.astype(np.int64)
    if len(idx) == 0:
        raise ValidationError("mask selects no nodes")
    return idx


def loss_ce(pred, labels, mask):
    idx = _masked(mask, len(pred.probs))
    p = pred.probs[idx, np.asarray(labels)[idx]]
    return float(-np.mean(np.log(np.maximum(p, 1e-300))))


def _backward_from(model, adj, cache, pred, labels, idx, per_node_weights, frozen_prefix):
    n, C = pred.probs.shape
    labels = np.asarray(labels, dtype=np.int64)
    w = np.ones(n) if per_node_weights is None else np.asarray(per_node_weights, dtype=np.float64)
    if w.shape != (n,):
        raise ValidationError("per_node_weights must have one entry per node")
    if np.any(w < 0):
        raise ValidationError("per_node_weights must be >= 0")
    p = pred.probs[idx, labels[idx]]
    loss = float(np.sum(w[idx] * -np.log(np.maximum(p, 1e-300))) / len(idx))

    dz = np.zeros((n, C))
    dz[idx] = pred.probs[idx]
    dz[idx, labels[idx]] -= 1.0
    dz[idx] *= (w[idx] / len(idx))[:, None]

    gw = [np.zeros_like(x) for x in model.weights]
    gb = [np.zeros_like(x) for x in model.biases]
    for layer in range(model.num_layers - 1, frozen_prefix - 1, -1):
        ah, _, _ = cache[layer]
        gw[layer] = ah.T @ dz
        gb[layer] = dz.sum(axis=0)
        if layer == frozen_prefix:
            break
        # adjacency is symmetric, so A^T = A
        dh = adj.matmul(dz @ model.weights[layer].T)
        keep = cache[layer][2]
        if keep is not None:
            dh = dh * keep
        dz = dh * (cache[layer - 1][1] > 0)
    return Gradients(gw, gb, loss)


def backward(model, adj, features, labels, mask, per_node_weights=None, frozen_prefix=None):
    """Gradients of the (weighted) mean cross-entropy over ``mask``.

    The loss is ``sum_i w_i * CE_i / |mask|`` so it is linear in the
    weights. Layers below ``frozen_prefix`` (default: the model's) get
    zero gradients.
    """
    k = model.frozen_prefix if frozen_prefix is None else frozen_prefix
    pred, cache = _forward(model, adj, features)
    idx = _masked(mask, adj.num_nodes)
    return _backward_from(model, adj, cache, pred, labels, idx, per_node_weights, k)


def accuracy(pred, labels, mask):
    idx = _masked(mask, len(pred.probs))
    return float(np.mean(pred.argmax()[idx] == np.asarray(labels)[idx]))


def prediction_entropy(pred):
    p = pred.probs
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=1)


def pretrain(model, g, split, epochs, opt, seed, adj=None, dropout=0.0):
    """Full-batch Adam on the train mask; returns a new model.

    When the split has validation nodes, the parameters with the best
    validation accuracy seen so far (first one on ties) are returned.
    """
    from gttt.graph import normalize_adjacency

    if not split.train_mask.any():
        raise ValidationError("train mask is empty")
    adj = adj if adj is not None else normalize_adjacency(g)
    model = model.copy()
    if epochs == 0:
        return model
    rng = np.random.default_rng(seed)
    train_idx = np.flatnonzero(split.train_mask)
    has_val = split.val_mask.any()
    best, best_acc = model.copy(), -1.0
    for epoch in range(epochs):
        pred, cache = _forward(model, adj, g.features, dropout, rng)
        grads = _backward_from(model, adj, cache, pred, g.labels, train_idx, None, 0)
        if not np.isfinite(grads.loss):
            raise NumericError(f"pretraining loss diverged at epoch {epoch}")
        opt.step(model, grads, first_layer=0)
        if has_val:
            acc = accuracy(forward(model, adj, g.features), g.labels, split.val_mask)
            if acc > best_acc:
                best, best_acc = model.copy(), acc
    return best if has_val else model


def save_checkpoint(model, path):
    obj = {
        "format_version": CHECKPOINT_VERSION,
        "dims": model.dims,
        "frozen_prefix": model.frozen_prefix,
        "weights": [w.ravel().tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }
    Path(path).write_text(json.dumps(obj) + "\n", encoding="utf-8")


def load_checkpoint(path):
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("format_version") != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {obj.get('format_version')!r}")
    dims = obj["dims"]
    weights = [
        np.asarray(w, dtype=np.float64).reshape(a, b)
        for w, a, b in zip(obj["weights"], dims, dims[1:])
    ]
    biases = [np.asarray(b, dtype=np.float64) for b in obj["biases"]]
    return GcnModel(weights, biases, obj["frozen_prefix"])
