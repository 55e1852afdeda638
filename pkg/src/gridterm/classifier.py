"""Flow-type classifiers over ``I = segment_embedding ⊕ flow_features``.

All models share ``predict_proba``/``predict``/``state``. Class indices are
positions in the configured class tuple; ``predict`` breaks probability ties
toward the lowest index.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autoencoder as nn
from .errors import DimensionMismatch, EmptyInput, SingleClass, UnknownKind
from .trees import build_tree, pack_trees, unpack_trees

MIN_ROWS = 10


def build_input(x_se, x_ff):
    """Row-wise concatenation, segment embedding first."""
    x_se = np.atleast_2d(np.asarray(x_se, float))
    x_ff = np.atleast_2d(np.asarray(x_ff, float))
    if x_se.shape[0] != x_ff.shape[0]:
        raise DimensionMismatch(f"{x_se.shape[0]} embedding rows vs {x_ff.shape[0]} flow rows")
    return np.hstack([x_se, x_ff])


def input_columns(k, flow_columns, flow_features_only=False):
    se = [] if flow_features_only else [f"cluster_{j}" for j in range(k)] + ["cluster_empty"]
    return se + list(flow_columns)


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_training_set(x, y, n_classes):
    x = np.asarray(x, float)
    y = np.asarray(y, np.int64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyInput("no training rows")
    if x.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{x.shape[0]} rows but {y.shape[0]} labels")
    if x.shape[0] < MIN_ROWS:
        raise EmptyInput(f"need at least {MIN_ROWS} training rows, got {x.shape[0]}")
    if len(np.unique(y)) < 2:
        raise SingleClass("training labels contain a single class")
    if y.min() < 0 or y.max() >= n_classes:
        raise DimensionMismatch(f"labels outside [0, {n_classes})")
    return x, y


def _one_hot(y, n_classes):
    out = np.zeros((len(y), n_classes))
    out[np.arange(len(y)), y] = 1.0
    return out


class Model:
    kind = None

    def _check(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        if x.shape[1] != self.n_features:
            raise DimensionMismatch(f"{self.kind} model expects {self.n_features} features, got {x.shape[1]}")
        return x

    def predict(self, x):
        return np.argmax(self.predict_proba(x), axis=1)


# --- gradient boosting -------------------------------------------------------

@dataclass
class GbtModel(Model):
    init: np.ndarray  # per-class log prior
    trees: list  # trees[stage][class]
    learning_rate: float
    n_features: int
    deviance: np.ndarray = field(default=None)  # training deviance, initial then per stage
    kind: str = "gbt"

    @property
    def n_classes(self):
        return len(self.init)

    def decision_function(self, x):
        x = self._check(x)
        f = np.tile(self.init, (x.shape[0], 1))
        for stage in self.trees:
            for k, tree in enumerate(stage):
                f[:, k] += self.learning_rate * tree.predict_value(x)[:, 0]
        return f

    def predict_proba(self, x):
        return _softmax(self.decision_function(x))

    def state(self):
        flat = [t for stage in self.trees for t in stage]
        return {"kind": self.kind, "init": self.init, "learning_rate": self.learning_rate,
                "n_features": self.n_features, "n_stages": len(self.trees),
                "deviance": self.deviance, "trees": pack_trees(flat) if flat else None}

    @classmethod
    def from_state(cls, s):
        k = len(s["init"])
        flat = unpack_trees(s["trees"]) if s["trees"] is not None else []
        stages = [flat[i:i + k] for i in range(0, len(flat), k)]
        return cls(np.asarray(s["init"], float), stages, float(s["learning_rate"]),
                   int(s["n_features"]), np.asarray(s["deviance"], float))


def _deviance(y1h, f):
    z = f - f.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-np.mean(np.sum(y1h * logp, axis=1)))


def train_gbt(x, y, n_classes=3, stages=200, learning_rate=0.1, max_depth=3, seed=0):
    """Multinomial-deviance boosting: per stage one Friedman-MSE regression tree
    per class on the residuals, with Newton leaf values."""
    x, y = _check_training_set(x, y, n_classes)
    y1h = _one_hot(y, n_classes)
    prior = y1h.mean(axis=0)
    init = np.log(np.maximum(prior, 1e-12))
    f = np.tile(init, (len(y), 1))
    deviance = [_deviance(y1h, f)]
    scale = (n_classes - 1) / n_classes
    all_stages = []
    for _ in range(stages):
        p = _softmax(f)
        stage = []
        update = np.zeros_like(f)
        for k in range(n_classes):
            resid = y1h[:, k] - p[:, k]
            tree = build_tree(x, resid, "friedman_mse", max_depth=max_depth)
            leaves = tree.apply(x)
            num = np.bincount(leaves, weights=resid, minlength=tree.n_nodes)
            den = np.bincount(leaves, weights=np.abs(resid) * (1.0 - np.abs(resid)), minlength=tree.n_nodes)
            vals = np.where(np.abs(den) < 1e-150, 0.0, scale * num / np.where(den == 0, 1.0, den))
            tree.value = vals[:, None]
            update[:, k] = vals[leaves]
            stage.append(tree)
        f = f + learning_rate * update
        deviance.append(_deviance(y1h, f))
        all_stages.append(stage)
    return GbtModel(init, all_stages, learning_rate, x.shape[1], np.array(deviance))


# --- logistic regression -----------------------------------------------------

@dataclass
class LogisticModel(Model):
    weights: np.ndarray  # (C, d)
    bias: np.ndarray
    n_features: int
    kind: str = "lr"

    def predict_proba(self, x):
        x = self._check(x)
        return _softmax(nn.affine_rowstable(x, self.weights, self.bias))

    def state(self):
        return {"kind": self.kind, "weights": self.weights, "bias": self.bias, "n_features": self.n_features}

    @classmethod
    def from_state(cls, s):
        return cls(np.asarray(s["weights"], float), np.asarray(s["bias"], float), int(s["n_features"]))


def train_logistic(x, y, n_classes=3, l1=1e-3, iterations=500):
    """Multinomial logistic regression with an L1 penalty on the weights
    (bias unpenalized), fitted by proximal gradient descent with step 1/L."""
    x, y = _check_training_set(x, y, n_classes)
    n, d = x.shape
    y1h = _one_hot(y, n_classes)
    xa = np.hstack([x, np.ones((n, 1))])
    # softmax cross-entropy gradient is Lipschitz with constant <= 0.5 * lambda_max(X^T X / n)
    lip = 0.5 * float(np.linalg.eigvalsh(xa.T @ xa / n)[-1])
    step = 1.0 / max(lip, 1e-12)
    w = np.zeros((n_classes, d))
    b = np.zeros(n_classes)
    for _ in range(iterations):
        p = _softmax(x @ w.T + b)
        g = (p - y1h) / n
        w = w - step * (g.T @ x)
        b = b - step * g.sum(axis=0)
        w = np.sign(w) * np.maximum(np.abs(w) - step * l1, 0.0)
    return LogisticModel(w, b, d)


# --- random forest -----------------------------------------------------------

@dataclass
class ForestModel(Model):
    trees: list
    n_features: int
    n_classes: int
    kind: str = "rf"

    def predict_proba(self, x):
        x = self._check(x)
        return np.mean([t.predict_value(x) for t in self.trees], axis=0)

    def state(self):
        return {"kind": self.kind, "n_features": self.n_features, "n_classes": self.n_classes,
                "trees": pack_trees(self.trees)}

    @classmethod
    def from_state(cls, s):
        return cls(unpack_trees(s["trees"]), int(s["n_features"]), int(s["n_classes"]))


def train_forest(x, y, n_classes=3, n_trees=10, max_depth=None, max_features="sqrt",
                 bootstrap=True, seed=0):
    x, y = _check_training_set(x, y, n_classes)
    n, d = x.shape
    if max_features == "sqrt":
        m = max(1, int(np.sqrt(d)))
    elif max_features in (None, "all"):
        m = None
    else:
        m = int(max_features)
    trees = []
    for t in range(n_trees):
        rng = np.random.default_rng([seed, t])
        if bootstrap:
            counts = np.bincount(rng.integers(0, n, n), minlength=n)
            keep = counts > 0
            xt, yt, wt = x[keep], y[keep], counts[keep].astype(float)
        else:
            xt, yt, wt = x, y, None
        trees.append(build_tree(xt, yt, "gini", max_depth=max_depth, sample_weight=wt,
                                max_features=m, rng=rng, n_classes=n_classes))
    return ForestModel(trees, d, n_classes)


# --- AdaBoost (SAMME) --------------------------------------------------------

@dataclass
class AdaBoostModel(Model):
    stumps: list
    alphas: np.ndarray
    n_features: int
    n_classes: int
    kind: str = "adaboost"

    def decision_function(self, x):
        x = self._check(x)
        scores = np.zeros((x.shape[0], self.n_classes))
        for stump, a in zip(self.stumps, self.alphas):
            pred = np.argmax(stump.predict_value(x), axis=1)
            scores[np.arange(x.shape[0]), pred] += a
        return scores / max(self.alphas.sum(), 1e-300)

    def predict_proba(self, x):
        return _softmax(self.decision_function(x) / (self.n_classes - 1))

    def state(self):
        return {"kind": self.kind, "alphas": self.alphas, "n_features": self.n_features,
                "n_classes": self.n_classes, "stumps": pack_trees(self.stumps)}

    @classmethod
    def from_state(cls, s):
        return cls(unpack_trees(s["stumps"]), np.asarray(s["alphas"], float),
                   int(s["n_features"]), int(s["n_classes"]))


def train_adaboost(x, y, n_classes=3, n_estimators=100, learning_rate=1.0, max_depth=1):
    x, y = _check_training_set(x, y, n_classes)
    n = x.shape[0]
    w = np.full(n, 1.0 / n)
    stumps, alphas = [], []
    for _ in range(n_estimators):
        stump = build_tree(x, y, "gini", max_depth=max_depth, sample_weight=w, n_classes=n_classes)
        miss = np.argmax(stump.predict_value(x), axis=1) != y
        err = float(w[miss].sum() / w.sum())
        if err >= 1.0 - 1.0 / n_classes:
            if not stumps:  # keep one learner so the model can still predict
                stumps.append(stump)
                alphas.append(1.0)
            break
        if err <= 0.0:
            # a perfect learner: finite weight that dominates, then stop
            stumps.append(stump)
            alphas.append(learning_rate * (np.log((1.0 - 1e-10) / 1e-10) + np.log(n_classes - 1.0)))
            break
        alpha = learning_rate * (np.log((1.0 - err) / err) + np.log(n_classes - 1.0))
        stumps.append(stump)
        alphas.append(alpha)
        w = w * np.exp(alpha * miss)
        w /= w.sum()
    return AdaBoostModel(stumps, np.array(alphas), x.shape[1], n_classes)


# --- MLP ---------------------------------------------------------------------

@dataclass
class MlpModel(Model):
    net: nn.MlpNetwork
    n_features: int
    loss_curve: np.ndarray = field(default=None)
    kind: str = "nn"

    def predict_proba(self, x):
        x = self._check(x)
        return nn.predict_output(self.net, x)

    def state(self):
        return {"kind": self.kind, "n_features": self.n_features, "net": self.net.state(),
                "loss_curve": self.loss_curve}

    @classmethod
    def from_state(cls, s):
        return cls(nn.MlpNetwork.from_state(s["net"]), int(s["n_features"]),
                   np.asarray(s["loss_curve"], float))


def train_mlp(x, y, n_classes=3, hidden=(64, 16), epochs=300, batch_size=32, learning_rate=0.05,
              patience=30, tolerance=1e-6, seed=0):
    x, y = _check_training_set(x, y, n_classes)
    sizes = [x.shape[1], *hidden, n_classes]
    net = nn.init_network(sizes, seed, mirrored=False, output="softmax")
    cfg = nn.TrainConfig(epochs, batch_size, learning_rate, seed, patience, tolerance)
    net, curve = nn.train(net, x, cfg, targets=_one_hot(y, n_classes))
    return MlpModel(net, x.shape[1], curve)


KINDS = {"gbt": GbtModel, "lr": LogisticModel, "rf": ForestModel, "adaboost": AdaBoostModel, "nn": MlpModel}


def train_classifier(kind, x, y, n_classes, cfg, seed=0):
    """Dispatch on ``kind`` with the matching section of the classifier config."""
    if kind == "gbt":
        c = cfg.gbt
        return train_gbt(x, y, n_classes, c.stages, c.learning_rate, c.max_depth, seed)
    if kind == "lr":
        c = cfg.lr
        return train_logistic(x, y, n_classes, c.l1, c.iterations)
    if kind == "rf":
        c = cfg.rf
        return train_forest(x, y, n_classes, c.n_trees, c.max_depth, c.max_features, c.bootstrap, seed)
    if kind == "adaboost":
        c = cfg.adaboost
        return train_adaboost(x, y, n_classes, c.n_estimators, c.learning_rate, c.max_depth)
    if kind == "nn":
        c = cfg.nn
        return train_mlp(x, y, n_classes, tuple(c.hidden), c.epochs, c.batch_size, c.learning_rate,
                         c.patience, c.tolerance, seed)
    raise UnknownKind(f"unknown classifier kind {kind!r}")


def train_baseline(kind, x, y, n_classes, cfg, seed=0):
    if kind not in ("lr", "rf", "adaboost", "nn"):
        raise UnknownKind(f"unknown baseline kind {kind!r}")
    return train_classifier(kind, x, y, n_classes, cfg, seed)


def model_from_state(state):
    try:
        cls = KINDS[state["kind"]]
    except KeyError:
        raise UnknownKind(f"unknown classifier kind {state.get('kind')!r}") from None
    return cls.from_state(state)


def predict(model, x):
    """Return ``(class indices, probabilities)``."""
    proba = model.predict_proba(x)
    return np.argmax(proba, axis=1), proba
