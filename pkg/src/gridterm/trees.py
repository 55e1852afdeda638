"""Array-backed CART trees.

Two split criteria are supported: ``friedman_mse`` for regression trees fitted
to boosting residuals, and ``gini`` for classification trees. Split
thresholds sit at midpoints between adjacent distinct feature values; a row
goes left when ``x <= threshold``. Ties between equally good splits resolve to
the lowest feature index, then the lowest threshold.
"""

from dataclasses import dataclass

import numpy as np

LEAF = -1


@dataclass
class DecisionTree:
    feature: np.ndarray  # int, LEAF for leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, n_outputs)

    @property
    def n_nodes(self):
        return len(self.feature)

    @property
    def depth(self):
        d = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] != LEAF:
                d[self.left[i]] = d[self.right[i]] = d[i] + 1
        return int(d.max())

    def apply(self, x):
        """Leaf id reached by each row."""
        node = np.zeros(x.shape[0], dtype=np.int64)
        active = self.feature[node] != LEAF
        while active.any():
            rows = np.flatnonzero(active)
            n = node[rows]
            go_left = x[rows, self.feature[n]] <= self.threshold[n]
            node[rows] = np.where(go_left, self.left[n], self.right[n])
            active[rows] = self.feature[node[rows]] != LEAF
        return node

    def predict_value(self, x):
        return self.value[self.apply(x)]

    def state(self):
        return {"feature": self.feature, "threshold": self.threshold, "left": self.left,
                "right": self.right, "value": self.value}

    @classmethod
    def from_state(cls, s):
        return cls(np.asarray(s["feature"], np.int64), np.asarray(s["threshold"], float),
                   np.asarray(s["left"], np.int64), np.asarray(s["right"], np.int64),
                   np.asarray(s["value"], float))


def _best_split(xs, cum, total, n_min_leaf, score_fn):
    """Scan sorted columns. ``cum`` holds cumulative sufficient statistics, one
    trailing axis per statistic, shape (n, f, s)."""
    n = xs.shape[0]
    if n < 2:
        return None
    left = cum[:-1]
    right = total[None, None, :] - left
    score = score_fn(left, right)  # (n-1, f)
    counts = np.arange(1, n)[:, None]
    valid = (xs[:-1] < xs[1:]) & (counts >= n_min_leaf) & (n - counts >= n_min_leaf)
    score = np.where(valid, score, -np.inf)
    flat = score.T.ravel()  # feature-major so argmax prefers low feature index
    j = int(np.argmax(flat))
    if not np.isfinite(flat[j]):
        return None
    f, i = divmod(j, n - 1)
    return f, i, flat[j]


def _friedman(left, right):
    wl, wyl = left[..., 0], left[..., 1]
    wr, wyr = right[..., 0], right[..., 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        diff = wyl / wl - wyr / wr
        return np.where((wl > 0) & (wr > 0), wl * wr / (wl + wr) * diff * diff, -np.inf)


def _gini_gain(left, right):
    # maximizing sum_c cl^2/Wl + sum_c cr^2/Wr == maximizing the Gini decrease
    wl = left.sum(axis=-1)
    wr = right.sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (left ** 2).sum(axis=-1) / wl + (right ** 2).sum(axis=-1) / wr
    return np.where((wl > 0) & (wr > 0), s, -np.inf)


def build_tree(x, y, criterion, max_depth=None, sample_weight=None, min_samples_split=2,
               min_samples_leaf=1, max_features=None, rng=None, n_classes=None):
    """Grow a tree depth-first.

    ``friedman_mse``: ``y`` real; leaf value = weighted mean.
    ``gini``: ``y`` integer classes in ``[0, n_classes)``; leaf value = class
    distribution. ``max_features`` draws that many candidate features per node
    (requires ``rng``).
    """
    x = np.asarray(x, float)
    n, d = x.shape
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, float)
    if criterion == "friedman_mse":
        stats = np.column_stack([w, w * np.asarray(y, float)])
        score_fn = _friedman
    elif criterion == "gini":
        y = np.asarray(y, np.int64)
        n_classes = int(n_classes if n_classes is not None else y.max() + 1)
        stats = np.zeros((n, n_classes))
        stats[np.arange(n), y] = w
        score_fn = _gini_gain
    else:
        raise ValueError(f"unknown criterion {criterion!r}")

    feature, threshold, left, right, value = [], [], [], [], []

    def leaf_value(idx):
        s = stats[idx].sum(axis=0)
        if criterion == "friedman_mse":
            return np.array([s[1] / s[0]]) if s[0] > 0 else np.zeros(1)
        return s / s.sum() if s.sum() > 0 else np.full(n_classes, 1.0 / n_classes)

    def pure(idx):
        if criterion == "friedman_mse":
            yy = stats[idx, 1] / np.where(stats[idx, 0] > 0, stats[idx, 0], 1.0)
            return np.ptp(yy) == 0
        return np.count_nonzero(stats[idx].sum(axis=0)) <= 1

    def new_node():
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(None)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        value[node] = leaf_value(idx)
        if (max_depth is not None and depth >= max_depth) or len(idx) < min_samples_split or pure(idx):
            continue
        if max_features is not None and max_features < d:
            feats = np.sort(rng.choice(d, max_features, replace=False))
        else:
            feats = np.arange(d)
        xn = x[np.ix_(idx, feats)]
        order = np.argsort(xn, axis=0, kind="stable")
        xs = np.take_along_axis(xn, order, axis=0)
        st = stats[idx][order]  # (n, f, s)
        cum = np.cumsum(st, axis=0)
        found = _best_split(xs, cum, cum[-1, 0], min_samples_leaf, score_fn)
        if found is None:
            continue
        f, i, _ = found
        lo, hi = xs[i, f], xs[i + 1, f]
        thr = (lo + hi) / 2.0
        if thr >= hi:
            thr = lo
        col = x[idx, feats[f]]
        l_idx, r_idx = idx[col <= thr], idx[col > thr]
        feature[node] = int(feats[f])
        threshold[node] = float(thr)
        l_node, r_node = new_node(), new_node()
        left[node], right[node] = l_node, r_node
        # push right first so the left subtree is numbered first
        stack.append((r_node, r_idx, depth + 1))
        stack.append((l_node, l_idx, depth + 1))

    return DecisionTree(np.array(feature, np.int64), np.array(threshold, float),
                        np.array(left, np.int64), np.array(right, np.int64), np.vstack(value))


def pack_trees(trees):
    """Concatenate many trees into flat arrays plus offsets (for persistence)."""
    sizes = [t.n_nodes for t in trees]
    return {
        "offsets": np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64),
        "feature": np.concatenate([t.feature for t in trees]),
        "threshold": np.concatenate([t.threshold for t in trees]),
        "left": np.concatenate([t.left for t in trees]),
        "right": np.concatenate([t.right for t in trees]),
        "value": np.vstack([t.value for t in trees]),
    }


def unpack_trees(packed):
    off = np.asarray(packed["offsets"], np.int64)
    trees = []
    for a, b in zip(off[:-1], off[1:]):
        trees.append(DecisionTree.from_state({k: np.asarray(packed[k])[a:b]
                                              for k in ("feature", "threshold", "left", "right", "value")}))
    return trees
