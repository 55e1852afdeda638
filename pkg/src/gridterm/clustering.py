"""Segment clustering (k-means++ / Lloyd, diagonal GMM) and cluster-presence encoding."""

from dataclasses import dataclass

import numpy as np

from .errors import (
    AlignmentError,
    DegenerateComponent,
    DimensionMismatch,
    IndexOutOfRange,
    TooFewRows,
    UnknownKind,
)

_CHUNK = 2048


def build_segment_matrix(tf_rows, be_rows, empty_masks):
    """Concatenate standardized segment statistics with behavior embeddings.

    ``tf_rows[n]`` is the flow's (L, P) statistics matrix, ``be_rows[n]`` its
    (non-empty, V) embeddings and ``empty_masks[n]`` its (L,) empty flags.
    Returns ``(H, index)`` where ``index[u] = (flow_position, segment_index)``
    with 1-based segment indices.
    """
    if not (len(tf_rows) == len(be_rows) == len(empty_masks)):
        raise AlignmentError("tf rows, embeddings and masks cover different numbers of flows")
    blocks, index = [], []
    for n, (tf, be, mask) in enumerate(zip(tf_rows, be_rows, empty_masks)):
        mask = np.asarray(mask, bool)
        tf = np.asarray(tf, float)
        be = np.asarray(be, float)
        if tf.shape[0] != mask.shape[0]:
            raise AlignmentError(f"flow {n}: {tf.shape[0]} stat rows for {mask.shape[0]} segments")
        keep = np.flatnonzero(~mask)
        if be.shape[0] != keep.size:
            raise AlignmentError(f"flow {n}: {be.shape[0]} embeddings for {keep.size} non-empty segments")
        if keep.size:
            blocks.append(np.hstack([tf[keep], be.reshape(keep.size, -1)]))
            index.extend((n, int(l) + 1) for l in keep)
    if not blocks:
        width = 0
        if len(tf_rows):
            width = np.shape(tf_rows[0])[-1] + (np.shape(be_rows[0])[-1] if np.ndim(be_rows[0]) == 2 else 0)
        return np.zeros((0, width)), np.zeros((0, 2), dtype=np.int64)
    return np.vstack(blocks), np.array(index, dtype=np.int64)


def sq_dists(x, centers):
    """Squared Euclidean distances, computed per coordinate (exact ties stay ties)."""
    out = np.empty((x.shape[0], centers.shape[0]))
    for i in range(0, x.shape[0], _CHUNK):
        diff = x[i:i + _CHUNK, None, :] - centers[None, :, :]
        out[i:i + _CHUNK] = (diff * diff).sum(axis=2)
    return out


@dataclass
class KMeansModel:
    centroids: np.ndarray
    inertia: float
    inertia_history: np.ndarray
    n_iter: int
    seed: int
    kind: str = "kmeans"

    @property
    def k(self):
        return self.centroids.shape[0]

    @property
    def dim(self):
        return self.centroids.shape[1]

    def assign(self, rows):
        return np.argmin(sq_dists(rows, self.centroids), axis=1)

    def state(self):
        return {"kind": self.kind, "centroids": self.centroids, "inertia": self.inertia,
                "inertia_history": self.inertia_history, "n_iter": self.n_iter, "seed": self.seed}


@dataclass
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood: np.ndarray  # per EM iteration, plus the final parameters
    seed: int
    var_floor: float = 1e-6
    kind: str = "gmm"

    @property
    def k(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    def log_joint(self, rows):
        """log(weight_k) + log N(x | mean_k, diag var_k), shape (U, K)."""
        const = -0.5 * np.sum(np.log(2.0 * np.pi * self.variances), axis=1)
        out = np.empty((rows.shape[0], self.k))
        for i in range(0, rows.shape[0], _CHUNK):
            diff = rows[i:i + _CHUNK, None, :] - self.means[None, :, :]
            out[i:i + _CHUNK] = -0.5 * (diff * diff / self.variances[None]).sum(axis=2)
        return out + const + np.log(self.weights)

    def responsibilities(self, rows):
        lj = self.log_joint(rows)
        norm = _logsumexp(lj)
        return np.exp(lj - norm[:, None]), float(norm.sum())

    def assign(self, rows):
        return np.argmax(self.log_joint(rows), axis=1)

    def state(self):
        return {"kind": self.kind, "weights": self.weights, "means": self.means,
                "variances": self.variances, "log_likelihood": self.log_likelihood,
                "seed": self.seed, "var_floor": self.var_floor}


def cluster_model_from_state(state):
    if state["kind"] == "kmeans":
        return KMeansModel(np.asarray(state["centroids"], float), float(state["inertia"]),
                           np.asarray(state["inertia_history"], float), int(state["n_iter"]),
                           int(state["seed"]))
    if state["kind"] == "gmm":
        return GmmModel(np.asarray(state["weights"], float), np.asarray(state["means"], float),
                        np.asarray(state["variances"], float),
                        np.asarray(state["log_likelihood"], float), int(state["seed"]),
                        float(state["var_floor"]))
    raise UnknownKind(f"unknown cluster model kind {state['kind']!r}")


def _logsumexp(a):
    m = a.max(axis=1)
    return m + np.log(np.exp(a - m[:, None]).sum(axis=1))


def kmeanspp_init(x, k, rng):
    n = x.shape[0]
    centers = [int(rng.integers(n))]
    d2 = sq_dists(x, x[centers[0]][None])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            nxt = int(rng.integers(n))
        centers.append(nxt)
        d2 = np.minimum(d2, sq_dists(x, x[nxt][None])[:, 0])
    return x[centers].copy()


def fit_kmeans(h, k, seed=0, max_iter=300, tol=1e-4, init=None):
    """k-means++ seeding then Lloyd iterations.

    ``inertia_history[0]`` is the inertia of the seeding assignment; every
    later entry follows one update step and can only be lower or equal.
    """
    h = np.asarray(h, float)
    if h.ndim != 2 or h.shape[0] < k or k < 1:
        raise TooFewRows(f"k-means with K={k} needs at least K rows, got {h.shape[0]}")
    rng = np.random.default_rng(seed)
    centroids = kmeanspp_init(h, k, rng) if init is None else np.array(init, float)
    d = sq_dists(h, centroids)
    labels = np.argmin(d, axis=1)
    best = d[np.arange(len(h)), labels]
    history = [float(best.sum())]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        new = np.empty_like(centroids)
        counts = np.bincount(labels, minlength=k)
        for j in range(k):
            if counts[j]:
                new[j] = h[labels == j].mean(axis=0)
        empties = np.flatnonzero(counts == 0)
        if empties.size:
            # reseed from the points worst served by their (updated) centroid
            full = counts > 0
            far = np.where(full[labels], ((h - new[labels]) ** 2).sum(axis=1), -1.0)
            for j in empties:
                i = int(np.argmax(far))
                new[j] = h[i]
                far[i] = -1.0
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        d = sq_dists(h, centroids)
        labels = np.argmin(d, axis=1)
        best = d[np.arange(len(h)), labels]
        history.append(float(best.sum()))
        if shift < tol:
            break
    return KMeansModel(centroids, history[-1], np.array(history), n_iter, int(seed))


def fit_gmm(h, k, em_iters=50, seed=0, var_floor=1e-6, kmeans_iter=300, kmeans_tol=1e-4):
    """Diagonal-covariance EM, started from a k-means partition."""
    h = np.asarray(h, float)
    if h.ndim != 2 or h.shape[0] < k or k < 1:
        raise TooFewRows(f"GMM with K={k} needs at least K rows, got {h.shape[0]}")
    km = fit_kmeans(h, k, seed, kmeans_iter, kmeans_tol)
    labels = km.assign(h)
    resp = np.zeros((h.shape[0], k))
    resp[np.arange(h.shape[0]), labels] = 1.0
    model = GmmModel(np.full(k, 1.0 / k), km.centroids.copy(), np.ones_like(km.centroids),
                     np.zeros(0), int(seed), var_floor)
    _m_step(model, h, resp)
    lls = []
    for _ in range(em_iters):
        resp, ll = model.responsibilities(h)
        lls.append(ll)
        _m_step(model, h, resp)
    lls.append(model.responsibilities(h)[1])
    model.log_likelihood = np.array(lls)
    return model


def _m_step(model, h, resp):
    nk = resp.sum(axis=0)
    weights = nk / h.shape[0]
    if np.any(weights < 1e-12):
        j = int(np.argmin(weights))
        raise DegenerateComponent(f"mixture component {j} has weight {weights[j]:.3g}; K too large for the data")
    means = (resp.T @ h) / nk[:, None]
    var = np.empty_like(means)
    for j in range(model.k):
        diff = h - means[j]
        var[j] = (resp[:, j] @ (diff * diff)) / nk[j]
    model.weights = weights / weights.sum()
    model.means = means
    model.variances = np.maximum(var, model.var_floor)


def fit_clusters(h, kind, k, seed=0, max_iter=300, tol=1e-4, em_iters=50, var_floor=1e-6):
    if kind == "kmeans":
        return fit_kmeans(h, k, seed, max_iter, tol)
    if kind == "gmm":
        return fit_gmm(h, k, em_iters, seed, var_floor, max_iter, tol)
    raise UnknownKind(f"unknown cluster kind {kind!r}")


def assign_clusters(model, rows):
    rows = np.asarray(rows, float)
    if rows.ndim == 1:
        rows = rows[None]
    if rows.shape[1] != model.dim:
        raise DimensionMismatch(f"cluster model expects {model.dim}-dim rows, got {rows.shape[1]}")
    if rows.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return model.assign(rows)


def encode_flow(z, had_empty, k):
    """Multi-hot cluster presence of length K+1; the last bit marks empty segments."""
    z = np.asarray(z, dtype=np.int64)
    if z.size and (z.min() < 0 or z.max() >= k):
        raise IndexOutOfRange(f"cluster index outside [0, {k - 1}]: {z.tolist()}")
    out = np.zeros(k + 1)
    out[z] = 1.0
    if had_empty:
        out[k] = 1.0
    return out


def segment_embeddings(assignments, index, empty_masks, k):
    """Per-flow presence vectors from segment assignments tagged with ``index``."""
    n_flows = len(empty_masks)
    per_flow = [[] for _ in range(n_flows)]
    for z, (n, _) in zip(assignments, index):
        per_flow[n].append(int(z))
    return np.array([encode_flow(per_flow[n], bool(np.any(empty_masks[n])), k)
                     for n in range(n_flows)]).reshape(n_flows, k + 1)
