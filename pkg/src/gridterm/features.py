"""Flow-level and segment-level feature vectors, plus standardization."""

import csv
from dataclasses import dataclass

import numpy as np

from .behavior import N_BEHAVIOR_DIMS, behavior_columns
from .errors import DimensionMismatch, EmptyInput

STAT_FEATURES = (
    "packet_count_send", "packet_count_recv", "count_ratio",
    "size_sum_send", "size_sum_recv",
    "size_mean_send", "size_mean_recv",
    "size_std_send", "size_std_recv",
    "size_sum_ratio",
    "size_range_send", "size_range_recv",
    "iat_mean_send", "iat_mean_recv",
    "iat_std_send", "iat_std_recv",
)
N_STAT = len(STAT_FEATURES)  # 16
BEHAVIOR_FEATURES = tuple(behavior_columns())


def _direction_stats(ts, size):
    """count, sum, mean, std, range of sizes; mean and std of inter-arrival gaps."""
    n = len(size)
    if n == 0:
        return 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    total = float(size.sum())
    mean = total / n
    std = float(np.sqrt(np.mean((size - mean) ** 2)))
    rng = float(size.max() - size.min())
    if n < 2:
        return float(n), total, mean, std, rng, 0.0, 0.0
    gaps = np.diff(ts)
    return float(n), total, mean, std, rng, float(gaps.mean()), float(gaps.std())


def stat_vector(arrays):
    """The 16 statistical features over whatever packets ``arrays`` holds."""
    send = arrays.send
    s = _direction_stats(arrays.ts[send], arrays.size[send])
    r = _direction_stats(arrays.ts[~send], arrays.size[~send])
    return np.array([
        s[0], r[0], s[0] / max(r[0], 1.0),
        s[1], r[1],
        s[2], r[2],
        s[3], r[3],
        s[1] / max(r[1], 1.0),
        s[4], r[4],
        s[5], r[5],
        s[6], r[6],
    ])


def behavior_vector(arrays):
    """Per-direction counts of behavior states (ZERO included); sums to the packet count."""
    col = arrays.code * 2 + (~arrays.send).astype(np.int64)
    return np.bincount(col, minlength=N_BEHAVIOR_DIMS).astype(float)


def flow_features(flow):
    return stat_vector(flow.arrays)


def segment_features(segment):
    """Return ``(stat_vector, behavior_vector, empty)`` for one segment."""
    if segment.empty:
        return np.zeros(N_STAT), np.zeros(N_BEHAVIOR_DIMS), True
    arrays = segment.arrays
    return stat_vector(arrays), behavior_vector(arrays), False


@dataclass
class FlowFeatures:
    """Everything the model consumes for one flow."""

    flow_id: str
    label: str
    flow: np.ndarray  # (16,)
    seg_stat: np.ndarray  # (L, 16)
    seg_behavior: np.ndarray  # (L, 30)
    empty: np.ndarray  # (L,) bool


def extract(flow, segments):
    rows = [segment_features(s) for s in segments]
    return FlowFeatures(
        flow.flow_id,
        flow.label,
        flow_features(flow),
        np.array([r[0] for r in rows]).reshape(len(rows), N_STAT),
        np.array([r[1] for r in rows]).reshape(len(rows), N_BEHAVIOR_DIMS),
        np.array([r[2] for r in rows], dtype=bool),
    )


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @property
    def fitted_dim(self):
        return len(self.mean)

    @property
    def scale(self):
        return np.where(self.std > 0, self.std, 1.0)

    def apply(self, rows):
        return apply_standardizer(self, rows)

    def state(self):
        return {"mean": self.mean, "std": self.std}

    @classmethod
    def from_state(cls, state):
        return cls(np.asarray(state["mean"], float), np.asarray(state["std"], float))


def fit_standardizer(rows):
    rows = np.asarray(rows, float)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise EmptyInput("standardizer needs at least one row")
    mean = rows.mean(axis=0)
    std = np.sqrt(((rows - mean) ** 2).mean(axis=0))
    return Standardizer(mean, std)


def apply_standardizer(std, rows):
    rows = np.asarray(rows, float)
    if rows.ndim != 2 or rows.shape[1] != std.fitted_dim:
        raise DimensionMismatch(f"expected {std.fitted_dim} columns, got shape {rows.shape}")
    return (rows - std.mean) / std.scale


def write_matrix(path, columns, rows, index=None, index_names=("flow_id",), comment=None):
    """Delimited export with a header row; optional leading ``# ...`` comment line."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(list(index_names if index is not None else ()) + list(columns))
        for i, row in enumerate(rows):
            lead = list(index[i]) if index is not None else []
            w.writerow(lead + [repr(float(v)) for v in row])
