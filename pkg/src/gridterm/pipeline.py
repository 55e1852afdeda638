"""End-to-end train / predict over captures.

Stages: ingest, assemble flows, drop short connections, segment, extract
features, standardize, embed segment behavior with the autoencoder, cluster
segments, encode cluster presence per flow, classify.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autoencoder as nn
from . import clustering, persist
from .behavior import N_BEHAVIOR_DIMS, behavior_columns
from .classifier import build_input, input_columns, model_from_state, predict, train_classifier
from .config import CLASSES, config_hash, from_dict, to_dict
from .errors import DimensionMismatch, EmptyInput, GridtermError, ModelError, SingleClass
from .features import N_STAT, STAT_FEATURES, Standardizer, extract, fit_standardizer, write_matrix
from .flows import UNLABELED, assemble_flows, filter_long_connections, segment_flow
from .metrics import evaluate
from .pcap import ingest_file

log = logging.getLogger(__name__)


def _stage(name, fn, *args, **kwargs):
    """Run one stage, tagging any library error with the stage name."""
    try:
        return fn(*args, **kwargs)
    except GridtermError as e:
        if e.stage is None:
            e.stage = name
        raise


@dataclass
class Capture:
    features: list  # FlowFeatures of the long flows, sorted by flow key
    ingest: dict
    filter: dict
    origin: float = None

    @property
    def flow_ids(self):
        return [f.flow_id for f in self.features]

    @property
    def labels(self):
        return [f.label for f in self.features]


def load_capture(pcap_path, cfg, labels=None):
    """Ingest a capture and extract features for every long connection.

    Segments share one grid anchored at the earliest record of the capture.
    """
    table = cfg.behavior_table()
    packets, stats = _stage("ingest", ingest_file, pcap_path, table)
    flows = _stage("flows", assemble_flows, packets, labels)
    kept, _, fstats = filter_long_connections(flows, cfg.capture.min_duration, cfg.capture.observation_window)
    origin = stats.first_ts
    n_seg = cfg.n_segments

    def segment_all():
        return [extract(f, segment_flow(f, cfg.capture.tau, n_seg, origin)) for f in kept]

    feats = _stage("segment", segment_all)
    log.info("%s: %d records, %d tcp packets, %d flows, %d long", pcap_path, stats.records,
             stats.tcp_packets, len(flows), len(kept))
    return Capture(feats, stats.to_dict(), fstats, origin)


def stratified_split(labels, flow_ids, fractions, seed):
    """Per class: order by flow id, shuffle with ``seed``, cut by fractions.

    Returns index arrays ``(train, validation, test)``.
    """
    rng = np.random.default_rng(seed)
    out = ([], [], [])
    labels = np.asarray(labels)
    for c in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == c)
        idx = idx[np.argsort([flow_ids[i] for i in idx], kind="stable")]
        idx = idx[rng.permutation(len(idx))]
        n_train = int(round(fractions[0] * len(idx)))
        n_val = int(round(fractions[1] * len(idx)))
        if fractions[2] == 0:
            n_val = len(idx) - n_train
        out[0].extend(idx[:n_train])
        out[1].extend(idx[n_train:n_train + n_val])
        out[2].extend(idx[n_train + n_val:])
    return tuple(np.sort(np.array(o, dtype=np.int64)) for o in out)


@dataclass
class Representation:
    """Everything between raw features and the classifier input."""

    flow_std: Standardizer
    tf_std: Standardizer = None
    bf_std: Standardizer = None
    autoencoder: nn.MlpNetwork = None
    cluster: object = None
    k: int = 0
    flow_features_only: bool = False
    info: dict = field(default_factory=dict)

    @property
    def input_dim(self):
        return N_STAT if self.flow_features_only else self.k + 1 + N_STAT

    def columns(self):
        return input_columns(self.k, STAT_FEATURES, self.flow_features_only)

    def segment_rows(self, feats):
        """Standardized H rows for every non-empty segment, tagged by flow position."""
        tf = [f.seg_stat for f in feats]
        masks = [f.empty for f in feats]
        bf_rows = [f.seg_behavior[~f.empty] for f in feats]
        flat = np.vstack(bf_rows) if feats else np.zeros((0, N_BEHAVIOR_DIMS))
        if flat.shape[0]:
            emb_flat = nn.encode(self.autoencoder, self.bf_std.apply(flat))
        else:
            emb_flat = np.zeros((0, self.autoencoder.sizes[self.autoencoder.n_encoder]))
        cuts = np.cumsum([len(r) for r in bf_rows])[:-1]
        emb = np.split(emb_flat, cuts) if feats else []
        tf_std = [self.tf_std.apply(t) if len(t) else t for t in tf]
        return clustering.build_segment_matrix(tf_std, emb, masks)

    def transform(self, feats):
        x_ff = self.flow_std.apply(np.array([f.flow for f in feats]).reshape(len(feats), N_STAT))
        if self.flow_features_only:
            return x_ff
        h, index = self.segment_rows(feats)
        z = clustering.assign_clusters(self.cluster, h) if len(h) else np.zeros(0, np.int64)
        x_se = clustering.segment_embeddings(z, index, [f.empty for f in feats], self.k)
        return build_input(x_se, x_ff)

    def state(self):
        s = {"flow_std": self.flow_std.state(), "k": self.k, "flow_features_only": self.flow_features_only}
        if not self.flow_features_only:
            s.update(tf_std=self.tf_std.state(), bf_std=self.bf_std.state(),
                     autoencoder=self.autoencoder.state(), cluster=self.cluster.state())
        return s

    @classmethod
    def from_state(cls, s):
        if s["flow_features_only"]:
            return cls(Standardizer.from_state(s["flow_std"]), k=int(s["k"]), flow_features_only=True)
        return cls(Standardizer.from_state(s["flow_std"]), Standardizer.from_state(s["tf_std"]),
                   Standardizer.from_state(s["bf_std"]), nn.MlpNetwork.from_state(s["autoencoder"]),
                   clustering.cluster_model_from_state(s["cluster"]), int(s["k"]), False)


def fit_representation(feats, cfg, flow_features_only=False):
    """Fit standardizers, autoencoder and clusters on ``feats`` (the training flows)."""
    if not feats:
        raise EmptyInput("no training flows")
    x_ff = np.array([f.flow for f in feats])
    flow_std = fit_standardizer(x_ff)
    k = cfg.cluster.k
    if flow_features_only:
        return Representation(flow_std, k=k, flow_features_only=True)
    tf = np.vstack([f.seg_stat[~f.empty] for f in feats])
    bf = np.vstack([f.seg_behavior[~f.empty] for f in feats])
    if tf.shape[0] == 0:
        raise EmptyInput("training flows have no non-empty segments")
    tf_std = fit_standardizer(tf)
    bf_std = fit_standardizer(bf)
    a = cfg.autoencoder
    net = nn.init_network(nn.autoencoder_sizes(N_BEHAVIOR_DIMS, tuple(a.hidden)), cfg.seed)
    tcfg = nn.TrainConfig(a.epochs, a.batch_size, a.learning_rate, cfg.seed, a.early_stop_patience, a.tolerance)
    net, curve = _stage("autoencoder", nn.train, net, bf_std.apply(bf), tcfg)
    rep = Representation(flow_std, tf_std, bf_std, net, None, k, False)
    h, _ = rep.segment_rows(feats)
    c = cfg.cluster
    rep.cluster = _stage("cluster", clustering.fit_clusters, h, c.kind, k, cfg.seed, c.max_iter, c.tol,
                         c.em_iters, c.var_floor)
    rep.info = {
        "segments": int(h.shape[0]),
        "segment_dim": int(h.shape[1]),
        "autoencoder_epochs": int(len(curve)),
        "autoencoder_loss": [float(v) for v in curve],
    }
    if c.kind == "kmeans":
        rep.info["inertia_history"] = [float(v) for v in rep.cluster.inertia_history]
    else:
        rep.info["log_likelihood"] = [float(v) for v in rep.cluster.log_likelihood]
    return rep


@dataclass
class TrainedPipeline:
    config: object
    representation: Representation
    classifier: object
    classes: tuple = CLASSES
    train_flow_ids: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)

    @property
    def config_hash(self):
        return config_hash(self.config)

    def predict_features(self, feats):
        if not feats:
            return np.zeros(0, np.int64), np.zeros((0, len(self.classes)))
        x = self.representation.transform(feats)
        if x.shape[1] != self.classifier.n_features:
            raise DimensionMismatch(f"input has {x.shape[1]} columns, classifier expects {self.classifier.n_features}")
        return predict(self.classifier, x)

    def save(self, path):
        state = {
            "classes": list(self.classes),
            "representation": self.representation.state(),
            "classifier": self.classifier.state(),
            "train_flow_ids": list(self.train_flow_ids),
        }
        header = {"config_hash": self.config_hash, "config": to_dict(self.config), "metrics": self.metrics}
        persist.save(path, state, header)

    @classmethod
    def load(cls, path):
        header, state = persist.load(path)
        try:
            cfg = from_dict(header["config"])
            return cls(cfg, Representation.from_state(state["representation"]),
                       model_from_state(state["classifier"]), tuple(state["classes"]),
                       list(state["train_flow_ids"]), header.get("metrics", {}))
        except (KeyError, TypeError, ValueError) as e:
            raise ModelError(f"artifact is missing or has malformed field: {e}") from None


def train_pipeline(capture, cfg, kinds=None):
    """Fit on the training split of ``capture``.

    Returns ``(pipelines, report)``; with several classifier ``kinds`` the
    representation is fitted once and shared.
    """
    cfg = cfg.resolved()
    kinds = list(kinds or [cfg.classifier.kind])
    feats = [f for f in capture.features if f.label != UNLABELED]
    n_unlabeled = len(capture.features) - len(feats)
    if n_unlabeled:
        log.warning("%d long flows have no label and are ignored for training", n_unlabeled)
    if not feats:
        raise EmptyInput("no labeled long-connection flows in the capture")
    labels = [f.label for f in feats]
    if len(set(labels)) < 2:
        raise SingleClass(f"labeled flows cover a single class: {labels[0]}")
    classes = CLASSES
    y = np.array([classes.index(c) for c in labels])
    s = cfg.split
    parts = stratified_split(labels, [f.flow_id for f in feats], (s.train, s.validation, s.test), cfg.seed)
    tr = parts[0]
    fit_on = feats if cfg.standardize.scope == "all" else [feats[i] for i in tr]
    ffo = cfg.classifier.flow_features_only
    rep = fit_representation(fit_on, cfg, ffo)
    x = _stage("input", rep.transform, feats)
    pipelines = {}
    report = {
        "config_hash": config_hash(cfg),
        "config": to_dict(cfg),
        "ingest": capture.ingest,
        "filter": capture.filter,
        "split": {name: {c: int(sum(labels[i] == c for i in p)) for c in classes}
                  for name, p in zip(("train", "validation", "test"), parts)},
        "input_dim": int(x.shape[1]),
        "input_columns": rep.columns(),
        "representation": rep.info,
        "models": {},
    }
    for kind in kinds:
        model = _stage("classifier", train_classifier, kind, x[tr], y[tr], len(classes), cfg.classifier, cfg.seed)
        metrics = {}
        for name, p in zip(("train", "validation", "test"), parts):
            if len(p) == 0:
                continue
            pred, _ = predict(model, x[p])
            rep_m = evaluate([labels[i] for i in p], [classes[j] for j in pred], classes,
                             cfg.classifier.literal_accuracy)
            metrics[name] = rep_m.to_dict()
        kcfg = from_dict(to_dict(cfg))
        kcfg.classifier.kind = kind
        pipelines[kind] = TrainedPipeline(kcfg, rep, model, classes, [feats[i].flow_id for i in tr], metrics)
        entry = {"metrics": metrics}
        if kind == "gbt":
            entry["deviance"] = [float(v) for v in model.deviance]
        if kind == "nn":
            entry["loss_curve"] = [float(v) for v in model.loss_curve]
        report["models"][kind] = entry
    return pipelines, report


def prediction_rows(pipeline, capture):
    """``(flow_id, true_label, predicted, p_<class>...)`` per long flow."""
    idx, proba = pipeline.predict_features(capture.features)
    rows = []
    for f, j, p in zip(capture.features, idx, proba):
        rows.append((f.flow_id, f.label, pipeline.classes[j], *[float(v) for v in p]))
    return rows


def export_tables(pipeline, capture, out_dir, report=None):
    """Delimited debugging exports for the flows in ``capture``.

    Raw flow and segment features, the classifier input matrix, per-segment
    cluster assignments and the autoencoder loss curve. Returns the paths.
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    feats = capture.features
    rep = pipeline.representation
    note = f"config_hash={pipeline.config_hash}"
    ids = [(f.flow_id,) for f in feats]
    paths = {}

    def path(name):
        paths[name] = os.path.join(out_dir, f"{name}.csv")
        return paths[name]

    write_matrix(path("flow_features"), STAT_FEATURES, [f.flow for f in feats], ids, comment=note)
    seg_rows, seg_ids = [], []
    for f in feats:
        for j in range(len(f.empty)):
            seg_rows.append(np.concatenate([f.seg_stat[j], f.seg_behavior[j]]))
            seg_ids.append((f.flow_id, j + 1))
    write_matrix(path("segment_features"), [f"seg_{c}" for c in STAT_FEATURES] + behavior_columns(),
                 seg_rows, seg_ids, ("flow_id", "segment_index"), comment=note)
    x = rep.transform(feats) if feats else np.zeros((0, rep.input_dim))
    write_matrix(path("input_matrix"), rep.columns(), x, ids, comment=note)
    if not rep.flow_features_only:
        h, index = rep.segment_rows(feats)
        z = clustering.assign_clusters(rep.cluster, h) if len(h) else np.zeros(0, np.int64)
        with open(path("segment_assignments"), "w", encoding="utf-8") as fh:
            fh.write(f"# {note}\nflow_id,segment_index,cluster\n")
            for (i, s), c in zip(index, z):
                fh.write(f"{feats[i].flow_id},{s},{c}\n")
    curve = (report or {}).get("representation", {}).get("autoencoder_loss")
    if curve:
        with open(path("autoencoder_loss"), "w", encoding="utf-8") as fh:
            fh.write(f"# {note}\nepoch,loss\n")
            for e, v in enumerate(curve, 1):
                fh.write(f"{e},{v!r}\n")
    return paths
