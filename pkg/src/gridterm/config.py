"""Pipeline configuration: nested sections read from a TOML file.

Unknown keys are rejected. Defaults follow the published experiment settings
where one exists (tau=300 s, K=15, autoencoder 24/16/8, GMM 15 components with
50 EM iterations, GB 200 stages at learning rate 0.1, RF 10 trees,
AdaBoost 100 learners at rate 1.0, NN hidden 64/16); the rest are ours.
"""

import dataclasses
import hashlib
import json
import sys
import typing
from dataclasses import dataclass, field

from .behavior import BehaviorCodeTable
from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CLASSES = ("LVRC", "TTU", "LMT")


@dataclass
class CaptureConfig:
    tau: float = 300.0
    n_segments: typing.Optional[int] = None  # None: ceil(observation_window / tau)
    observation_window: float = 3600.0
    min_duration: float = 600.0


@dataclass
class BehaviorConfig:
    offset: int = 0
    table: str = ""  # path to a behavior table file; overrides offset/states
    states: dict = field(default_factory=dict)  # inline {state: [codes]}; empty = default table


@dataclass
class StandardizeConfig:
    scope: str = "train"  # "train" | "all" (fit on every labeled flow; leaks, for ablations only)


@dataclass
class AutoencoderConfig:
    hidden: list = field(default_factory=lambda: [24, 16, 8])
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 0.01
    early_stop_patience: int = 20
    tolerance: float = 1e-5


@dataclass
class ClusterConfig:
    kind: str = "kmeans"  # "kmeans" | "gmm"
    k: int = 15
    max_iter: int = 300
    tol: float = 1e-4
    em_iters: int = 50
    var_floor: float = 1e-6


@dataclass
class GbtConfig:
    stages: int = 200
    learning_rate: float = 0.1
    max_depth: int = 3


@dataclass
class LrConfig:
    l1: float = 1e-3
    iterations: int = 500


@dataclass
class RfConfig:
    n_trees: int = 10
    max_depth: typing.Optional[int] = None
    max_features: str = "sqrt"  # "sqrt" | "all"
    bootstrap: bool = True


@dataclass
class AdaBoostConfig:
    n_estimators: int = 100
    learning_rate: float = 1.0
    max_depth: int = 1


@dataclass
class NnConfig:
    hidden: list = field(default_factory=lambda: [64, 16])
    epochs: int = 300
    batch_size: int = 32
    learning_rate: float = 0.05
    patience: int = 30
    tolerance: float = 1e-6


@dataclass
class ClassifierConfig:
    kind: str = "gbt"  # "gbt" | "lr" | "rf" | "adaboost" | "nn"
    flow_features_only: bool = False
    literal_accuracy: bool = False
    gbt: GbtConfig = field(default_factory=GbtConfig)
    lr: LrConfig = field(default_factory=LrConfig)
    rf: RfConfig = field(default_factory=RfConfig)
    adaboost: AdaBoostConfig = field(default_factory=AdaBoostConfig)
    nn: NnConfig = field(default_factory=NnConfig)


@dataclass
class SplitConfig:
    train: float = 0.70
    validation: float = 0.15
    test: float = 0.15


@dataclass
class GeneratorConfig:
    flows_per_class: int = 100
    duration: float = 3600.0
    tau: float = 300.0
    long_fraction: float = 0.861
    hard_mode: bool = False
    udp_noise: int = 10
    start_time: int = 1609751460  # 2021-01-04 17:11 UTC+8
    master_ip: str = "10.0.0.1"
    master_port: int = 9001
    profiles: dict = field(default_factory=dict)  # per-archetype field overrides


@dataclass
class PipelineConfig:
    seed: int = 7
    threads: typing.Optional[int] = None
    capture: CaptureConfig = field(default_factory=CaptureConfig)
    behavior: BehaviorConfig = field(default_factory=BehaviorConfig)
    standardize: StandardizeConfig = field(default_factory=StandardizeConfig)
    autoencoder: AutoencoderConfig = field(default_factory=AutoencoderConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)

    @property
    def n_segments(self):
        from .flows import derive_segment_count

        if self.capture.n_segments is not None:
            return self.capture.n_segments
        return derive_segment_count(self.capture.observation_window, self.capture.tau)

    def behavior_table(self):
        b = self.behavior
        if b.table:
            from .behavior import load_table

            return load_table(b.table)
        if b.states:
            return BehaviorCodeTable.from_states(b.offset, b.states)
        default = BehaviorCodeTable.default()
        return BehaviorCodeTable(b.offset, default.mapping)

    def resolved(self):
        """Copy with derived values filled in and the behavior table inlined."""
        cfg = from_dict(to_dict(self))
        cfg.capture.n_segments = self.n_segments
        table = self.behavior_table()
        cfg.behavior = BehaviorConfig(table.offset, "", table.states())
        return cfg

    def validate(self):
        _check(self.capture.tau > 0, "capture.tau must be positive")
        _check(self.capture.n_segments is None or self.capture.n_segments >= 1, "capture.n_segments must be >= 1")
        _check(self.capture.observation_window > 0, "capture.observation_window must be positive")
        _check(self.standardize.scope in ("train", "all"), "standardize.scope must be 'train' or 'all'")
        _check(len(self.autoencoder.hidden) >= 1 and min(self.autoencoder.hidden) >= 1,
               "autoencoder.hidden needs positive layer sizes")
        _check(self.cluster.kind in ("kmeans", "gmm"), "cluster.kind must be 'kmeans' or 'gmm'")
        _check(self.cluster.k >= 1, "cluster.k must be >= 1")
        _check(self.classifier.kind in ("gbt", "lr", "rf", "adaboost", "nn"),
               "classifier.kind must be one of gbt, lr, rf, adaboost, nn")
        _check(self.classifier.rf.max_features in ("sqrt", "all"), "classifier.rf.max_features must be 'sqrt' or 'all'")
        s = self.split
        _check(min(s.train, s.validation, s.test) >= 0 and s.train > 0, "split fractions must be non-negative")
        _check(abs(s.train + s.validation + s.test - 1.0) < 1e-9, "split fractions must sum to 1")
        g = self.generator
        _check(g.flows_per_class >= 1, "generator.flows_per_class must be >= 1")
        _check(0.0 <= g.long_fraction <= 1.0, "generator.long_fraction must be in [0, 1]")
        _check(g.duration >= 2 * self.capture.min_duration or g.long_fraction == 0.0,
               "generator.duration too short for long connections")
        _check(self.threads is None or self.threads >= 1, "threads must be >= 1")
        return self


def _check(ok, message):
    if not ok:
        raise ConfigError(message)


def _convert(value, tp, path):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _convert(value, args[0], path)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a section, got {type(value).__name__}")
        return _build(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if tp is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return list(value)
    if tp is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a table, got {value!r}")
        return dict(value)
    raise ConfigError(f"{path}: unsupported type {tp}")


def _build(cls, data, prefix=""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f" in [{prefix}]" if prefix else ""
        raise ConfigError(f"unknown config key(s){where}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        path = f"{prefix}.{name}" if prefix else name
        kwargs[name] = _convert(value, hints[name], path)
    return cls(**kwargs)


def from_dict(data):
    return _build(PipelineConfig, data).validate()


def read_toml(path):
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None


def load_config(path=None):
    if path is None:
        return PipelineConfig().validate()
    return from_dict(read_toml(path))


def to_dict(cfg):
    return dataclasses.asdict(cfg)


def config_hash(cfg):
    blob = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
