import pytest

from gridterm.config import PipelineConfig, config_hash, from_dict, load_config, to_dict
from gridterm.errors import ConfigError


def test_defaults():
    cfg = load_config()
    assert cfg.capture.tau == 300 and cfg.n_segments == 12
    assert cfg.autoencoder.hidden == [24, 16, 8]
    assert cfg.cluster.k == 15
    assert cfg.generator.long_fraction == 0.861


def test_toml_overrides(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("seed = 3\n[cluster]\nkind = 'gmm'\nk = 4\n[classifier.gbt]\nstages = 10\n")
    cfg = load_config(p)
    assert cfg.seed == 3 and cfg.cluster.kind == "gmm" and cfg.cluster.k == 4
    assert cfg.classifier.gbt.stages == 10
    assert cfg.capture.tau == 300


@pytest.mark.parametrize("data", [
    {"sed": 3},
    {"cluster": {"kk": 3}},
    {"seed": "7"},
    {"seed": True},
    {"cluster": 3},
    {"cluster": {"kind": "dbscan"}},
    {"split": {"train": 0.5, "validation": 0.1, "test": 0.1}},
    {"capture": {"tau": 0}},
])
def test_rejects_bad_config(data):
    with pytest.raises(ConfigError):
        from_dict(data)


def test_unreadable_toml(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("seed = = 3\n")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")


def test_hash_tracks_content():
    a = PipelineConfig()
    b = from_dict(to_dict(a))
    assert config_hash(a) == config_hash(b)
    b.seed = 8
    assert config_hash(a) != config_hash(b)
    assert len(config_hash(a)) == 64


def test_resolved_inlines_table():
    r = PipelineConfig().resolved()
    assert r.capture.n_segments == 12
    assert r.behavior.states and not r.behavior.table
    assert from_dict(to_dict(r)).behavior_table().mapping == PipelineConfig().behavior_table().mapping
