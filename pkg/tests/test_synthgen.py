import dataclasses
import json

import numpy as np
import pytest

from gridterm import synthgen as sg
from gridterm.config import PipelineConfig
from gridterm.errors import BadProfile
from gridterm.flows import LabelMap, assemble_flows
from gridterm.pcap import ingest_file


def small_cfg(**gen):
    cfg = PipelineConfig()
    cfg.generator = dataclasses.replace(cfg.generator, flows_per_class=10, **gen)
    return cfg


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    cfg = small_cfg()
    out = tmp_path_factory.mktemp("gen")
    files, doc = sg.generate_dataset(cfg, out)
    return cfg, files, doc


def endpoint(i=0):
    return sg.Endpoint(sg.terminal_ip(i), 40000 + i, "10.0.0.1", 9001)


def test_flow_count_and_balance(generated):
    _, files, doc = generated
    assert doc["n_flows"] == 30
    labels = [f["label"] for f in doc["flows"]]
    assert {c: labels.count(c) for c in set(labels)} == {"LVRC": 10, "TTU": 10, "LMT": 10}
    lines = open(files["labels"]).read().splitlines()
    assert lines[0] == f"# config_hash {doc['config_hash']}"
    assert len(lines) == 31


def test_idle_profile_gets_keepalive():
    p = sg.ArchetypeProfile("LVRC", schedule="fixed", active=(), send_mix={"R1": 1.0})
    f = sg.generate_flow(p, endpoint(), PipelineConfig().generator, seed=1)
    assert len(f) == 1 and f.size[0] == 0


def test_fixed_schedule_stays_in_its_segments():
    g = PipelineConfig().generator
    p = sg.ArchetypeProfile("TTU", schedule="fixed", active=(1, 5, 9), send_mix={"TR1": 1.0})
    for i in range(5):
        f = sg.generate_flow(p, endpoint(i), g, seed=i)
        counts = sg.segment_counts(f.ts, g.start_time * 1_000_000, g.tau, 12)
        assert set(np.flatnonzero(counts) + 1) <= {1, 5, 9}
        assert len(f) > 3


def test_flow_streams_are_independent_of_order():
    g = PipelineConfig().generator
    p = sg.default_profiles()["LMT"]
    a = sg.generate_flow(p, endpoint(3), g, seed=5)
    sg.generate_flow(p, endpoint(4), g, seed=5)
    b = sg.generate_flow(p, endpoint(3), g, seed=5)
    np.testing.assert_array_equal(a.ts, b.ts)
    np.testing.assert_array_equal(a.size, b.size)
    assert sg.flow_seed(5, "x") != sg.flow_seed(6, "x")


def test_byte_identical_rerun(generated, tmp_path):
    cfg, files, _ = generated
    again, _ = sg.generate_dataset(cfg, tmp_path / "again")
    for k in ("pcap", "labels"):
        assert open(files[k], "rb").read() == open(again[k], "rb").read()
    other = small_cfg()
    other.seed = 8
    third, _ = sg.generate_dataset(other, tmp_path / "other")
    assert open(files["pcap"], "rb").read() != open(third["pcap"], "rb").read()


def test_timestamps_strictly_increasing(generated):
    cfg, files, _ = generated
    packets, stats = ingest_file(files["pcap"], cfg.behavior_table())
    ts = np.array([p.timestamp for p in packets])
    assert np.all(np.diff(ts) > 0)
    assert stats.skipped["not_tcp"] == cfg.generator.udp_noise


def test_round_trip_matches_manifest(generated):
    cfg, files, doc = generated
    packets, stats = ingest_file(files["pcap"], cfg.behavior_table())
    flows = {f.flow_id: f for f in assemble_flows(packets, LabelMap.from_file(files["labels"]))}
    assert len(flows) == doc["n_flows"]
    for entry in doc["flows"]:
        f = flows[entry["flow_id"]]
        assert len(f) == entry["n_packets"]
        assert int(f.arrays.send.sum()) == entry["n_send"]
        assert int(f.arrays.size.sum()) == entry["n_bytes"]
        assert f.label == entry["label"]
        ts_us = np.array([round(p.timestamp * 1e6) for p in f.packets])
        counts = sg.segment_counts(ts_us, doc["capture_start_us"], cfg.generator.tau, doc["n_segments"])
        assert counts.tolist() == entry["segment_counts"]
    assert stats.first_ts * 1e6 == pytest.approx(doc["capture_start_us"])


def test_behavior_bytes_round_trip(generated):
    cfg, files, _ = generated
    ds = sg.build_dataset(cfg.resolved(), n_segments=12)
    packets, _ = ingest_file(files["pcap"], cfg.behavior_table())
    flows = {f.flow_id: f for f in assemble_flows(packets)}
    for g in ds.flows:
        np.testing.assert_array_equal(flows[g.flow_id].arrays.code, g.state)


def test_short_flows_open_and_close():
    cfg = small_cfg()
    ds = sg.build_dataset(cfg, n_segments=12)
    short = [f for f in ds.flows if not f.long]
    assert len(short) == 3 * round(10 * (1 - cfg.generator.long_fraction))
    for f in short:
        assert f.flags[0] & 0x02 and f.flags[-2] & 0x01
        assert (f.ts[-1] - f.ts[0]) / 1e6 < 600


def test_hard_mode_rates_match_across_classes(tmp_path):
    cfg = small_cfg(hard_mode=True)
    cfg.generator.flows_per_class = 100
    _, doc = sg.generate_dataset(cfg, tmp_path)
    means = {}
    for c in ("LVRC", "TTU", "LMT"):
        means[c] = np.mean([f["n_packets"] for f in doc["flows"] if f["label"] == c])
    vals = np.array(list(means.values()))
    assert vals.max() / vals.min() - 1 < 0.05


def test_manifest_is_json(generated):
    _, files, doc = generated
    assert json.load(open(files["manifest"])) == json.loads(json.dumps(doc))


def test_profile_validation():
    with pytest.raises(BadProfile):
        sg.ArchetypeProfile("LVRC", schedule="fixed", active=(13,), send_mix={"R1": 1}).validate(12)
    with pytest.raises(BadProfile):
        sg.ArchetypeProfile("METER", send_mix={"R1": 1}).validate(12)
    with pytest.raises(BadProfile):
        sg.ArchetypeProfile("LVRC", send_mix={"R9": 1}).validate(12)
    with pytest.raises(BadProfile):
        sg.ArchetypeProfile("LVRC", send_mix={"R1": 1}, send_size=(5, 1, 0, 10)).validate(12, offset=0)
    g = PipelineConfig().generator
    g.profiles = {"TTU": {"exchanges_mean": 3.0}}
    assert sg.resolve_profiles(g, 12)["TTU"].exchanges_mean == 3.0
    g.profiles = {"TTU": {"bogus": 1}}
    with pytest.raises(BadProfile):
        sg.resolve_profiles(g, 12)


def test_mixtures_are_distributions():
    for hard in (False, True):
        for p in sg.default_profiles(hard).values():
            assert p.mixture("send").sum() == pytest.approx(1.0)
            p.validate(12)
