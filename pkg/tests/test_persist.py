import numpy as np
import pytest

from gridterm import persist
from gridterm.errors import CorruptArtifact, VersionMismatch

STATE = {
    "w": np.arange(12.0).reshape(3, 4),
    "idx": np.array([3, -1, 7]),
    "mask": np.array([True, False]),
    "nested": [{"b": np.zeros((0, 8))}, 3, "x", None, 1.5],
}


def test_round_trip(tmp_path):
    p = tmp_path / "m.gtm"
    persist.save(p, STATE, {"config_hash": "abc"})
    head, state = persist.load(p)
    assert head["config_hash"] == "abc" and head["n_blocks"] == 4
    np.testing.assert_array_equal(state["w"], STATE["w"])
    assert state["idx"].dtype == np.int64 and state["mask"].dtype == bool
    assert state["nested"][0]["b"].shape == (0, 8)
    assert state["nested"][1:] == [3, "x", None, 1.5]
    assert persist.dumps(STATE) == persist.dumps(state)


def test_checksum_detects_corruption():
    text = persist.dumps(STATE)
    lines = text.splitlines()
    parts = lines[1].split(" ")
    payload = parts[4]
    parts[4] = ("B" if payload[0] != "B" else "C") + payload[1:]
    lines[1] = " ".join(parts)
    with pytest.raises(CorruptArtifact):
        persist.loads("\n".join(lines) + "\n")


def test_version_and_format_checks():
    text = persist.dumps(STATE).replace('"version":1', '"version":2', 1)
    with pytest.raises(VersionMismatch):
        persist.loads(text)
    with pytest.raises(CorruptArtifact):
        persist.loads('{"format":"other"}\n')
    with pytest.raises(CorruptArtifact):
        persist.loads("")
    truncated = "\n".join(persist.dumps(STATE).splitlines()[:-1])
    with pytest.raises(CorruptArtifact):
        persist.loads(truncated)


def test_shape_mismatch():
    lines = persist.dumps({"a": np.zeros(4)}).splitlines()
    lines[1] = lines[1].replace(" 4 ", " 5 ", 1)
    with pytest.raises(CorruptArtifact):
        persist.loads("\n".join(lines))


def test_binary_file_rejected(tmp_path):
    p = tmp_path / "bin"
    p.write_bytes(b"\xff\xfe\x00")
    with pytest.raises(CorruptArtifact):
        persist.load(p)
