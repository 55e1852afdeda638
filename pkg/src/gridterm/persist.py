"""Self-describing text container for trained pipelines.

Line 1 is a JSON header (format, version, config hash, resolved config, the
state tree). Arrays in the tree are replaced by ``{"$block": i}`` references;
each following line is one block::

    <i> <dtype> <shape> <sha256> <base64 little-endian bytes>

Loading checks the version and every block checksum.
"""

import base64
import hashlib
import json

import numpy as np

from .errors import CorruptArtifact, VersionMismatch

FORMAT = "gridterm-pipeline"
VERSION = 1

_DTYPES = {"f8": "<f8", "i8": "<i8", "b1": "|b1"}


def _encode_tree(obj, blocks):
    if isinstance(obj, np.ndarray):
        if obj.dtype == bool:
            code = "b1"
        elif np.issubdtype(obj.dtype, np.integer):
            code = "i8"
        else:
            code = "f8"
        arr = np.ascontiguousarray(obj, dtype=_DTYPES[code])
        blocks.append((code, arr))
        return {"$block": len(blocks) - 1}
    if isinstance(obj, dict):
        return {str(k): _encode_tree(v, blocks) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode_tree(v, blocks) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _decode_tree(obj, blocks):
    if isinstance(obj, dict):
        if set(obj) == {"$block"}:
            try:
                return blocks[obj["$block"]]
            except (IndexError, TypeError):
                raise CorruptArtifact(f"dangling block reference {obj['$block']!r}") from None
        return {k: _decode_tree(v, blocks) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode_tree(v, blocks) for v in obj]
    return obj


def dumps(state, header=None):
    blocks = []
    tree = _encode_tree(state, blocks)
    head = {"format": FORMAT, "version": VERSION}
    head.update(header or {})
    head["n_blocks"] = len(blocks)
    head["state"] = tree
    lines = [json.dumps(head, separators=(",", ":"))]
    for i, (code, arr) in enumerate(blocks):
        raw = arr.tobytes()
        shape = "x".join(map(str, arr.shape)) or "scalar"
        lines.append(f"{i} {code} {shape} {hashlib.sha256(raw).hexdigest()} "
                     f"{base64.b64encode(raw).decode('ascii')}")
    return "\n".join(lines) + "\n"


def loads(text):
    """Return ``(header, state)``."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise CorruptArtifact("empty artifact")
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise CorruptArtifact(f"unreadable header: {e}") from None
    if not isinstance(head, dict) or head.get("format") != FORMAT:
        raise CorruptArtifact("not a gridterm pipeline artifact")
    if head.get("version") != VERSION:
        raise VersionMismatch(f"artifact format version {head.get('version')!r}, this build reads {VERSION}")
    n = head.get("n_blocks")
    if not isinstance(n, int) or len(lines) - 1 != n:
        raise CorruptArtifact(f"header declares {n} blocks, found {len(lines) - 1}")
    blocks = []
    for i, line in enumerate(lines[1:]):
        parts = line.split(" ")
        if len(parts) != 5 or parts[0] != str(i) or parts[1] not in _DTYPES:
            raise CorruptArtifact(f"block {i}: malformed line")
        _, code, shape, digest, payload = parts
        try:
            raw = base64.b64decode(payload, validate=True)
        except ValueError:
            raise CorruptArtifact(f"block {i}: bad base64") from None
        if hashlib.sha256(raw).hexdigest() != digest:
            raise CorruptArtifact(f"block {i}: checksum mismatch")
        dims = () if shape == "scalar" else tuple(int(s) for s in shape.split("x"))
        arr = np.frombuffer(raw, dtype=_DTYPES[code])
        try:
            arr = arr.reshape(dims).copy()
        except ValueError:
            raise CorruptArtifact(f"block {i}: {arr.size} values do not fit shape {dims}") from None
        blocks.append(arr)
    state = _decode_tree(head.pop("state"), blocks)
    return head, state


def save(path, state, header=None):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(dumps(state, header))


def load(path):
    try:
        with open(path, encoding="ascii") as fh:
            text = fh.read()
    except UnicodeDecodeError:
        raise CorruptArtifact(f"{path}: not a text artifact") from None
    return loads(text)


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
