"""Bidirectional flow assembly, long-connection filtering, and time segmentation."""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from ipaddress import IPv4Address

import numpy as np

from .errors import DataError, InvalidParams
from .pcap import ACK, FIN, RST, SYN

log = logging.getLogger(__name__)

LABELS = ("LVRC", "TTU", "LMT")
UNLABELED = "Unlabeled"


@dataclass(frozen=True, order=True)
class FlowKey:
    ip_a: str
    port_a: int
    ip_b: str
    port_b: int
    protocol: str = "tcp"

    @classmethod
    def of(cls, src_ip, src_port, dst_ip, dst_port, protocol="tcp"):
        a = (_ip_int(src_ip), src_port)
        b = (_ip_int(dst_ip), dst_port)
        if a <= b:
            return cls(src_ip, src_port, dst_ip, dst_port, protocol)
        return cls(dst_ip, dst_port, src_ip, src_port, protocol)

    @property
    def sort_key(self):
        return (_ip_int(self.ip_a), self.port_a, _ip_int(self.ip_b), self.port_b, self.protocol)

    @property
    def flow_id(self):
        return f"{self.ip_a}:{self.port_a}-{self.ip_b}:{self.port_b}-{self.protocol}"


_IP_CACHE = {}


def _ip_int(ip):
    v = _IP_CACHE.get(ip)
    if v is None:
        v = _IP_CACHE[ip] = int(IPv4Address(ip))
    return v


def packet_key(p):
    return FlowKey.of(p.src_ip, p.src_port, p.dst_ip, p.dst_port)


@dataclass(eq=False)
class Flow:
    key: FlowKey
    initiator: tuple  # (ip, port) of the "send" side
    packets: list
    label: str = UNLABELED

    @property
    def flow_id(self):
        return self.key.flow_id

    @property
    def start_ts(self):
        return self.packets[0].timestamp

    @property
    def end_ts(self):
        return self.packets[-1].timestamp

    @property
    def duration(self):
        return self.end_ts - self.start_ts

    def __len__(self):
        return len(self.packets)

    @cached_property
    def arrays(self):
        """Column view of the packets: timestamps, sizes, direction (True=send), codes, flags."""
        n = len(self.packets)
        ts = np.fromiter((p.timestamp for p in self.packets), float, n)
        size = np.fromiter((p.payload_len for p in self.packets), float, n)
        ip, port = self.initiator
        send = np.fromiter((p.src_ip == ip and p.src_port == port for p in self.packets), bool, n)
        code = np.fromiter((p.behavior_code for p in self.packets), np.int64, n)
        flags = np.fromiter((p.tcp_flags for p in self.packets), np.int64, n)
        return FlowArrays(ts, size, send, code, flags)


@dataclass(frozen=True)
class FlowArrays:
    ts: np.ndarray
    size: np.ndarray
    send: np.ndarray
    code: np.ndarray
    flags: np.ndarray

    def slice(self, lo, hi):
        return FlowArrays(self.ts[lo:hi], self.size[lo:hi], self.send[lo:hi],
                          self.code[lo:hi], self.flags[lo:hi])


class LabelMap:
    """``ip -> terminal type``; a flow takes the label of whichever endpoint is listed."""

    def __init__(self, mapping=None):
        self.mapping = dict(mapping or {})

    @classmethod
    def from_file(cls, path):
        mapping = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line.strip() or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise DataError(f"{path}:{lineno}: expected 'ip<TAB>terminal_type'")
                ip, label = parts[0].strip(), parts[1].strip()
                try:
                    IPv4Address(ip)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: bad IPv4 address {ip!r}") from None
                if label not in LABELS:
                    raise DataError(f"{path}:{lineno}: unknown terminal type {label!r}")
                mapping[ip] = label
        return cls(mapping)

    def __call__(self, key):
        return self.mapping.get(key.ip_a) or self.mapping.get(key.ip_b) or UNLABELED


def assemble_flows(packets, labeler=None):
    """Group packets by canonical five-tuple. Flows come back sorted by key."""
    groups = {}
    for p in packets:
        groups.setdefault(packet_key(p), []).append(p)
    flows = []
    for key in sorted(groups, key=lambda k: k.sort_key):
        pkts = sorted(groups[key], key=lambda p: p.timestamp)  # stable
        initiator = pkts[0].src
        for p in pkts:
            if p.tcp_flags & SYN and not p.tcp_flags & ACK:
                initiator = p.src
                break
        label = labeler(key) if labeler is not None else UNLABELED
        flows.append(Flow(key, initiator, pkts, label))
    return flows


def filter_long_connections(flows, min_duration=600.0, observation_window=3600.0):
    kept, dropped = [], []
    handshake = too_brief = 0
    for f in flows:
        flags = f.arrays.flags
        by_handshake = bool(np.any(flags & SYN)) and bool(np.any(flags & (FIN | RST)))
        by_duration = f.duration < min_duration
        if by_handshake or by_duration:
            dropped.append(f)
            handshake += by_handshake
            too_brief += by_duration and not by_handshake
        else:
            kept.append(f)
    n = len(flows)
    stats = {
        "flows": n,
        "long": len(kept),
        "short": len(dropped),
        "short_handshake": handshake,
        "short_duration_only": too_brief,
        "long_fraction": len(kept) / n if n else 0.0,
        "min_duration": min_duration,
        "observation_window": observation_window,
        "mean_long_coverage": (
            float(np.mean([f.duration for f in kept])) / observation_window if kept else 0.0
        ),
    }
    return kept, dropped, stats


@dataclass
class Segment:
    index: int  # 1-based
    start: float
    end: float
    lo: int  # slice of the flow's time-ordered packets
    hi: int
    flow: Flow = field(repr=False, default=None)
    clamped: int = 0

    @property
    def n_packets(self):
        return self.hi - self.lo

    @property
    def empty(self):
        return self.hi == self.lo

    @property
    def packets(self):
        return self.flow.packets[self.lo:self.hi]

    @property
    def arrays(self):
        return self.flow.arrays.slice(self.lo, self.hi)


def derive_segment_count(observation_window, tau):
    if tau <= 0 or observation_window <= 0:
        raise InvalidParams("tau and observation_window must be positive")
    # 3600 / 300 must give exactly 12, not 13 through float noise
    return max(1, math.ceil(observation_window / tau - 1e-9))


def segment_flow(flow, tau, n_segments, origin=None):
    """Split a flow into ``n_segments`` half-open windows ``[origin+(l-1)tau, origin+l*tau)``.

    ``origin`` should be the capture start so all flows share boundaries; it
    defaults to the flow's own first packet. Packets beyond the last window
    land in the last segment (and before the first, in the first); the number
    of such packets is recorded on the affected segment.
    """
    if not tau > 0:
        raise InvalidParams(f"segment length must be positive, got {tau}")
    if n_segments < 1:
        raise InvalidParams(f"segment count must be >= 1, got {n_segments}")
    if origin is None:
        origin = flow.start_ts
    ts = flow.arrays.ts
    raw = np.floor((ts - origin) / tau).astype(np.int64)
    idx = np.clip(raw, 0, n_segments - 1)
    # ts is sorted, so each segment is one contiguous slice
    bounds = np.searchsorted(idx, np.arange(n_segments + 1), side="left")
    segments = [
        Segment(l + 1, origin + l * tau, origin + (l + 1) * tau, int(bounds[l]), int(bounds[l + 1]), flow)
        for l in range(n_segments)
    ]
    late = int(np.sum(raw > n_segments - 1))
    early = int(np.sum(raw < 0))
    if late:
        segments[-1].clamped = late
        log.warning("flow %s: %d packets past segment %d clamped", flow.flow_id, late, n_segments)
    if early:
        segments[0].clamped += early
        log.warning("flow %s: %d packets before the origin clamped", flow.flow_id, early)
    return segments

