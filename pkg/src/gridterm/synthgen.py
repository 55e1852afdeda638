"""Synthetic labeled captures for three grid-terminal archetypes.

Each terminal holds one TCP conversation with a shared master station. A flow
is a sequence of exchanges (terminal request, master response, optional bare
ACK) placed into the active segments of the archetype's schedule. Per-flow
randomness comes from a PCG64 stream seeded by
``sha256("<master_seed>:<flow_id>")``, so flows can be generated in any
order and still produce the same packets.
"""

import dataclasses
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .behavior import N_STATES, STATE_INDEX, STATES, ZERO
from .errors import BadProfile, DataError
from .flows import LABELS, FlowKey
from .pcap import ACK, FIN, PSH, SYN, PcapWriter, tcp_frame, udp_frame

log = logging.getLogger(__name__)

SCHEDULES = ("fixed", "periodic", "all", "random")
SPACINGS = ("uniform", "random", "burst")


@dataclass
class ArchetypeProfile:
    name: str
    schedule: str = "all"  # fixed | periodic | all | random
    active: tuple = ()  # 1-based segments, for "fixed"
    period: int = 3  # "periodic": every period-th segment from a random phase
    n_active: int = 3  # "random": this many distinct segments...
    min_span: int = 1  # ...spread over at least this many segments
    exchanges_mean: float = 10.0  # request/response exchanges per active segment
    exchanges_jitter: float = 2.0
    spacing: str = "uniform"  # uniform | random | burst
    burst_len: float = 120.0
    send_size: tuple = (60.0, 10.0, 1, 200)  # mean, std, min, max
    recv_size: tuple = (60.0, 10.0, 1, 200)
    send_mix: dict = field(default_factory=dict)  # state -> weight, normalized on use
    recv_mix: dict = field(default_factory=dict)  # empty: echo the request's state
    response_prob: float = 0.9
    ack_prob: float = 0.3

    def validate(self, n_segments, offset=0):
        if self.name not in LABELS:
            raise BadProfile(f"unknown archetype {self.name!r}")
        if self.schedule not in SCHEDULES:
            raise BadProfile(f"{self.name}: schedule must be one of {SCHEDULES}")
        if self.spacing not in SPACINGS:
            raise BadProfile(f"{self.name}: spacing must be one of {SPACINGS}")
        if self.schedule == "fixed" and any(not 1 <= s <= n_segments for s in self.active):
            raise BadProfile(f"{self.name}: active segments must lie in 1..{n_segments}")
        if self.schedule == "periodic" and self.period < 1:
            raise BadProfile(f"{self.name}: period must be >= 1")
        if self.schedule == "random" and not (0 <= self.n_active <= n_segments
                                              and self.min_span <= n_segments):
            raise BadProfile(f"{self.name}: cannot place {self.n_active} segments over {n_segments}")
        if self.exchanges_mean < 0 or self.exchanges_jitter < 0:
            raise BadProfile(f"{self.name}: exchange rate must be non-negative")
        for label, size in (("send_size", self.send_size), ("recv_size", self.recv_size)):
            if len(size) != 4:
                raise BadProfile(f"{self.name}: {label} needs (mean, std, min, max)")
            mean, std, lo, hi = size
            if std < 0 or not 0 <= lo <= hi or hi > 1400:
                raise BadProfile(f"{self.name}: {label} bounds invalid: {size}")
            if lo <= offset:
                # the behavior byte must fit, or the intended state is lost
                raise BadProfile(f"{self.name}: {label} minimum {lo} leaves no room for the behavior byte")
        for label, mix in (("send_mix", self.send_mix), ("recv_mix", self.recv_mix)):
            bad = set(mix) - set(STATES)
            if bad:
                raise BadProfile(f"{self.name}: {label} has unknown states {sorted(bad)}")
            if any(w < 0 for w in mix.values()):
                raise BadProfile(f"{self.name}: {label} weights must be non-negative")
        if not self.send_mix or sum(self.send_mix.values()) <= 0:
            raise BadProfile(f"{self.name}: send_mix needs positive weight")
        if not (0 <= self.response_prob <= 1 and 0 <= self.ack_prob <= 1):
            raise BadProfile(f"{self.name}: probabilities must lie in [0, 1]")
        return self

    def mixture(self, which):
        """Normalized 14-way state probabilities (``None`` for an echoing recv mix)."""
        mix = self.send_mix if which == "send" else self.recv_mix
        if not mix:
            return None
        p = np.zeros(N_STATES)
        for state, w in mix.items():
            p[STATE_INDEX[state]] = w
        return p / p.sum()


def _mix(**weights):
    return dict(weights)


READ_HEAVY = _mix(R1=0.16, R2=0.16, R3=0.14, R4=0.14, R5=0.12, R6=0.12, ID1=0.08, T1=0.04, TR1=0.04)
TRANSPORT_HEAVY = _mix(TR1=0.30, TR2=0.28, TR3=0.24, ID1=0.06, IN1=0.06, R1=0.06)
WRITE_TEST_HEAVY = _mix(W1=0.34, T1=0.26, T2=0.24, IN1=0.10, ID1=0.06)


def default_profiles(hard_mode=False):
    if hard_mode:
        # identical rate/size/timing generators; only schedule and states differ
        common = dict(schedule="fixed", exchanges_mean=20.0, exchanges_jitter=3.0, spacing="random",
                      send_size=(60.0, 15.0, 8, 120), recv_size=(60.0, 15.0, 8, 120),
                      response_prob=0.9, ack_prob=0.3)
        return {
            "LVRC": ArchetypeProfile("LVRC", active=(1, 4, 7, 10), send_mix=READ_HEAVY, **common),
            "TTU": ArchetypeProfile("TTU", active=(2, 5, 8, 11), send_mix=TRANSPORT_HEAVY, **common),
            "LMT": ArchetypeProfile("LMT", active=(3, 6, 9, 12), send_mix=WRITE_TEST_HEAVY, **common),
        }
    return {
        # meter-reading bursts every 900 s: small polls, large replies
        "LVRC": ArchetypeProfile("LVRC", schedule="periodic", period=3, exchanges_mean=40.0,
                                 exchanges_jitter=5.0, spacing="burst", burst_len=120.0,
                                 send_size=(24.0, 4.0, 8, 40), recv_size=(220.0, 30.0, 120, 400),
                                 send_mix=READ_HEAVY, response_prob=0.95, ack_prob=0.3),
        # steady low-rate telemetry pushed upstream
        "TTU": ArchetypeProfile("TTU", schedule="all", exchanges_mean=10.0, exchanges_jitter=2.0,
                                spacing="uniform", send_size=(90.0, 10.0, 60, 140),
                                recv_size=(30.0, 5.0, 16, 50), send_mix=TRANSPORT_HEAVY,
                                response_prob=0.9, ack_prob=0.2),
        # occasional command/response exchanges
        "LMT": ArchetypeProfile("LMT", schedule="random", n_active=3, min_span=4, exchanges_mean=6.0,
                                exchanges_jitter=2.0, spacing="random", send_size=(44.0, 6.0, 20, 70),
                                recv_size=(40.0, 6.0, 20, 70), send_mix=WRITE_TEST_HEAVY,
                                response_prob=0.9, ack_prob=0.5),
    }


def resolve_profiles(gen_cfg, n_segments, offset=0):
    """Defaults for the mode, with ``gen_cfg.profiles`` overrides applied field by field."""
    profiles = default_profiles(gen_cfg.hard_mode)
    names = {f.name for f in dataclasses.fields(ArchetypeProfile)} - {"name"}
    for name, override in (gen_cfg.profiles or {}).items():
        if name not in profiles:
            raise BadProfile(f"unknown archetype {name!r}")
        if not isinstance(override, dict):
            raise BadProfile(f"profile {name} override must be a table")
        unknown = set(override) - names
        if unknown:
            raise BadProfile(f"profile {name}: unknown fields {sorted(unknown)}")
        fixed = {k: tuple(v) if isinstance(v, list) else v for k, v in override.items()}
        profiles[name] = dataclasses.replace(profiles[name], **fixed)
    for p in profiles.values():
        p.validate(n_segments, offset)
    return profiles


def flow_seed(master_seed, flow_id):
    digest = hashlib.sha256(f"{master_seed}:{flow_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def flow_rng(master_seed, flow_id):
    return np.random.Generator(np.random.PCG64(flow_seed(master_seed, flow_id)))


@dataclass
class Endpoint:
    terminal_ip: str
    terminal_port: int
    master_ip: str
    master_port: int

    @property
    def key(self):
        return FlowKey.of(self.terminal_ip, self.terminal_port, self.master_ip, self.master_port)


@dataclass
class GeneratedFlow:
    label: str
    endpoint: Endpoint
    long: bool
    schedule: list  # active 1-based segments (long flows)
    ts: np.ndarray  # int64 microseconds, sorted
    from_terminal: np.ndarray  # bool
    flags: np.ndarray
    size: np.ndarray
    state: np.ndarray  # intended behavior state per packet (ZERO for empty payloads)

    @property
    def flow_id(self):
        return self.endpoint.key.flow_id

    def __len__(self):
        return len(self.ts)


def draw_schedule(profile, n_segments, rng):
    if profile.schedule == "fixed":
        return sorted(set(profile.active))
    if profile.schedule == "all":
        return list(range(1, n_segments + 1))
    if profile.schedule == "periodic":
        phase = int(rng.integers(min(profile.period, n_segments)))
        return list(range(1 + phase, n_segments + 1, profile.period))
    if profile.n_active == 0:
        return []
    # random: span first, then the interior picks
    span = int(rng.integers(max(profile.min_span, profile.n_active), n_segments + 1))
    first = int(rng.integers(1, n_segments - span + 2))
    last = first + span - 1
    if profile.n_active == 1:
        return [first]
    inner = rng.choice(np.arange(first + 1, last), profile.n_active - 2, replace=False) \
        if profile.n_active > 2 else []
    return sorted([first, last, *map(int, inner)])


def _sizes(dist, n, rng):
    mean, std, lo, hi = dist
    return np.clip(np.rint(rng.normal(mean, std, n)), lo, hi).astype(np.int64)


def _request_times(profile, start, stop, n, rng):
    if n == 0:
        return np.zeros(0)
    if profile.spacing == "uniform":
        step = (stop - start) / n
        return start + (np.arange(n) + 0.5) * step + rng.uniform(-0.25, 0.25, n) * step
    if profile.spacing == "burst":
        width = min(profile.burst_len, stop - start)
        b = rng.uniform(start, stop - width)
        return np.sort(rng.uniform(b, b + width, n))
    return np.sort(rng.uniform(start, stop, n))


class _Packets:
    def __init__(self):
        self.ts, self.term, self.flags, self.size, self.state = [], [], [], [], []

    def add(self, t, from_terminal, flags, size, state):
        self.ts.append(t)
        self.term.append(from_terminal)
        self.flags.append(flags)
        self.size.append(size)
        self.state.append(state)

    def exchanges(self, profile, times, rng):
        n = len(times)
        p_send = profile.mixture("send")
        p_recv = profile.mixture("recv")
        req_state = rng.choice(N_STATES, n, p=p_send)
        req_size = _sizes(profile.send_size, n, rng)
        resp_size = _sizes(profile.recv_size, n, rng)
        resp_state = req_state if p_recv is None else rng.choice(N_STATES, n, p=p_recv)
        respond = rng.random(n) < profile.response_prob
        acked = rng.random(n) < profile.ack_prob
        resp_delay = rng.uniform(0.05, 0.5, n)
        ack_delay = rng.uniform(0.01, 0.1, n)
        for i in range(n):
            t = times[i]
            self.add(t, True, PSH | ACK, int(req_size[i]), int(req_state[i]))
            if respond[i]:
                t = t + resp_delay[i]
                self.add(t, False, PSH | ACK, int(resp_size[i]), int(resp_state[i]))
                if acked[i]:
                    self.add(t + ack_delay[i], True, ACK, 0, ZERO)

    def finish(self, t0_us):
        ts = t0_us + np.rint(np.array(self.ts, float) * 1e6).astype(np.int64)
        order = np.argsort(ts, kind="stable")
        return (ts[order], np.array(self.term, bool)[order], np.array(self.flags, np.int64)[order],
                np.array(self.size, np.int64)[order], np.array(self.state, np.int64)[order])


def generate_flow(profile, endpoint, cfg, seed, long=True, n_segments=None):
    """Packets for one conversation.

    ``cfg`` is the generator config (duration, tau, start_time). Times are
    offsets from ``start_time``; long flows follow the archetype schedule,
    short flows open and close inside the capture. A flow with no scheduled
    activity still gets one keepalive so it is never empty.
    """
    tau = cfg.tau
    n_segments = n_segments or max(1, math.ceil(cfg.duration / tau - 1e-9))
    rng = flow_rng(seed, endpoint.key.flow_id)
    out = _Packets()
    schedule = []
    if long:
        schedule = draw_schedule(profile, n_segments, rng)
        for seg in schedule:
            start = (seg - 1) * tau + 1.0
            stop = min(seg * tau, cfg.duration) - 5.0
            n = max(1, int(round(rng.normal(profile.exchanges_mean, profile.exchanges_jitter))))
            out.exchanges(profile, _request_times(profile, start, stop, n, rng), rng)
        if not out.ts:
            out.add(float(rng.uniform(1.0, tau - 5.0)), True, ACK, 0, ZERO)
    else:
        length = float(rng.uniform(30.0, min(500.0, cfg.duration - 20.0)))
        t = float(rng.uniform(1.0, cfg.duration - length - 10.0))
        out.add(t, True, SYN, 0, ZERO)
        out.add(t + 0.001, False, SYN | ACK, 0, ZERO)
        out.add(t + 0.002, True, ACK, 0, ZERO)
        n = max(1, int(round(rng.normal(profile.exchanges_mean, profile.exchanges_jitter))))
        out.exchanges(profile, np.sort(rng.uniform(t + 1.0, t + length - 2.0, n)), rng)
        end = t + length
        out.add(end, True, FIN | ACK, 0, ZERO)
        out.add(end + 0.001, False, FIN | ACK, 0, ZERO)
        out.add(end + 0.002, True, ACK, 0, ZERO)
    ts, term, flags, size, state = out.finish(int(cfg.start_time) * 1_000_000)
    return GeneratedFlow(profile.name, endpoint, long, schedule, ts, term, flags, size, state)


def terminal_ip(index):
    return f"10.1.{index // 250}.{index % 250 + 1}"


@dataclass
class Dataset:
    flows: list
    ts: np.ndarray  # merged, strictly increasing packet times (µs)
    owner: np.ndarray  # flow index per packet, -1 for background UDP
    pos: np.ndarray  # packet position within its flow
    noise: list  # (src_ip, dst_ip) per UDP packet, in order of appearance


def build_dataset(cfg, profiles=None, table_offset=0, n_segments=None):
    """Generate every flow and merge them onto one timeline.

    Flow order: class by class in LVRC, TTU, LMT order, short flows first.
    Background UDP datagrams (one pinned at the capture start) are mixed in;
    they anchor the segment grid and exercise the non-TCP skip path.
    """
    g = cfg.generator
    tau = g.tau
    n_segments = n_segments or max(1, math.ceil(g.duration / tau - 1e-9))
    profiles = profiles or resolve_profiles(g, n_segments, table_offset)
    n_short = int(round(g.flows_per_class * (1.0 - g.long_fraction)))
    flows = []
    idx = 0
    for label in LABELS:
        for i in range(g.flows_per_class):
            ep = Endpoint(terminal_ip(idx), 40000 + idx % 20000, g.master_ip, g.master_port)
            flows.append(generate_flow(profiles[label], ep, g, cfg.seed, long=i >= n_short,
                                       n_segments=n_segments))
            idx += 1
    t0 = int(g.start_time) * 1_000_000
    rng = flow_rng(cfg.seed, "background")
    n_noise = max(1, g.udp_noise)
    noise_ts = np.concatenate([[t0], t0 + np.sort(rng.integers(1, int(g.duration * 1e6), n_noise - 1))])
    noise = [(g.master_ip, "10.2.0.1")] * n_noise

    ts = np.concatenate([noise_ts] + [f.ts for f in flows])
    owner = np.concatenate([np.full(n_noise, -1)] + [np.full(len(f), n) for n, f in enumerate(flows)])
    pos = np.concatenate([np.arange(n_noise)] + [np.arange(len(f)) for f in flows])
    order = np.lexsort((pos, owner, ts))
    ts, owner, pos = ts[order].astype(np.int64), owner[order], pos[order]
    # strictly increasing file-wide: push colliding stamps forward by 1 µs
    for i in range(1, len(ts)):
        if ts[i] <= ts[i - 1]:
            ts[i] = ts[i - 1] + 1
    for n, f in enumerate(flows):
        f.ts = ts[owner == n][np.argsort(pos[owner == n])]
    return Dataset(flows, ts, owner, pos, noise)


def _payload(size, state, offset, codes):
    if size == 0:
        return b""
    body = bytearray(size)
    if state != ZERO:
        body[offset] = codes[state]
    return bytes(body)


def write_pcap(path, dataset, table):
    seq = {}
    codes = [table.code_for(s) for s in range(N_STATES)]
    with open(path, "wb") as fh:
        w = PcapWriter(fh)
        noise_i = 0
        for i in range(len(dataset.ts)):
            n = dataset.owner[i]
            ts = int(dataset.ts[i])
            if n < 0:
                src, dst = dataset.noise[noise_i]
                noise_i += 1
                w.write(ts, udp_frame(src, 5353, dst, 5353, b"\x00" * 16, ident=i & 0xFFFF))
                continue
            f = dataset.flows[n]
            k = dataset.pos[i]
            ep = f.endpoint
            size = int(f.size[k])
            payload = _payload(size, int(f.state[k]), table.offset, codes)
            up = bool(f.from_terminal[k])
            s_up, s_down = seq.get(n, (1000, 5000))
            if up:
                frame = tcp_frame(ep.terminal_ip, ep.terminal_port, ep.master_ip, ep.master_port,
                                  int(f.flags[k]), payload, s_up, s_down, ident=i & 0xFFFF)
                s_up = (s_up + max(size, 1)) & 0xFFFFFFFF
            else:
                frame = tcp_frame(ep.master_ip, ep.master_port, ep.terminal_ip, ep.terminal_port,
                                  int(f.flags[k]), payload, s_down, s_up, ident=i & 0xFFFF)
                s_down = (s_down + max(size, 1)) & 0xFFFFFFFF
            seq[n] = (s_up, s_down)
            w.write(ts, frame)
    return w.count


def segment_counts(ts_us, origin_us, tau, n_segments):
    """Per-segment packet counts, using the same float arithmetic as ingestion."""
    ts = np.array([s + u / 1e6 for s, u in (divmod(int(t), 1_000_000) for t in ts_us)])
    sec, usec = divmod(int(origin_us), 1_000_000)
    origin = sec + usec / 1e6
    idx = np.clip(np.floor((ts - origin) / tau).astype(np.int64), 0, n_segments - 1)
    return np.bincount(idx, minlength=n_segments)


def manifest(dataset, cfg, files, config_dict, cfg_hash, n_segments):
    g = cfg.generator
    origin = int(dataset.ts[0])
    flows = []
    for f in dataset.flows:
        counts = segment_counts(f.ts, origin, g.tau, n_segments)
        flows.append({
            "flow_id": f.flow_id,
            "terminal_ip": f.endpoint.terminal_ip,
            "label": f.label,
            "long": f.long,
            "schedule": [int(s) for s in f.schedule],
            "n_packets": int(len(f)),
            "n_send": int(f.from_terminal.sum()),
            "n_bytes": int(f.size.sum()),
            "segment_counts": [int(c) for c in counts],
        })
    return {
        "config_hash": cfg_hash,
        "config": config_dict,
        "files": files,
        "capture_start_us": origin,
        "n_segments": n_segments,
        "n_records": int(len(dataset.ts)),
        "n_flows": len(flows),
        "flows": flows,
    }


def generate_dataset(cfg, out_dir, prefix="synth"):
    """Write ``<prefix>.pcap``, ``<prefix>.labels.tsv`` and ``<prefix>.manifest.json``."""
    from .config import config_hash, to_dict

    cfg = cfg.resolved()
    table = cfg.behavior_table()
    n_segments = max(1, math.ceil(cfg.generator.duration / cfg.generator.tau - 1e-9))
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create {out_dir}: {e.strerror}") from None
    dataset = build_dataset(cfg, table_offset=table.offset, n_segments=n_segments)
    files = {
        "pcap": os.path.join(out_dir, f"{prefix}.pcap"),
        "labels": os.path.join(out_dir, f"{prefix}.labels.tsv"),
        "manifest": os.path.join(out_dir, f"{prefix}.manifest.json"),
    }
    h = config_hash(cfg)
    try:
        write_pcap(files["pcap"], dataset, table)
        with open(files["labels"], "w", encoding="utf-8") as fh:
            fh.write(f"# config_hash {h}\n")
            for f in dataset.flows:
                fh.write(f"{f.endpoint.terminal_ip}\t{f.label}\n")
        doc = manifest(dataset, cfg, files, to_dict(cfg), h, n_segments)
        with open(files["manifest"], "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")
    except OSError as e:
        raise DataError(f"cannot write dataset: {e}") from None
    log.info("wrote %d flows, %d records to %s", len(dataset.flows), len(dataset.ts), files["pcap"])
    return files, doc
