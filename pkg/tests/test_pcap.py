import io
import struct

import dpkt
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridterm.behavior import STATE_INDEX, ZERO, BehaviorCodeTable, extract_behavior_code
from gridterm.errors import (
    BadMagic,
    GridtermError,
    MalformedPacket,
    PcapError,
    TruncatedHeader,
    TruncatedRecord,
)
from gridterm.pcap import (
    ACK,
    FIN,
    LINKTYPE_ETHERNET,
    LINKTYPE_RAW,
    PSH,
    RST,
    SYN,
    PcapWriter,
    SkipReason,
    decode_packet,
    ingest_bytes,
    parse_capture,
    read_header,
    tcp_frame,
    udp_frame,
)

TABLE = BehaviorCodeTable.default()


def hand_header(magic_bytes, link_type=1, endian="<"):
    return magic_bytes + struct.pack(endian + "HHiIII", 2, 4, 0, 0, 65535, link_type)


def test_big_endian_empty_capture():
    raw = hand_header(bytes.fromhex("a1b2c3d4"), endian=">")
    header, records = parse_capture(raw)
    assert header.byte_order == "big"
    assert header.resolution == "micro"
    assert list(records) == []


def test_single_60_byte_record():
    body = bytes(range(60))
    raw = hand_header(bytes.fromhex("d4c3b2a1")) + struct.pack("<IIII", 1000, 250000, 60, 60) + body
    header, records = parse_capture(raw)
    items = list(records)
    assert header.byte_order == "little"
    assert len(items) == 1
    ts, data = items[0]
    assert ts == pytest.approx(1000.25, abs=1e-9)
    assert data == body


def test_nanosecond_big_endian_timestamps():
    raw = (hand_header(bytes.fromhex("a1b23c4d"), endian=">")
           + struct.pack(">IIII", 7, 123456789, 4, 4) + b"abcd")
    header, records = parse_capture(raw)
    assert header.resolution == "nano"
    ((ts, data),) = list(records)
    assert ts == pytest.approx(7.123456789, abs=1e-9)
    assert data == b"abcd"


def test_zero_magic_is_bad():
    with pytest.raises(BadMagic):
        read_header(b"\x00" * 24)


def test_short_header():
    with pytest.raises(TruncatedHeader):
        read_header(hand_header(bytes.fromhex("d4c3b2a1"))[:20])


def test_truncated_final_record_is_reported():
    rec = struct.pack("<IIII", 1, 0, 10, 10) + b"x" * 10
    raw = hand_header(bytes.fromhex("d4c3b2a1")) + rec + struct.pack("<IIII", 2, 0, 10, 10) + b"x" * 4
    _, records = parse_capture(raw)
    got = []
    with pytest.raises(TruncatedRecord) as e:
        for item in records:
            got.append(item)
    assert len(got) == 1
    assert e.value.records_ok == 1


def dpkt_tcp(flags, payload=b"", ip_opts=b"", tcp_opts=b"", src="10.1.0.5", dst="10.0.0.1", sport=40001, dport=9001):
    tcp = dpkt.tcp.TCP(sport=sport, dport=dport, flags=flags, opts=tcp_opts, data=payload)
    tcp.off = (20 + len(tcp_opts)) // 4
    ip = dpkt.ip.IP(src=bytes(map(int, src.split("."))), dst=bytes(map(int, dst.split("."))),
                    p=dpkt.ip.IP_PROTO_TCP, opts=ip_opts, data=tcp)
    ip.hl = (20 + len(ip_opts)) // 4
    ip.len = len(ip)
    eth = dpkt.ethernet.Ethernet(src=b"\x02\x00\x00\x00\x00\x01", dst=b"\x02\x00\x00\x00\x00\x02",
                                 type=dpkt.ethernet.ETH_TYPE_IP, data=ip)
    return bytes(eth)


def test_minimal_syn_matches_dissector():
    frame = dpkt_tcp(dpkt.tcp.TH_SYN)
    p = decode_packet(frame, LINKTYPE_ETHERNET, TABLE)
    ref = dpkt.ethernet.Ethernet(frame)
    assert p.payload_len == len(ref.data.data.data) == 0
    assert p.tcp_flags == ref.data.data.flags == SYN
    assert p.behavior_code == ZERO
    assert (p.src_ip, p.src_port, p.dst_ip, p.dst_port) == ("10.1.0.5", 40001, "10.0.0.1", 9001)


@settings(max_examples=200, deadline=None)
@given(
    payload=st.binary(max_size=300),
    ip_words=st.integers(0, 10),
    tcp_words=st.integers(0, 10),
    flags=st.integers(0, 63),
    sport=st.integers(0, 65535),
    dport=st.integers(0, 65535),
)
def test_decode_agrees_with_dissector(payload, ip_words, tcp_words, flags, sport, dport):
    # options are padded NOPs (type 1), which the dissector keeps as raw bytes
    frame = dpkt_tcp(flags, payload, b"\x01" * 4 * ip_words, b"\x01" * 4 * tcp_words, sport=sport, dport=dport)
    p = decode_packet(frame, LINKTYPE_ETHERNET, TABLE)
    ref = dpkt.ethernet.Ethernet(frame)
    seg = ref.data.data
    assert p.payload_len == len(seg.data) == len(payload)
    assert p.tcp_flags == seg.flags
    assert (p.src_port, p.dst_port) == (seg.sport, seg.dport)
    expected = TABLE.mapping[payload[0]] if payload else ZERO
    assert p.behavior_code == expected


def test_writer_frames_parse_in_dissector():
    frame = tcp_frame("10.1.0.9", 41000, "10.0.0.1", 9001, PSH | ACK, b"\x05" + b"\x00" * 30, seq=7, ack=9)
    ref = dpkt.ethernet.Ethernet(frame)
    assert ref.data.sum == dpkt.ip.IP(bytes(ref.data)).sum  # header checksum consistent
    assert ref.data.data.data == b"\x05" + b"\x00" * 30
    p = decode_packet(frame, LINKTYPE_ETHERNET, TABLE)
    assert p.behavior_code == STATE_INDEX["R1"]


def test_arp_and_udp_are_skipped():
    arp = b"\xff" * 6 + b"\x02" * 6 + b"\x08\x06" + b"\x00" * 28
    assert decode_packet(arp, LINKTYPE_ETHERNET, TABLE) == SkipReason.NOT_IPV4
    udp = udp_frame("10.0.0.1", 53, "10.0.0.2", 53, b"hello")
    assert decode_packet(udp, LINKTYPE_ETHERNET, TABLE) == SkipReason.NOT_TCP


def test_raw_ipv4_and_vlan_links():
    frame = dpkt_tcp(dpkt.tcp.TH_ACK, b"\x0a" * 12)
    raw_ip = frame[14:]
    p = decode_packet(raw_ip, LINKTYPE_RAW, TABLE)
    assert p.payload_len == 12
    vlan = frame[:12] + b"\x81\x00\x00\x05" + frame[12:]
    q = decode_packet(vlan, LINKTYPE_ETHERNET, TABLE)
    assert q.payload_len == 12 and q.behavior_code == p.behavior_code


def test_declared_length_past_capture_is_malformed():
    frame = dpkt_tcp(dpkt.tcp.TH_ACK, b"\x01" * 20)
    with pytest.raises(MalformedPacket):
        decode_packet(frame[:-5], LINKTYPE_ETHERNET, TABLE)


def test_fragments_are_skipped():
    frame = bytearray(dpkt_tcp(dpkt.tcp.TH_ACK, b"\x01" * 8))
    frame[14 + 6] = 0x20  # MF
    assert decode_packet(bytes(frame), LINKTYPE_ETHERNET, TABLE) == SkipReason.FRAGMENT


def test_unsupported_link_type():
    with pytest.raises(MalformedPacket):
        decode_packet(b"\x00" * 60, 105, TABLE)


def test_behavior_code_lookup():
    assert extract_behavior_code(b"", TABLE) == ZERO
    r3 = TABLE.code_for("R3")
    assert extract_behavior_code(bytes([r3, 0, 0]), TABLE) == STATE_INDEX["R3"]
    far = BehaviorCodeTable(5, TABLE.mapping)
    assert extract_behavior_code(bytes([r3] * 5), far) == ZERO
    assert extract_behavior_code(bytes([0] * 5 + [r3]), far) == STATE_INDEX["R3"]
    assert extract_behavior_code(b"\xff", TABLE) == ZERO  # unmapped


def small_capture(n=6):
    buf = io.BytesIO()
    w = PcapWriter(buf)
    for i in range(n):
        flags = [SYN, SYN | ACK, ACK, PSH | ACK, FIN | ACK, RST][i % 6]
        w.write(1_600_000_000_000_000 + i * 1000, tcp_frame("10.1.0.1", 40000, "10.0.0.1", 9001, flags,
                                                              bytes([i % 16]) * (i * 3)))
    w.write(1_600_000_000_010_000, udp_frame("10.0.0.1", 1, "10.0.0.2", 2, b"zz"))
    return buf.getvalue()


def test_ingest_counts_and_timestamps():
    packets, stats = ingest_bytes(small_capture(), TABLE)
    assert stats.records == 7
    assert stats.tcp_packets == 6
    assert stats.skipped[SkipReason.NOT_TCP] == 1
    assert [p.payload_len for p in packets] == [0, 3, 6, 9, 12, 15]
    assert packets[1].timestamp - packets[0].timestamp == pytest.approx(1e-3, abs=1e-6)
    for p in packets:
        assert (p.behavior_code == ZERO) == (p.payload_len == 0 or TABLE.mapping[p.payload_len // 3 % 16] == ZERO)


def test_ingest_agrees_with_dissector_reader():
    raw = small_capture()
    ours, _ = ingest_bytes(raw, TABLE)
    ref = [(ts, dpkt.ethernet.Ethernet(buf)) for ts, buf in dpkt.pcap.Reader(io.BytesIO(raw))]
    ref_tcp = [(ts, e) for ts, e in ref if isinstance(e.data, dpkt.ip.IP) and isinstance(e.data.data, dpkt.tcp.TCP)]
    assert len(ours) == len(ref_tcp)
    for p, (ts, e) in zip(ours, ref_tcp):
        assert p.timestamp == pytest.approx(ts, abs=1e-6)
        assert p.payload_len == len(e.data.data.data)
        assert p.tcp_flags == e.data.data.flags


def test_fuzzed_captures_only_raise_library_errors():
    base = small_capture()
    rng = np.random.default_rng(1234)
    n_errors = 0
    for _ in range(10_000):
        data = bytearray(base)
        op = rng.integers(3)
        if op == 0:
            for pos in rng.integers(0, len(data), rng.integers(1, 8)):
                data[pos] = int(rng.integers(256))
        elif op == 1:
            data = data[: int(rng.integers(0, len(data)))]
        else:
            pos = int(rng.integers(0, len(data)))
            data[pos:pos] = rng.integers(0, 256, int(rng.integers(1, 16))).astype(np.uint8).tobytes()
        try:
            ingest_bytes(bytes(data), TABLE)
        except PcapError:
            n_errors += 1
        except GridtermError as e:  # pragma: no cover - would indicate a wrongly classified failure
            pytest.fail(f"non-capture error from fuzzed input: {e!r}")
    assert n_errors > 0
