"""Classic PCAP reading/writing and Ethernet/IPv4/TCP decoding.

Only the libpcap format is handled (no pcapng), with link types 1 (Ethernet)
and 101 (raw IPv4). Everything here is pure ``struct`` work; no lengths from
the wire are trusted before being checked against the captured bytes.
"""

import struct
from dataclasses import dataclass, field
from ipaddress import IPv4Address

from .behavior import ZERO, extract_behavior_code
from .errors import BadMagic, MalformedPacket, TruncatedHeader, TruncatedRecord

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101

MAGIC_USEC = 0xA1B2C3D4
MAGIC_NSEC = 0xA1B23C4D

GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16

FIN, SYN, RST, PSH, ACK, URG = 0x01, 0x02, 0x04, 0x08, 0x10, 0x20

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_VLAN = 0x8100
IPPROTO_TCP = 6
IPPROTO_UDP = 17


@dataclass(frozen=True)
class CaptureHeader:
    magic: int
    version: tuple
    snaplen: int
    link_type: int
    resolution: str  # "micro" | "nano"
    byte_order: str  # "little" | "big"

    @property
    def endian(self):
        return "<" if self.byte_order == "little" else ">"

    @property
    def ticks_per_second(self):
        return 1_000_000 if self.resolution == "micro" else 1_000_000_000


def read_header(raw):
    if len(raw) < GLOBAL_HEADER_LEN:
        raise TruncatedHeader(f"capture header needs {GLOBAL_HEADER_LEN} bytes, got {len(raw)}")
    (magic_le,) = struct.unpack_from("<I", raw, 0)
    for value, resolution in ((MAGIC_USEC, "micro"), (MAGIC_NSEC, "nano")):
        if magic_le == value:
            order = "little"
            break
        if magic_le == int.from_bytes(value.to_bytes(4, "little"), "big"):
            order = "big"
            break
    else:
        raise BadMagic(f"unknown capture magic 0x{magic_le:08x}")
    endian = "<" if order == "little" else ">"
    _, major, minor, _zone, _sigfigs, snaplen, link_type = struct.unpack_from(endian + "IHHiIII", raw, 0)
    return CaptureHeader(magic_le, (major, minor), snaplen, link_type, resolution, order)


def parse_capture(raw):
    """Validate the global header and return ``(header, records)``.

    ``records`` lazily yields ``(timestamp, record_bytes)``. A record whose
    header or body runs past the end of the data raises ``TruncatedRecord``
    after every complete record before it has been yielded.
    """
    raw = memoryview(raw)
    header = read_header(raw)
    return header, _records(raw, header)


def _records(raw, header):
    rec = struct.Struct(header.endian + "IIII")
    scale = header.ticks_per_second
    pos = GLOBAL_HEADER_LEN
    end = len(raw)
    n = 0
    while pos < end:
        if end - pos < RECORD_HEADER_LEN:
            raise TruncatedRecord(
                f"record {n}: header needs {RECORD_HEADER_LEN} bytes, {end - pos} left", n
            )
        ts_sec, ts_frac, incl_len, _orig_len = rec.unpack_from(raw, pos)
        pos += RECORD_HEADER_LEN
        if incl_len > end - pos:
            raise TruncatedRecord(
                f"record {n}: declares {incl_len} captured bytes, {end - pos} left", n
            )
        yield ts_sec + ts_frac / scale, bytes(raw[pos:pos + incl_len])
        pos += incl_len
        n += 1


@dataclass(slots=True)
class ParsedPacket:
    timestamp: float
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    payload_len: int
    tcp_flags: int
    behavior_code: int = ZERO
    protocol: int = IPPROTO_TCP

    @property
    def src(self):
        return (self.src_ip, self.src_port)

    @property
    def dst(self):
        return (self.dst_ip, self.dst_port)


class SkipReason:
    NOT_IPV4 = "not_ipv4"
    NOT_TCP = "not_tcp"
    FRAGMENT = "fragment"


def decode_packet(record, link_type, table):
    """Decode one captured frame.

    Returns a ``ParsedPacket``, or a ``SkipReason`` string for frames that are
    legal but not IPv4/TCP. Raises ``MalformedPacket`` when a declared length
    points past the captured bytes.
    """
    n = len(record)
    if link_type == LINKTYPE_ETHERNET:
        if n < 14:
            raise MalformedPacket(f"ethernet frame of {n} bytes")
        (ethertype,) = struct.unpack_from(">H", record, 12)
        off = 14
        if ethertype == ETHERTYPE_VLAN:
            if n < 18:
                raise MalformedPacket("truncated 802.1Q tag")
            (ethertype,) = struct.unpack_from(">H", record, 16)
            off = 18
        if ethertype != ETHERTYPE_IPV4:
            return SkipReason.NOT_IPV4
    elif link_type == LINKTYPE_RAW:
        off = 0
    else:
        raise MalformedPacket(f"unsupported link type {link_type}")

    if n - off < 20:
        if n - off >= 1 and record[off] >> 4 != 4:
            return SkipReason.NOT_IPV4
        raise MalformedPacket("truncated IPv4 header")
    ver_ihl = record[off]
    if ver_ihl >> 4 != 4:
        return SkipReason.NOT_IPV4
    ihl = (ver_ihl & 0x0F) * 4
    (total_len,) = struct.unpack_from(">H", record, off + 2)
    (frag,) = struct.unpack_from(">H", record, off + 6)
    proto = record[off + 9]
    if ihl < 20 or total_len < ihl:
        raise MalformedPacket(f"IPv4 header length {ihl} / total length {total_len}")
    if total_len > n - off:
        raise MalformedPacket(f"IPv4 total length {total_len} exceeds {n - off} captured bytes")
    if proto != IPPROTO_TCP:
        return SkipReason.NOT_TCP
    if frag & 0x3FFF:  # MF flag or nonzero offset
        return SkipReason.FRAGMENT
    src_ip = str(IPv4Address(bytes(record[off + 12:off + 16])))
    dst_ip = str(IPv4Address(bytes(record[off + 16:off + 20])))

    tcp = off + ihl
    if total_len - ihl < 20:
        raise MalformedPacket("truncated TCP header")
    src_port, dst_port = struct.unpack_from(">HH", record, tcp)
    data_off = (record[tcp + 12] >> 4) * 4
    flags = record[tcp + 13]
    if data_off < 20 or data_off > total_len - ihl:
        raise MalformedPacket(f"TCP data offset {data_off} invalid for segment of {total_len - ihl} bytes")
    payload_len = total_len - ihl - data_off
    payload = record[tcp + data_off:tcp + data_off + payload_len]
    code = extract_behavior_code(payload, table) if payload_len else ZERO
    return ParsedPacket(0.0, src_ip, dst_ip, src_port, dst_port, payload_len, flags, code)


@dataclass
class IngestStats:
    records: int = 0
    tcp_packets: int = 0
    skipped: dict = field(default_factory=lambda: {
        SkipReason.NOT_IPV4: 0, SkipReason.NOT_TCP: 0, SkipReason.FRAGMENT: 0,
    })
    first_ts: float = None
    last_ts: float = None
    link_type: int = None

    def to_dict(self):
        return {
            "records": self.records,
            "tcp_packets": self.tcp_packets,
            "skipped": dict(self.skipped),
            "first_ts": self.first_ts,
            "last_ts": self.last_ts,
            "link_type": self.link_type,
        }


def ingest_bytes(raw, table):
    """Parse and decode a whole capture. Returns ``(packets, stats)``."""
    header, records = parse_capture(raw)
    stats = IngestStats(link_type=header.link_type)
    packets = []
    for ts, frame in records:
        stats.records += 1
        if stats.first_ts is None or ts < stats.first_ts:
            stats.first_ts = ts
        if stats.last_ts is None or ts > stats.last_ts:
            stats.last_ts = ts
        pkt = decode_packet(frame, header.link_type, table)
        if isinstance(pkt, str):
            stats.skipped[pkt] += 1
            continue
        pkt.timestamp = ts
        packets.append(pkt)
        stats.tcp_packets += 1
    return packets, stats


def ingest_file(path, table):
    with open(path, "rb") as fh:
        return ingest_bytes(fh.read(), table)


# --- writing ---------------------------------------------------------------

def global_header(link_type=LINKTYPE_ETHERNET, snaplen=65535, nano=False, byte_order="little"):
    endian = "<" if byte_order == "little" else ">"
    magic = MAGIC_NSEC if nano else MAGIC_USEC
    return struct.pack(endian + "IHHiIII", magic, 2, 4, 0, 0, snaplen, link_type)


def record_header(ts_sec, ts_frac, incl_len, orig_len=None, byte_order="little"):
    endian = "<" if byte_order == "little" else ">"
    return struct.pack(endian + "IIII", ts_sec, ts_frac, incl_len,
                       incl_len if orig_len is None else orig_len)


def ipv4_checksum(header):
    s = sum(struct.unpack(f">{len(header) // 2}H", header))
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return ~s & 0xFFFF


def _mac(ip):
    return b"\x02\x00" + IPv4Address(ip).packed


def ipv4_packet(src_ip, dst_ip, proto, body, ident=0, ttl=64):
    hdr = struct.pack(">BBHHHBBH4s4s", 0x45, 0, 20 + len(body), ident & 0xFFFF, 0x4000,
                      ttl, proto, 0, IPv4Address(src_ip).packed, IPv4Address(dst_ip).packed)
    hdr = hdr[:10] + struct.pack(">H", ipv4_checksum(hdr)) + hdr[12:]
    return hdr + body


def ethernet_frame(src_ip, dst_ip, ip_packet):
    return _mac(dst_ip) + _mac(src_ip) + struct.pack(">H", ETHERTYPE_IPV4) + ip_packet


def tcp_frame(src_ip, src_port, dst_ip, dst_port, flags, payload=b"", seq=0, ack=0, ident=0):
    """Ethernet/IPv4/TCP frame with a 20-byte TCP header (checksum left zero)."""
    tcp = struct.pack(">HHIIBBHHH", src_port, dst_port, seq & 0xFFFFFFFF, ack & 0xFFFFFFFF,
                      5 << 4, flags, 65535, 0, 0) + payload
    return ethernet_frame(src_ip, dst_ip, ipv4_packet(src_ip, dst_ip, IPPROTO_TCP, tcp, ident))


def udp_frame(src_ip, src_port, dst_ip, dst_port, payload=b"", ident=0):
    udp = struct.pack(">HHHH", src_port, dst_port, 8 + len(payload), 0) + payload
    return ethernet_frame(src_ip, dst_ip, ipv4_packet(src_ip, dst_ip, IPPROTO_UDP, udp, ident))


class PcapWriter:
    """Writes microsecond-resolution little-endian captures.

    Timestamps are given as integer microseconds since the epoch so that the
    file content never depends on float rounding.
    """

    def __init__(self, fh, link_type=LINKTYPE_ETHERNET, snaplen=65535):
        self.fh = fh
        self.fh.write(global_header(link_type, snaplen))
        self.count = 0

    def write(self, ts_us, frame):
        sec, usec = divmod(int(ts_us), 1_000_000)
        self.fh.write(record_header(sec, usec, len(frame)))
        self.fh.write(frame)
        self.count += 1
