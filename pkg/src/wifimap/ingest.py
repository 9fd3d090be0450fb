"""Offline capture ingestion: pcap -> (anchor_id, mac, rssi) packet list.

Reads classic pcap files whose records are radiotap-encapsulated 802.11
frames (link type 127), extracts the transmitter MAC and the dBm antenna
signal, and assigns packets to anchors via a sidecar of timestamp
intervals recorded while the user paused at each walk stop. Only header
regions are ever parsed; payloads beyond the 802.11 addresses are never
inspected.
"""

from __future__ import annotations

import json
import struct
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import IO, Optional

from .model import Packet, SchemaError

PCAP_MAGIC_US = 0xA1B2C3D4
PCAP_MAGIC_NS = 0xA1B23C4D
LINKTYPE_RADIOTAP = 127

# First radiotap presence word, bits 0..5 (size, alignment); higher bits are
# skipped wholesale via the declared header length.
_RADIOTAP_FIELDS = (
    (8, 8),  # TSFT
    (1, 1),  # Flags
    (1, 1),  # Rate
    (4, 2),  # Channel: u16 freq + u16 flags
    (2, 1),  # FHSS: two u8
    (1, 1),  # dBm antenna signal (signed)
)
_BIT_CHANNEL = 3
_BIT_DBM_SIGNAL = 5

MGMT, CONTROL, DATA = "management", "control", "data"
# Control subtypes whose second address sits at byte 10: block-ack-req,
# block-ack, ps-poll, rts, cf-end, cf-end+cf-ack. ACK (13) and CTS (12) have
# no transmitter address.
_CONTROL_WITH_ADDR2 = {8, 9, 10, 11, 14, 15}


class IngestError(ValueError):
    pass


class UnsupportedVersion(IngestError):
    """Radiotap header version other than 0."""


class Truncated(IngestError):
    """Buffer ends before a declared structure does."""


class UnsupportedLinkType(IngestError):
    """pcap link type is not radiotap-encapsulated 802.11."""


class MalformedFrame(IngestError):
    """802.11 frame that cannot carry a measurement (e.g. extension type)."""


@dataclass(frozen=True)
class RadiotapInfo:
    header_len: int
    dbm_antenna_signal: Optional[int] = None
    channel_mhz: Optional[int] = None


@dataclass(frozen=True)
class FrameInfo:
    transmitter_mac: Optional[str]
    frame_type: str
    timestamp_us: int = 0


@dataclass(frozen=True)
class AnchorMarkers:
    """Ordered, non-overlapping (anchor_id, t_start_us, t_end_us) intervals."""

    intervals: tuple[tuple[str, int, int], ...]

    def __post_init__(self):
        prev_end = None
        for anchor_id, start, end in self.intervals:
            if start >= end:
                raise ValueError(f"empty marker interval for {anchor_id!r}: [{start}, {end}]")
            if prev_end is not None and start <= prev_end:
                raise ValueError(f"marker intervals overlap or are out of order at {anchor_id!r}")
            prev_end = end

    def anchor_for(self, t_us: int) -> Optional[str]:
        starts = [iv[1] for iv in self.intervals]
        k = bisect_right(starts, t_us) - 1
        if k >= 0 and self.intervals[k][1] <= t_us <= self.intervals[k][2]:
            return self.intervals[k][0]
        return None


@dataclass(frozen=True)
class IngestResult:
    packets: tuple[Packet, ...]
    counters: dict[str, int] = field(default_factory=dict)

    def __iter__(self):
        return iter(self.packets)

    def __len__(self):
        return len(self.packets)


def parse_radiotap(data: bytes) -> RadiotapInfo:
    """Parse the radiotap preamble of one captured record.

    Walks the first presence word's low bits to find the dBm antenna
    signal and channel; any further fields are skipped via the declared
    header length. Never reads past that length or the buffer.
    """
    if len(data) < 8:
        raise Truncated(f"radiotap header needs 8 bytes, have {len(data)}")
    version, _pad, header_len = struct.unpack_from("<BBH", data, 0)
    if version != 0:
        raise UnsupportedVersion(f"radiotap version {version}")
    if header_len > len(data):
        raise Truncated(f"declared header length {header_len} exceeds buffer {len(data)}")
    if header_len < 8:
        raise Truncated(f"declared header length {header_len} below minimum 8")

    (present,) = struct.unpack_from("<I", data, 4)
    offset = 8
    words = present
    while words & (1 << 31):  # chained extension presence words
        if offset + 4 > header_len:
            raise Truncated("presence-word chain exceeds declared header length")
        (words,) = struct.unpack_from("<I", data, offset)
        offset += 4

    signal: Optional[int] = None
    channel: Optional[int] = None
    for bit, (size, align) in enumerate(_RADIOTAP_FIELDS):
        if not present & (1 << bit):
            continue
        offset += -offset % align  # alignment is relative to the header start
        if offset + size > header_len:
            raise Truncated(f"radiotap field at bit {bit} exceeds declared header length")
        if bit == _BIT_CHANNEL:
            channel = struct.unpack_from("<H", data, offset)[0]
        elif bit == _BIT_DBM_SIGNAL:
            signal = struct.unpack_from("<b", data, offset)[0]
        offset += size
    return RadiotapInfo(header_len=header_len, dbm_antenna_signal=signal, channel_mhz=channel)


def _format_mac(raw: bytes) -> str:
    return ":".join(f"{b:02x}" for b in raw)


def parse_frame(data: bytes, timestamp_us: int = 0) -> FrameInfo:
    """Classify an 802.11 frame and pull its transmitter address if present."""
    if len(data) < 2:
        raise Truncated("frame control field missing")
    (fc,) = struct.unpack_from("<H", data, 0)
    ftype = (fc >> 2) & 0x3
    subtype = (fc >> 4) & 0xF

    if ftype == 0:
        frame_type = MGMT
    elif ftype == 1:
        frame_type = CONTROL
    elif ftype == 2:
        frame_type = DATA
    else:
        raise MalformedFrame(f"unsupported 802.11 frame type {ftype}")

    has_addr2 = frame_type in (MGMT, DATA) or (frame_type == CONTROL and subtype in _CONTROL_WITH_ADDR2)
    if not has_addr2:
        return FrameInfo(None, frame_type, timestamp_us)
    if len(data) < 16:  # address 2 occupies bytes 10..15
        raise Truncated(f"{frame_type} frame of {len(data)} bytes cannot hold address 2")
    return FrameInfo(_format_mac(data[10:16]), frame_type, timestamp_us)


def ingest_pcap(data: bytes, markers: AnchorMarkers) -> IngestResult:
    """Turn one capture file into the raw packet list for aggregation.

    Records lacking a signal value or a transmitter MAC, or falling outside
    every marker interval, are dropped; malformed records are skipped. All
    drops are tallied in the result's counters.
    """
    if len(data) < 24:
        raise Truncated(f"pcap global header needs 24 bytes, have {len(data)}")
    (raw_magic,) = struct.unpack_from("<I", data, 0)
    if raw_magic in (PCAP_MAGIC_US, PCAP_MAGIC_NS):
        endian = "<"
        nanosecond = raw_magic == PCAP_MAGIC_NS
    else:
        (swapped,) = struct.unpack_from(">I", data, 0)
        if swapped not in (PCAP_MAGIC_US, PCAP_MAGIC_NS):
            raise IngestError(f"not a pcap file (magic 0x{raw_magic:08X})")
        endian = ">"
        nanosecond = swapped == PCAP_MAGIC_NS
    _vmaj, _vmin, _zone, _sigfigs, _snaplen, network = struct.unpack_from(endian + "HHiIII", data, 4)
    if network != LINKTYPE_RADIOTAP:
        raise UnsupportedLinkType(f"pcap link type {network}, expected {LINKTYPE_RADIOTAP}")

    packets: list[Packet] = []
    counters = {
        "records": 0,
        "skipped_malformed": 0,
        "dropped_no_signal": 0,
        "dropped_no_mac": 0,
        "dropped_outside_markers": 0,
    }

    offset = 24
    while offset < len(data):
        if offset + 16 > len(data):
            counters["skipped_malformed"] += 1
            break
        ts_sec, ts_frac, incl_len, _orig_len = struct.unpack_from(endian + "IIII", data, offset)
        offset += 16
        if offset + incl_len > len(data):
            counters["skipped_malformed"] += 1
            break
        record = data[offset:offset + incl_len]
        offset += incl_len
        counters["records"] += 1

        timestamp_us = ts_sec * 1_000_000 + (ts_frac // 1000 if nanosecond else ts_frac)
        try:
            radiotap = parse_radiotap(record)
            frame = parse_frame(record[radiotap.header_len:], timestamp_us)
        except IngestError:
            counters["skipped_malformed"] += 1
            continue
        if radiotap.dbm_antenna_signal is None:
            counters["dropped_no_signal"] += 1
            continue
        if frame.transmitter_mac is None:
            counters["dropped_no_mac"] += 1
            continue
        anchor_id = markers.anchor_for(timestamp_us)
        if anchor_id is None:
            counters["dropped_outside_markers"] += 1
            continue
        packets.append((anchor_id, frame.transmitter_mac, float(radiotap.dbm_antenna_signal)))

    return IngestResult(tuple(packets), counters)


def read_markers_jsonl(fp: IO[str]) -> AnchorMarkers:
    intervals = []
    for lineno, line in enumerate(fp, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            intervals.append((str(obj["anchor_id"]), int(obj["t_start_us"]), int(obj["t_end_us"])))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad marker record on line {lineno}: {exc}") from exc
    try:
        return AnchorMarkers(tuple(intervals))
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc
