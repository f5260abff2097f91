"""IVSG segment container: the on-disk form of one recording segment.

Layout (big-endian)::

    header   "IVSG" | version u8=1 | vehicle_id u32 | start_t u64      17 bytes
    record   type u8 (1 frame, 2 telemetry) | t u64 | payload_len u32 | payload

Vehicle, server and user all write this format so one validator serves all
three.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .protocol.telemetry import TelemetryParseError, parse_telemetry

MAGIC = b"IVSG"
VERSION = 1
HEADER = struct.Struct(">4sBIQ")
RECORD = struct.Struct(">BQI")
HEADER_SIZE = HEADER.size
RECORD_OVERHEAD = RECORD.size

FRAME = 0x01
TELEMETRY = 0x02


class ContainerError(ValueError):
    def __init__(self, msg: str, offset: int) -> None:
        self.offset = offset
        super().__init__(f"{msg} (at byte {offset})")


@dataclass(frozen=True)
class Record:
    type: int
    t: int
    payload: bytes

    @property
    def size(self) -> int:
        return RECORD_OVERHEAD + len(self.payload)


@dataclass(frozen=True)
class Container:
    vehicle_id: int
    start_t: int
    records: tuple[Record, ...]

    @property
    def frames(self) -> list[Record]:
        return [r for r in self.records if r.type == FRAME]

    @property
    def telemetry(self) -> list[Record]:
        return [r for r in self.records if r.type == TELEMETRY]


def pack_header(vehicle_id: int, start_t: int) -> bytes:
    return HEADER.pack(MAGIC, VERSION, vehicle_id, start_t)


def pack_record(rtype: int, t: int, payload: bytes) -> bytes:
    return RECORD.pack(rtype, t, len(payload)) + payload


def iter_records(data: bytes, offset: int = HEADER_SIZE) -> Iterator[Record]:
    n = len(data)
    while offset < n:
        if n - offset < RECORD_OVERHEAD:
            raise ContainerError("truncated record header", offset)
        rtype, t, plen = RECORD.unpack_from(data, offset)
        if rtype not in (FRAME, TELEMETRY):
            raise ContainerError(f"unknown record type {rtype:#x}", offset)
        start = offset + RECORD_OVERHEAD
        if n - start < plen:
            raise ContainerError("truncated record payload", offset)
        yield Record(rtype, t, bytes(data[start:start + plen]))
        offset = start + plen


def parse_container(data: bytes) -> Container:
    if len(data) < HEADER_SIZE:
        raise ContainerError("truncated header", 0)
    magic, version, vehicle_id, start_t = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ContainerError("bad magic", 0)
    if version != VERSION:
        raise ContainerError(f"unsupported version {version}", 4)
    return Container(vehicle_id, start_t, tuple(iter_records(data)))


def read_container(path: str | os.PathLike) -> Container:
    return parse_container(Path(path).read_bytes())


def validate_container(data: bytes) -> Container:
    """Parse and also check that every telemetry payload is a well-formed line
    belonging to the header's vehicle."""
    c = parse_container(data)
    offset = HEADER_SIZE
    for rec in c.records:
        if rec.type == TELEMETRY:
            try:
                sample, vid = parse_telemetry(rec.payload.decode("ascii"))
            except (UnicodeDecodeError, TelemetryParseError) as exc:
                raise ContainerError(f"bad telemetry record: {exc}", offset) from None
            if vid != c.vehicle_id:
                raise ContainerError("telemetry for another vehicle", offset)
            if sample.t != rec.t:
                raise ContainerError("telemetry timestamp differs from record", offset)
        offset += rec.size
    return c


def container_bytes(vehicle_id: int, start_t: int, records: Iterable[Record]) -> bytes:
    buf = io.BytesIO()
    buf.write(pack_header(vehicle_id, start_t))
    for r in records:
        buf.write(pack_record(r.type, r.t, r.payload))
    return buf.getvalue()


class CountingSink:
    """Byte accounting only; nothing is retained."""

    def __init__(self) -> None:
        self.size = 0

    def reset(self, vehicle_id: int, start_t: int) -> None:
        self.size = HEADER_SIZE

    def append(self, rtype: int, t: int, payload: bytes) -> None:
        self.size += RECORD_OVERHEAD + len(payload)

    def flush(self) -> None:
        pass

    def getvalue(self) -> bytes:
        raise NotImplementedError("CountingSink keeps no bytes")

    def close(self) -> None:
        pass


class MemorySink(CountingSink):
    def __init__(self) -> None:
        super().__init__()
        self._buf = bytearray()

    def reset(self, vehicle_id: int, start_t: int) -> None:
        self._buf = bytearray(pack_header(vehicle_id, start_t))
        self.size = len(self._buf)

    def append(self, rtype: int, t: int, payload: bytes) -> None:
        self._buf += RECORD.pack(rtype, t, len(payload))
        self._buf += payload
        self.size = len(self._buf)

    def getvalue(self) -> bytes:
        return bytes(self._buf)


class FileSink(CountingSink):
    """Container on disk.  ``reset`` truncates the file to a fresh header."""

    def __init__(self, path: str | os.PathLike) -> None:
        super().__init__()
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "wb")

    def reset(self, vehicle_id: int, start_t: int) -> None:
        self._fh.seek(0)
        self._fh.truncate()
        self._fh.write(pack_header(vehicle_id, start_t))
        self.size = HEADER_SIZE

    def append(self, rtype: int, t: int, payload: bytes) -> None:
        self._fh.write(RECORD.pack(rtype, t, len(payload)))
        self._fh.write(payload)
        self.size += RECORD_OVERHEAD + len(payload)

    def flush(self) -> None:
        if not self._fh.closed:
            self._fh.flush()

    def getvalue(self) -> bytes:
        self.flush()
        return self.path.read_bytes()

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()
