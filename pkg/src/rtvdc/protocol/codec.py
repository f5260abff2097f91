"""Datagram layout shared by vehicle, server and user.

Every datagram is a fixed 35-byte big-endian header followed by the payload::

    magic  "RTVC"     4
    version u8 = 1    1
    msg_type u8       1
    channel u8        1
    vehicle_id u32    4
    user_id u32       4
    seq u64           8
    t u64 (ms)        8
    payload_len u32   4

Control bodies:

    Login, UserEnable      credentials, UTF-8
    Running, StreamRequest, UserDisable   empty
    TerminateReport        cause u8 (0 stopped, 1 accident)
    AccidentNotify         detection u8 (1 turnover, 2 crash) | lat f64 | lon f64
    Ack                    ref msg_type u8 | info u8
    Reject                 ref msg_type u8 | reason u8

Video payload is the raw frame; data payload is one telemetry line.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass

from ..sensor_sim import AccidentKind
from .telemetry import TelemetryParseError, parse_telemetry

MAGIC = b"RTVC"
VERSION = 1
HEADER = struct.Struct(">4sBBBIIQQI")
HEADER_SIZE = HEADER.size
MAX_PAYLOAD = 60 * 1024

_U32 = 0xFFFF_FFFF
_U64 = 0xFFFF_FFFF_FFFF_FFFF


class MsgType(enum.IntEnum):
    LOGIN = 0x01
    RUNNING = 0x02
    STREAM_REQUEST = 0x03
    TERMINATE_REPORT = 0x04
    ACCIDENT_NOTIFY = 0x05
    USER_ENABLE = 0x06
    USER_DISABLE = 0x07
    ACK = 0x08
    REJECT = 0x09
    VIDEO = 0x10
    DATA = 0x11


class Channel(enum.IntEnum):
    CONTROL = 0
    VEHICLE_VIDEO_IN = 1
    VEHICLE_DATA_IN = 2
    USER_VIDEO_OUT = 3
    USER_DATA_OUT = 4


CONTROL_KINDS = frozenset(MsgType) - {MsgType.VIDEO, MsgType.DATA}
VEHICLE_KINDS = frozenset({MsgType.LOGIN, MsgType.RUNNING, MsgType.TERMINATE_REPORT,
                           MsgType.ACCIDENT_NOTIFY})
_ALLOWED_CHANNELS = {
    MsgType.VIDEO: (Channel.VEHICLE_VIDEO_IN, Channel.USER_VIDEO_OUT),
    MsgType.DATA: (Channel.VEHICLE_DATA_IN, Channel.USER_DATA_OUT),
}

REJECT_REASONS = {
    1: "not-registered",
    2: "bad-credentials",
    3: "malformed",
    4: "not-owner",
    5: "already-registered",
}
REASON_CODES = {v: k for k, v in REJECT_REASONS.items()}

TERMINATE_STOPPED = 0
TERMINATE_ACCIDENT = 1

ENABLE_LIVE = 1
ENABLE_REPLAY = 2

_DETECTION_CODES = {AccidentKind.TURNOVER: 1, AccidentKind.CRASH: 2}
_DETECTIONS = {v: k for k, v in _DETECTION_CODES.items()}
_ACCIDENT_BODY = struct.Struct(">Bdd")


class ProtocolError(ValueError):
    """Structured codec failure; ``code`` is a stable short string."""

    def __init__(self, code: str, detail: str = "") -> None:
        self.code = code
        super().__init__(f"{code}: {detail}" if detail else code)


@dataclass(frozen=True)
class ControlMessage:
    kind: MsgType
    vehicle_id: int = 0
    user_id: int = 0
    seq: int = 0
    t: int = 0
    credentials: str = ""
    detection: AccidentKind | None = None
    lat: float = 0.0
    lon: float = 0.0
    # TerminateReport cause, Ack info, or Reject reason code depending on kind.
    code: int = 0
    ref: MsgType | None = None

    @property
    def reason(self) -> str:
        return REJECT_REASONS.get(self.code, f"code-{self.code}")


@dataclass(frozen=True)
class VideoChunk:
    vehicle_id: int
    seq: int
    t: int
    payload: bytes
    channel: Channel = Channel.VEHICLE_VIDEO_IN
    user_id: int = 0


@dataclass(frozen=True)
class DataChunk:
    vehicle_id: int
    seq: int
    t: int
    text: str
    channel: Channel = Channel.VEHICLE_DATA_IN
    user_id: int = 0


Message = ControlMessage | VideoChunk | DataChunk


def reject(ref: MsgType, reason: str, vehicle_id: int = 0, user_id: int = 0, t: int = 0) -> ControlMessage:
    return ControlMessage(MsgType.REJECT, vehicle_id=vehicle_id, user_id=user_id, t=t,
                          ref=ref, code=REASON_CODES[reason])


def ack(ref: MsgType, info: int = 0, vehicle_id: int = 0, user_id: int = 0, t: int = 0) -> ControlMessage:
    return ControlMessage(MsgType.ACK, vehicle_id=vehicle_id, user_id=user_id, t=t, ref=ref, code=info)


def _check_ids(vehicle_id: int, user_id: int, seq: int, t: int) -> None:
    if not (0 <= vehicle_id <= _U32 and 0 <= user_id <= _U32):
        raise ProtocolError("invalid-message", "id out of u32 range")
    if not (0 <= seq <= _U64 and 0 <= t <= _U64):
        raise ProtocolError("invalid-message", "seq/t out of u64 range")


def _check_control(msg: ControlMessage) -> None:
    kind = msg.kind
    if kind in VEHICLE_KINDS and msg.vehicle_id == 0:
        raise ProtocolError("invalid-message", f"{kind.name} needs a vehicle_id")
    if kind is MsgType.USER_ENABLE and (msg.user_id == 0 or msg.vehicle_id == 0):
        raise ProtocolError("invalid-message", "USER_ENABLE needs user_id and vehicle_id")
    if kind is MsgType.USER_DISABLE and msg.user_id == 0:
        raise ProtocolError("invalid-message", "USER_DISABLE needs a user_id")
    if kind is MsgType.TERMINATE_REPORT and msg.code not in (TERMINATE_STOPPED, TERMINATE_ACCIDENT):
        raise ProtocolError("invalid-message", "terminate cause")
    if kind is MsgType.ACCIDENT_NOTIFY:
        if msg.detection is None:
            raise ProtocolError("invalid-message", "accident without detection kind")
        if not (math.isfinite(msg.lat) and math.isfinite(msg.lon)
                and -90 <= msg.lat <= 90 and -180 <= msg.lon <= 180):
            raise ProtocolError("invalid-message", "gps fix out of range")
    if kind in (MsgType.ACK, MsgType.REJECT):
        if msg.ref is None or not 0 <= msg.code <= 0xFF:
            raise ProtocolError("invalid-message", "ack/reject needs ref and u8 code")
        if kind is MsgType.REJECT and msg.code not in REJECT_REASONS:
            raise ProtocolError("invalid-message", "unknown reject reason")


def _control_body(msg: ControlMessage) -> bytes:
    kind = msg.kind
    if kind in (MsgType.LOGIN, MsgType.USER_ENABLE):
        return msg.credentials.encode("utf-8")
    if kind is MsgType.TERMINATE_REPORT:
        return bytes((msg.code,))
    if kind is MsgType.ACCIDENT_NOTIFY:
        return _ACCIDENT_BODY.pack(_DETECTION_CODES[msg.detection], msg.lat, msg.lon)
    if kind in (MsgType.ACK, MsgType.REJECT):
        return bytes((int(msg.ref), msg.code))
    return b""


def encode(msg: Message) -> bytes:
    if isinstance(msg, ControlMessage):
        _check_control(msg)
        channel, user_id = Channel.CONTROL, msg.user_id
        payload = _control_body(msg)
        msg_type = msg.kind
    elif isinstance(msg, VideoChunk):
        if msg.channel not in _ALLOWED_CHANNELS[MsgType.VIDEO] or msg.vehicle_id == 0:
            raise ProtocolError("invalid-message", "video chunk channel/vehicle")
        channel, user_id, payload, msg_type = msg.channel, msg.user_id, msg.payload, MsgType.VIDEO
    elif isinstance(msg, DataChunk):
        if msg.channel not in _ALLOWED_CHANNELS[MsgType.DATA] or msg.vehicle_id == 0:
            raise ProtocolError("invalid-message", "data chunk channel/vehicle")
        _check_data_text(msg.text, msg.vehicle_id)
        channel, user_id, msg_type = msg.channel, msg.user_id, MsgType.DATA
        payload = msg.text.encode("ascii")
    else:
        raise TypeError(f"cannot encode {type(msg).__name__}")
    _check_ids(msg.vehicle_id, user_id, msg.seq, msg.t)
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError("payload-too-large", f"{len(payload)} > {MAX_PAYLOAD}")
    header = HEADER.pack(MAGIC, VERSION, msg_type, channel, msg.vehicle_id, user_id,
                         msg.seq, msg.t, len(payload))
    return header + payload


def _check_data_text(text: str, vehicle_id: int) -> None:
    try:
        _, vid = parse_telemetry(text)
    except TelemetryParseError as exc:
        raise ProtocolError("bad-payload", str(exc)) from None
    if "\n" in text:
        raise ProtocolError("bad-payload", "newline in data text")
    if vid != vehicle_id:
        raise ProtocolError("bad-payload", "telemetry vehicle_id differs from header")


def decode(data: bytes) -> Message:
    """Parse one datagram; raises :class:`ProtocolError`, never anything else."""
    n = len(data)
    if data[:4] != MAGIC[:min(n, 4)]:
        raise ProtocolError("bad-magic")
    if n < HEADER_SIZE:
        raise ProtocolError("truncated", f"{n} < {HEADER_SIZE} header bytes")
    magic, version, raw_type, raw_channel, vid, uid, seq, t, plen = HEADER.unpack_from(data)
    if version != VERSION:
        raise ProtocolError("bad-version", str(version))
    try:
        msg_type = MsgType(raw_type)
    except ValueError:
        raise ProtocolError("unknown-type", hex(raw_type)) from None
    try:
        channel = Channel(raw_channel)
    except ValueError:
        raise ProtocolError("bad-channel", str(raw_channel)) from None
    if plen > MAX_PAYLOAD:
        raise ProtocolError("payload-too-large", str(plen))
    if n - HEADER_SIZE < plen:
        raise ProtocolError("truncated", f"payload {n - HEADER_SIZE} < {plen}")
    if n - HEADER_SIZE > plen:
        raise ProtocolError("bad-length", f"{n - HEADER_SIZE - plen} trailing bytes")
    payload = bytes(data[HEADER_SIZE:])

    if msg_type is MsgType.VIDEO or msg_type is MsgType.DATA:
        if channel not in _ALLOWED_CHANNELS[msg_type]:
            raise ProtocolError("bad-channel", f"{msg_type.name} on {channel.name}")
        if vid == 0:
            raise ProtocolError("invalid-message", "chunk without vehicle_id")
        if msg_type is MsgType.VIDEO:
            return VideoChunk(vid, seq, t, payload, channel, uid)
        try:
            text = payload.decode("ascii")
        except UnicodeDecodeError:
            raise ProtocolError("bad-payload", "data text is not ascii") from None
        _check_data_text(text, vid)
        return DataChunk(vid, seq, t, text, channel, uid)

    if channel is not Channel.CONTROL:
        raise ProtocolError("bad-channel", f"{msg_type.name} on {channel.name}")
    msg = _decode_control(msg_type, vid, uid, seq, t, payload)
    _check_control(msg)
    return msg


def _decode_control(kind: MsgType, vid: int, uid: int, seq: int, t: int, body: bytes) -> ControlMessage:
    base = dict(kind=kind, vehicle_id=vid, user_id=uid, seq=seq, t=t)
    if kind in (MsgType.LOGIN, MsgType.USER_ENABLE):
        try:
            return ControlMessage(**base, credentials=body.decode("utf-8"))
        except UnicodeDecodeError:
            raise ProtocolError("bad-payload", "credentials are not utf-8") from None
    if kind in (MsgType.RUNNING, MsgType.STREAM_REQUEST, MsgType.USER_DISABLE):
        if body:
            raise ProtocolError("bad-payload", f"{kind.name} carries no body")
        return ControlMessage(**base)
    if kind is MsgType.TERMINATE_REPORT:
        if len(body) != 1:
            raise ProtocolError("bad-payload", "terminate body is one byte")
        return ControlMessage(**base, code=body[0])
    if kind is MsgType.ACCIDENT_NOTIFY:
        if len(body) != _ACCIDENT_BODY.size:
            raise ProtocolError("bad-payload", "accident body size")
        det, lat, lon = _ACCIDENT_BODY.unpack(body)
        if det not in _DETECTIONS:
            raise ProtocolError("bad-payload", f"detection code {det}")
        return ControlMessage(**base, detection=_DETECTIONS[det], lat=lat, lon=lon)
    # ACK / REJECT
    if len(body) != 2:
        raise ProtocolError("bad-payload", "ack/reject body is two bytes")
    try:
        ref = MsgType(body[0])
    except ValueError:
        raise ProtocolError("bad-payload", f"ref type {body[0]:#x}") from None
    return ControlMessage(**base, ref=ref, code=body[1])
