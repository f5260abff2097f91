from .codec import (
    CONTROL_KINDS,
    ENABLE_LIVE,
    ENABLE_REPLAY,
    HEADER_SIZE,
    MAX_PAYLOAD,
    TERMINATE_ACCIDENT,
    TERMINATE_STOPPED,
    Channel,
    ControlMessage,
    DataChunk,
    Message,
    MsgType,
    ProtocolError,
    VideoChunk,
    ack,
    decode,
    encode,
    reject,
)
from .reorder import ReorderBuffer, ReorderStats
from .telemetry import TelemetryParseError, format_telemetry, parse_telemetry

__all__ = [
    "CONTROL_KINDS", "ENABLE_LIVE", "ENABLE_REPLAY", "HEADER_SIZE", "MAX_PAYLOAD",
    "TERMINATE_ACCIDENT", "TERMINATE_STOPPED", "Channel", "ControlMessage", "DataChunk",
    "Message", "MsgType", "ProtocolError", "VideoChunk", "ack", "decode", "encode", "reject",
    "ReorderBuffer", "ReorderStats", "TelemetryParseError", "format_telemetry", "parse_telemetry",
]
