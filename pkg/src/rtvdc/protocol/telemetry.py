"""Telemetry text line used on the data channel and inside containers.

``t_ms,vehicle_id,lat,lon,speed_kmh,angle_deg,airbag,brake,turn``

Floats carry exactly six decimals, booleans are 0/1 and turn is 0 (off),
1 (left) or 2 (right).  Lines are produced without a trailing newline;
:func:`parse_telemetry` accepts one.
"""

from __future__ import annotations

import re

from ..sensor_sim import TelemetrySample, TurnSignal

FIELDS = ("t_ms", "vehicle_id", "lat", "lon", "speed_kmh", "angle_deg", "airbag", "brake", "turn")

_INT = re.compile(r"0|[1-9][0-9]*\Z")
_FLOAT = re.compile(r"-?(?:0|[1-9][0-9]*)\.[0-9]{6}\Z")
_BIT = re.compile(r"[01]\Z")
_TURN = re.compile(r"[012]\Z")


class TelemetryParseError(ValueError):
    def __init__(self, code: str, field: str | None = None, detail: str = "") -> None:
        self.code = code
        self.field = field
        msg = code if field is None else f"{code}: {field}"
        super().__init__(f"{msg} {detail}".strip())


def format_telemetry(sample: TelemetrySample, vehicle_id: int) -> str:
    return (
        f"{sample.t},{vehicle_id},{sample.lat:.6f},{sample.lon:.6f},"
        f"{sample.speed:.6f},{sample.angle:.6f},{int(sample.airbag_deployed)},"
        f"{int(sample.brake)},{int(sample.turn_signal)}"
    )


def parse_telemetry(line: str) -> tuple[TelemetrySample, int]:
    """Inverse of :func:`format_telemetry`; returns ``(sample, vehicle_id)``."""
    if line.endswith("\n"):
        line = line[:-1]
    parts = line.split(",")
    if len(parts) < len(FIELDS):
        raise TelemetryParseError("missing-field", FIELDS[len(parts)])
    if len(parts) > len(FIELDS):
        raise TelemetryParseError("extra-field")

    checks = (_INT, _INT, _FLOAT, _FLOAT, _FLOAT, _FLOAT, _BIT, _BIT, _TURN)
    for name, value, pattern in zip(FIELDS, parts, checks):
        if not pattern.match(value):
            raise TelemetryParseError("bad-field", name, repr(value))

    t, vid = int(parts[0]), int(parts[1])
    if vid > 0xFFFF_FFFF:
        raise TelemetryParseError("bad-field", "vehicle_id", "exceeds u32")
    lat, lon, speed, angle = (float(p) for p in parts[2:6])
    try:
        sample = TelemetrySample(
            t=t, speed=speed, angle=angle, airbag_deployed=parts[6] == "1",
            lat=lat, lon=lon, brake=parts[7] == "1", turn_signal=TurnSignal(int(parts[8])),
        )
    except ValueError as exc:
        raise TelemetryParseError("bad-field", None, str(exc)) from None
    return sample, vid
