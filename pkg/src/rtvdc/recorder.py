"""Two-file alternating recorder and the single-file full-time baseline.

The dual-segment recorder keeps at most two segment containers.  A timer of
period T alternates capture between them; each switch clears the segment
being re-entered, so storage never exceeds two segments' worth of records
while the most recent T to 2T of footage is always on disk.

Ticks are explicit: the owner calls :meth:`DualSegmentRecorder.on_tick` (or
:meth:`advance_to`) from whatever clock it runs on.  The recorder is not
thread-safe; serialize mutations externally.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol

from .container import (
    FRAME,
    HEADER_SIZE,
    RECORD_OVERHEAD,
    TELEMETRY,
    CountingSink,
    FileSink,
    MemorySink,
)
from .protocol.telemetry import format_telemetry
from .sensor_sim import TelemetrySample

log = logging.getLogger(__name__)

DEFAULT_SEGMENT_MS = 300_000
DEFAULT_FPS = 30
DEFAULT_FRAME_BYTES = 12_722


class Variant(enum.Enum):
    STOP_ON_ACCIDENT = "stop"
    RECORD_THROUGH_ACCIDENT = "through"


class SegmentState(enum.Enum):
    EMPTY = "empty"
    ACTIVE = "active"
    SEALED = "sealed"
    CLEARED = "cleared"


class RecorderError(RuntimeError):
    def __init__(self, code: str) -> None:
        self.code = code
        super().__init__(code)


class Sink(Protocol):
    size: int

    def reset(self, vehicle_id: int, start_t: int) -> None: ...
    def append(self, rtype: int, t: int, payload: bytes) -> None: ...
    def flush(self) -> None: ...
    def getvalue(self) -> bytes: ...
    def close(self) -> None: ...


@dataclass(frozen=True)
class RecorderConfig:
    segment_duration: int = DEFAULT_SEGMENT_MS
    variant: Variant = Variant.STOP_ON_ACCIDENT
    segment_paths: tuple[Path, Path] | None = None
    fps: int = DEFAULT_FPS
    frame_bytes: int = DEFAULT_FRAME_BYTES
    vehicle_id: int = 0

    def __post_init__(self) -> None:
        if self.segment_duration <= 0:
            raise ValueError("segment_duration must be > 0")
        if self.segment_paths is not None:
            if len(self.segment_paths) != 2:
                raise ValueError("exactly two segment paths are required")
            object.__setattr__(self, "segment_paths", tuple(Path(p) for p in self.segment_paths))
        if self.fps <= 0 or self.frame_bytes <= 0:
            raise ValueError("fps and frame_bytes must be > 0")

    @property
    def payload_rate_per_min(self) -> int:
        return self.fps * 60 * self.frame_bytes

    def segment_payload_cap(self) -> int:
        """Frame payload one segment holds when full: T * fps * frame_bytes."""
        return self.segment_duration * self.fps * self.frame_bytes // 1000


@dataclass
class Segment:
    index: int
    state: SegmentState = SegmentState.EMPTY
    start_t: int = 0
    end_t: int | None = None
    frame_count: int = 0
    telemetry_count: int = 0
    byte_count: int = HEADER_SIZE
    payload_bytes: int = 0

    @property
    def record_count(self) -> int:
        return self.frame_count + self.telemetry_count

    def interval(self, at: int) -> tuple[int, int] | None:
        if self.state is SegmentState.ACTIVE:
            return (self.start_t, max(self.start_t, at))
        if self.state is SegmentState.SEALED:
            return (self.start_t, self.end_t)
        return None


@dataclass
class RecorderState:
    segments: list[Segment]
    next_tick_at: int
    file_alternat: int = 1
    accident_flag: bool = False
    timer_enabled: bool = True
    stopped: bool = False
    accident_at: int | None = None


@dataclass(frozen=True)
class AccidentActions:
    capture_gps: bool = False
    notify_server: bool = False
    send_sms: bool = False

    def __bool__(self) -> bool:
        return self.capture_gps or self.notify_server or self.send_sms


NO_ACTIONS = AccidentActions()
ALL_ACTIONS = AccidentActions(True, True, True)


def _make_sinks(cfg: RecorderConfig) -> list[Sink]:
    if cfg.segment_paths is None:
        return [MemorySink(), MemorySink()]
    try:
        return [FileSink(p) for p in cfg.segment_paths]
    except OSError as exc:
        raise RecorderError(f"init-failed: {exc}") from exc


class DualSegmentRecorder:
    """Alternating two-segment recorder for one vehicle (or one server stream)."""

    def __init__(self, cfg: RecorderConfig, now: int = 0, sinks: list[Sink] | None = None) -> None:
        self.cfg = cfg
        self._sinks = sinks if sinks is not None else _make_sinks(cfg)
        if len(self._sinks) != 2:
            raise ValueError("exactly two sinks are required")
        segs = [Segment(1, start_t=now), Segment(2, start_t=now)]
        for seg, sink in zip(segs, self._sinks):
            sink.reset(cfg.vehicle_id, now)
            seg.byte_count = sink.size
        segs[0].state = SegmentState.ACTIVE
        self.state = RecorderState(segments=segs, next_tick_at=now + cfg.segment_duration)

    # -- queries --------------------------------------------------------

    @property
    def active(self) -> Segment | None:
        for seg in self.state.segments:
            if seg.state is SegmentState.ACTIVE:
                return seg
        return None

    def segment(self, index: int) -> Segment:
        return self.state.segments[index - 1]

    def storage_used(self) -> int:
        return sum(seg.byte_count for seg in self.state.segments)

    def payload_used(self) -> int:
        return sum(seg.payload_bytes for seg in self.state.segments)

    def recoverable_history(self, at: int) -> int:
        """Length of the newest contiguous span covered by non-cleared segments,
        looking no later than ``at``."""
        spans = []
        for seg in self.state.segments:
            iv = seg.interval(at)
            if iv is None or iv[0] > at:
                continue
            spans.append((iv[0], min(iv[1], at)))
        if not spans:
            return 0
        spans.sort(key=lambda s: s[1], reverse=True)
        lo, hi = spans[0]
        for start, end in spans[1:]:
            if end >= lo:
                lo = min(lo, start)
        return hi - lo

    def segment_bytes(self, index: int) -> bytes:
        return self._sinks[index - 1].getvalue()

    def chronological(self) -> list[Segment]:
        """Non-empty segments, oldest first."""
        live = [s for s in self.state.segments if s.state in (SegmentState.ACTIVE, SegmentState.SEALED)]
        return sorted(live, key=lambda s: s.start_t)

    # -- recording ------------------------------------------------------

    def append_frame(self, frame) -> None:
        """Append a frame (anything with ``t`` and ``payload``) to the active segment."""
        if self.state.stopped:
            raise RecorderError("recorder-stopped")
        self._append(FRAME, frame.t, frame.payload)

    def append_telemetry(self, sample: TelemetrySample) -> None:
        self.append_telemetry_line(sample.t, format_telemetry(sample, self.cfg.vehicle_id))

    def append_telemetry_line(self, t: int, line: str) -> None:
        if self.state.stopped:
            raise RecorderError("recorder-stopped")
        if self.state.accident_flag:
            raise RecorderError("sensors-stopped")
        self._append(TELEMETRY, t, line.encode("ascii"))

    def _append(self, rtype: int, t: int, payload: bytes) -> None:
        idx = self.state.file_alternat - 1
        seg = self.state.segments[idx]
        sink = self._sinks[idx]
        sink.append(rtype, t, payload)
        seg.byte_count = sink.size
        if rtype == FRAME:
            seg.frame_count += 1
            seg.payload_bytes += len(payload)
        else:
            seg.telemetry_count += 1

    # -- timer and events ----------------------------------------------

    def on_tick(self, now: int) -> None:
        st = self.state
        if not st.timer_enabled:
            return
        if now < st.next_tick_at:
            raise ValueError(f"tick at {now} before next_tick_at {st.next_tick_at}")
        cur = st.segments[st.file_alternat - 1]
        if st.accident_flag and self.cfg.variant is Variant.RECORD_THROUGH_ACCIDENT:
            st.timer_enabled = False
            self._seal(cur, now)
            st.stopped = True
            log.debug("tick %d: accident pending, segment %d sealed, recorder stopped", now, cur.index)
            return
        self._seal(cur, now)
        other_idx = 2 if st.file_alternat == 1 else 1
        other = st.segments[other_idx - 1]
        sink = self._sinks[other_idx - 1]
        other.state = SegmentState.CLEARED
        sink.reset(self.cfg.vehicle_id, now)
        other.frame_count = other.telemetry_count = other.payload_bytes = 0
        other.byte_count = sink.size
        other.start_t, other.end_t = now, None
        other.state = SegmentState.ACTIVE
        st.file_alternat = other_idx
        st.next_tick_at += self.cfg.segment_duration

    def advance_to(self, now: int) -> int:
        """Fire every tick due at or before ``now``; returns how many fired."""
        fired = 0
        st = self.state
        while st.timer_enabled and st.next_tick_at <= now:
            self.on_tick(st.next_tick_at)
            fired += 1
        return fired

    def on_accident(self, now: int) -> AccidentActions:
        st = self.state
        if st.accident_flag:
            return NO_ACTIONS
        if st.stopped:
            raise RecorderError("recorder-stopped")
        st.accident_flag = True
        st.accident_at = now
        if self.cfg.variant is Variant.STOP_ON_ACCIDENT:
            st.timer_enabled = False
            self._seal(st.segments[st.file_alternat - 1], now)
            st.stopped = True
        return ALL_ACTIONS

    def stop(self, now: int) -> None:
        """Normal vehicle stop: seal whatever is active and halt the timer."""
        st = self.state
        if st.stopped:
            return
        st.timer_enabled = False
        self._seal(st.segments[st.file_alternat - 1], now)
        st.stopped = True

    def _seal(self, seg: Segment, now: int) -> None:
        if seg.state is SegmentState.ACTIVE:
            seg.state = SegmentState.SEALED
            seg.end_t = max(now, seg.start_t)
            self._sinks[seg.index - 1].flush()

    def close(self) -> None:
        for sink in self._sinks:
            sink.close()


# -- schedules ---------------------------------------------------------------

class EventKind(enum.Enum):
    FRAME = "frame"
    TELEMETRY = "telemetry"
    ACCIDENT = "accident"
    STOP = "stop"


@dataclass(frozen=True)
class RecorderEvent:
    t: int
    kind: EventKind
    payload: bytes = b""


def run_schedule(rec: DualSegmentRecorder, events: Iterable[RecorderEvent], until: int | None = None) -> None:
    """Feed a time-ordered schedule through ``rec``.

    An accident at the same instant as a tick is handled before the tick.
    Records offered after capture has stopped are discarded, as a capture
    device that has been stopped would.
    """
    for ev in events:
        if ev.kind is EventKind.ACCIDENT:
            rec.advance_to(ev.t - 1)
            if not rec.state.stopped:
                rec.on_accident(ev.t)
            rec.advance_to(ev.t)
            continue
        rec.advance_to(ev.t)
        if ev.kind is EventKind.STOP:
            rec.stop(ev.t)
        elif rec.state.stopped:
            continue
        elif ev.kind is EventKind.FRAME:
            rec.append_frame(ev)
        elif not rec.state.accident_flag:
            rec.append_telemetry_line(ev.t, ev.payload.decode("ascii"))
    if until is not None:
        rec.advance_to(until)


# -- full-time baseline ------------------------------------------------------

@dataclass
class StorageTrace:
    points: list[tuple[int, int]] = field(default_factory=list)
    payload_bytes: int = 0
    total_bytes: int = HEADER_SIZE
    frame_count: int = 0
    truncated: bool = False
    stop_reason: str | None = None
    stopped_at: int | None = None


def full_time_record(events: Iterable[RecorderEvent], *, vehicle_id: int = 0, start_t: int = 0,
                     storage_limit: int | None = None, sink: Sink | None = None,
                     trace_every: int | None = None) -> StorageTrace:
    """Single-file recorder with no timer: records until stop, accident, or
    until the next record would overflow ``storage_limit`` bytes.

    ``trace_every`` (ms) thins the time/bytes trace; by default every record
    adds a point.
    """
    sink = sink if sink is not None else CountingSink()
    sink.reset(vehicle_id, start_t)
    tr = StorageTrace(points=[(start_t, sink.size)], total_bytes=sink.size)
    next_mark = start_t + trace_every if trace_every else None
    for ev in events:
        if ev.kind in (EventKind.ACCIDENT, EventKind.STOP):
            tr.stop_reason = ev.kind.value
            tr.stopped_at = ev.t
            break
        size = RECORD_OVERHEAD + len(ev.payload)
        if storage_limit is not None and sink.size + size > storage_limit:
            tr.truncated = True
            tr.stop_reason = "storage-limit"
            tr.stopped_at = ev.t
            break
        rtype = FRAME if ev.kind is EventKind.FRAME else TELEMETRY
        sink.append(rtype, ev.t, ev.payload)
        if rtype == FRAME:
            tr.payload_bytes += len(ev.payload)
            tr.frame_count += 1
        if next_mark is None:
            tr.points.append((ev.t, sink.size))
        elif ev.t >= next_mark:
            tr.points.append((ev.t, sink.size))
            while next_mark <= ev.t:
                next_mark += trace_every
    tr.total_bytes = sink.size
    sink.flush()
    return tr
