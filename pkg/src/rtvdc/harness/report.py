"""Storage comparisons: full-time recording vs. the dual-segment recorder,
plus the analytic VDVRS line.

All recorder rows come from actually running the recorders over synthetic
frames into byte-counting sinks, so every number is exact container bytes.
"""

from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Iterable, Iterator

from ..container import CountingSink
from ..recorder import (
    DualSegmentRecorder,
    EventKind,
    RecorderConfig,
    RecorderEvent,
    Variant,
    full_time_record,
)
from ..sensor_sim import frame_time

MINUTE_MS = 60_000
REFERENCE_RATE = 22_900_000
VDVRS_BYTES_PER_MIN = 1_870_000_000
SCHEMES = ("full_time", "dual_segment", "vdvrs_reference")


@dataclass(frozen=True)
class StorageRow:
    scheme: str
    duration_min: float
    T_min: float | None
    max_bytes: int
    min_bytes: int
    final_bytes: int
    max_segment_payload: int | None = None


@dataclass
class StorageReport:
    rows: list[StorageRow]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f.name for f in fields(StorageRow)])
        for r in self.rows:
            w.writerow(["" if v is None else v for v in astuple(r)])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    def series(self) -> dict[str, list[tuple[float, int]]]:
        """Plot-ready ``label -> [(duration_min, max_bytes)]``."""
        out: dict[str, list[tuple[float, int]]] = {}
        for r in self.rows:
            label = r.scheme if r.T_min is None else f"{r.scheme} T={r.T_min:g}"
            out.setdefault(label, []).append((r.duration_min, r.max_bytes))
        return out

    def select(self, scheme: str, T_min: float | None = None) -> list[StorageRow]:
        return [r for r in self.rows if r.scheme == scheme and (T_min is None or r.T_min == T_min)]


def frame_bytes_for_rate(rate: int, fps: int) -> int:
    """Whole bytes per frame that best approximates ``rate`` bytes/min."""
    fb = rate // (fps * 60)
    if fb <= 0:
        raise ValueError("rate too small for the frame rate")
    return fb


def synthetic_frames(duration_ms: int, fps: int, frame_bytes: int, t0: int = 0) -> Iterator[RecorderEvent]:
    payload = bytes(frame_bytes)
    i = 0
    while True:
        t = frame_time(t0, i, fps)
        if t >= t0 + duration_ms:
            return
        yield RecorderEvent(t, EventKind.FRAME, payload)
        i += 1


def dual_segment_rows(durations_min: list[float], T_min: float, fps: int, frame_bytes: int,
                      variant: Variant = Variant.STOP_ON_ACCIDENT,
                      accident_at: int | None = None) -> list[StorageRow]:
    """One recorder run out to the longest duration, snapshotted at each one.

    ``min_bytes`` is the least storage held at any instant once the first
    segment has filled (before that, the current storage).
    """
    T = int(round(T_min * MINUTE_MS))
    rcfg = RecorderConfig(segment_duration=T, variant=variant, fps=fps, frame_bytes=frame_bytes)
    rec = DualSegmentRecorder(rcfg, 0, sinks=[CountingSink(), CountingSink()])
    marks = sorted({int(round(d * MINUTE_MS)) for d in durations_min})
    rows: dict[int, StorageRow] = {}
    hi = lo = rec.storage_used()
    warm_lo: int | None = None
    seg_hi = 0
    accident_done = accident_at is None
    frames = synthetic_frames(marks[-1], fps, frame_bytes)
    pending = next(frames, None)

    def observe(t: int) -> None:
        nonlocal hi, lo, warm_lo, seg_hi
        used = rec.storage_used()
        hi = max(hi, used)
        lo = min(lo, used)
        if t >= T:
            warm_lo = used if warm_lo is None else min(warm_lo, used)
        seg_hi = max(seg_hi, *(s.payload_bytes for s in rec.state.segments))

    for mark in marks:
        while pending is not None and pending.t < mark:
            if not accident_done and accident_at <= pending.t:
                rec.advance_to(accident_at - 1)
                observe(accident_at)
                rec.on_accident(accident_at)
                accident_done = True
            # Storage dips right after a tick clears the other segment.
            if rec.advance_to(pending.t):
                observe(pending.t)
            if not rec.state.stopped:
                rec.append_frame(pending)
            observe(pending.t)
            pending = next(frames, None)
        if rec.advance_to(mark):
            observe(mark)
        rows[mark] = StorageRow("dual_segment", mark / MINUTE_MS, T_min, hi,
                                warm_lo if warm_lo is not None else rec.storage_used(),
                                rec.storage_used(), seg_hi)
    return [rows[m] for m in marks]


def full_time_rows(durations_min: list[float], fps: int, frame_bytes: int) -> list[StorageRow]:
    out = []
    for d in durations_min:
        tr = full_time_record(synthetic_frames(int(round(d * MINUTE_MS)), fps, frame_bytes))
        out.append(StorageRow("full_time", d, None, tr.total_bytes, tr.total_bytes,
                              tr.total_bytes, tr.payload_bytes))
    return out


def vdvrs_rows(durations_min: list[float], bytes_per_min: int = VDVRS_BYTES_PER_MIN) -> list[StorageRow]:
    out = []
    for d in durations_min:
        b = int(round(d * bytes_per_min))
        out.append(StorageRow("vdvrs_reference", d, None, b, b, b))
    return out


def storage_report(schemes: Iterable[str] = SCHEMES, durations: Iterable[float] = (1, 5, 10, 30, 60),
                   T_values: Iterable[float] = (2, 5), rate: int = REFERENCE_RATE, fps: int = 30,
                   variant: Variant = Variant.STOP_ON_ACCIDENT,
                   accident_at: int | None = None) -> StorageReport:
    """Rows for every requested scheme, duration (minutes) and, for the
    dual-segment scheme, segment length T (minutes)."""
    if rate <= 0:
        raise ValueError("rate must be > 0")
    durations = sorted(float(d) for d in durations)
    if not durations or durations[0] <= 0:
        raise ValueError("durations must be > 0")
    fb = frame_bytes_for_rate(rate, fps)
    rows: list[StorageRow] = []
    for scheme in schemes:
        if scheme == "full_time":
            rows += full_time_rows(durations, fps, fb)
        elif scheme == "dual_segment":
            for T in T_values:
                rows += dual_segment_rows(durations, float(T), fps, fb, variant, accident_at)
        elif scheme == "vdvrs_reference":
            rows += vdvrs_rows(durations)
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
    return StorageReport(rows)
