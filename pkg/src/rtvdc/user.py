"""User endpoint: subscribe to one vehicle, persist what the server sends."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from .container import FRAME, FileSink, MemorySink
from .party import Address, Backoff, Party, ServerAddress
from .protocol import (
    ENABLE_LIVE,
    ENABLE_REPLAY,
    Channel,
    ControlMessage,
    DataChunk,
    MsgType,
    ProtocolError,
    ReorderBuffer,
    VideoChunk,
    decode,
)

log = logging.getLogger(__name__)


@dataclass
class ReceiveCounters:
    video_chunks: int = 0
    data_lines: int = 0
    bytes: int = 0
    gaps: int = 0


@dataclass(frozen=True)
class Summary:
    user_id: int
    vehicle_id: int
    mode: str
    video_chunks: int
    data_lines: int
    bytes: int
    gaps: int
    duration_ms: int

    def csv(self) -> str:
        return (f"{self.user_id},{self.vehicle_id},{self.mode},{self.video_chunks},"
                f"{self.data_lines},{self.bytes},{self.gaps},{self.duration_ms}")

    CSV_HEADER = "user_id,vehicle_id,mode,video_chunks,data_lines,bytes,gaps,duration_ms"


@dataclass
class UserSession:
    user_id: int
    server: ServerAddress
    credentials: str = ""
    enabled_vehicle: int | None = None
    out_dir: Path | None = None
    received: ReceiveCounters = field(default_factory=ReceiveCounters)


class UserClient(Party):
    """One enabled vehicle per session.  Frames go into an IVSG container and
    telemetry lines into a CSV, each written in sequence order after reordering."""

    def __init__(self, session: UserSession, window: int = 32, hold_ms: int = 200,
                 drain_ms: int = 1000) -> None:
        super().__init__()
        self.sess = session
        self.name = f"user-{session.user_id}"
        self.window = window
        self.hold_ms = hold_ms
        self.drain_ms = drain_ms
        self.state = "idle"
        self.mode: str | None = None
        self.error: str | None = None
        self.summary: Summary | None = None
        self.video_log: list[tuple[int, int]] = []
        self.data_log: list[str] = []
        self._video_rb: ReorderBuffer | None = None
        self._data_rb: ReorderBuffer | None = None
        self._sink = None
        self._csv = None
        self._enabled_at = 0
        self._retry_at: int | None = None
        self._drain_until: int | None = None
        self._backoff = Backoff()

    @property
    def container_path(self) -> Path | None:
        if self.sess.out_dir is None or self.sess.enabled_vehicle is None:
            return None
        return Path(self.sess.out_dir) / f"user_{self.sess.user_id}_vehicle_{self.sess.enabled_vehicle}.ivsg"

    def enable(self, vehicle_id: int, now: int) -> None:
        if self.state in ("enabling", "enabled"):
            return
        if self.state == "disabling":
            self._finish(now)
        self.sess.enabled_vehicle = vehicle_id
        self.sess.received = ReceiveCounters()
        self.video_log.clear()
        self.data_log.clear()
        self.error = None
        self.mode = None
        self.state = "enabling"
        self._enabled_at = now
        self._video_rb = ReorderBuffer(self.window, self.hold_ms)
        self._data_rb = ReorderBuffer(self.window, self.hold_ms)
        path = self.container_path
        if path is not None:
            self._sink = FileSink(path)
            self._csv = open(path.with_suffix(".csv"), "w")
        else:
            self._sink = MemorySink()
        self._sink.reset(vehicle_id, now)
        self._backoff.reset()
        self._send_enable(now)

    def _send_enable(self, now: int) -> None:
        self.emit(now, "send", "USER_ENABLE")
        self.send(self.sess.server.addr(Channel.CONTROL), Channel.CONTROL, ControlMessage(
            MsgType.USER_ENABLE, vehicle_id=self.sess.enabled_vehicle, user_id=self.sess.user_id,
            t=now, credentials=self.sess.credentials))
        self._retry_at = now + self._backoff.next()

    def disable(self, now: int, drain_ms: int | None = None) -> Summary | None:
        """Ask the server to stop forwarding.

        Chunks the server forwarded before it saw the request may still be in
        flight, so they are accepted until one reorder hold after the server's
        ack, or ``drain_ms`` at most.  With ``drain_ms=0`` the session closes at
        once and the summary is returned; otherwise it lands in ``summary``
        when the drain ends.
        """
        if self.state not in ("enabling", "enabled"):
            return None
        self.send(self.sess.server.addr(Channel.CONTROL), Channel.CONTROL,
                  ControlMessage(MsgType.USER_DISABLE, user_id=self.sess.user_id, t=now))
        self.emit(now, "send", "USER_DISABLE")
        self.state = "disabling"
        self._retry_at = None
        self._drain_until = now + (self.drain_ms if drain_ms is None else drain_ms)
        if self._drain_until <= now:
            return self._finish(now)
        return None

    def close(self, now: int) -> Summary | None:
        """End the session now, whatever its state."""
        if self.state in ("enabling", "enabled"):
            return self.disable(now, drain_ms=0)
        if self.state == "disabling":
            return self._finish(now)
        return None

    def _finish(self, now: int) -> Summary:
        self._write_video(self._video_rb.flush())
        self._write_data(self._data_rb.flush())
        self._close_outputs()
        r = self.sess.received
        r.gaps = self._video_rb.stats.lost + self._data_rb.stats.lost
        self.summary = Summary(self.sess.user_id, self.sess.enabled_vehicle, self.mode or "none",
                               r.video_chunks, r.data_lines, r.bytes, r.gaps, now - self._enabled_at)
        self.state = "idle"
        self._drain_until = None
        self.emit(now, "summary", self.summary.csv())
        return self.summary

    def _close_outputs(self) -> None:
        if self._sink is not None:
            self._sink.flush()
            self._sink.close()
        if self._csv is not None:
            self._csv.close()
            self._csv = None

    def container_bytes(self) -> bytes:
        return self._sink.getvalue()

    # -- input -------------------------------------------------------------

    def handle_datagram(self, data: bytes, src: Address, now: int, channel: Channel | None = None) -> None:
        try:
            msg = decode(data)
        except ProtocolError as exc:
            self.decode_errors += 1
            log.debug("%s: bad datagram: %s", self.name, exc)
            return
        if self.state not in ("enabling", "enabled", "disabling"):
            return
        if isinstance(msg, ControlMessage):
            if msg.kind is MsgType.ACK and msg.ref is MsgType.USER_DISABLE and self.state == "disabling":
                self._drain_until = min(self._drain_until, now + self.hold_ms)
                return
            if msg.ref is not MsgType.USER_ENABLE or self.state == "disabling":
                return
            if msg.kind is MsgType.ACK and self.state == "enabling":
                self.state = "enabled"
                self.mode = {ENABLE_LIVE: "live", ENABLE_REPLAY: "replay"}.get(msg.code, "live")
                self._retry_at = None
                self.emit(now, "enabled", self.mode)
            elif msg.kind is MsgType.REJECT:
                self.error = msg.reason
                self.state = "rejected"
                self._retry_at = None
                self._close_outputs()
                self.emit(now, "rejected", msg.reason)
            return
        if msg.vehicle_id != self.sess.enabled_vehicle or msg.user_id != self.sess.user_id:
            return
        if isinstance(msg, VideoChunk) and msg.channel is Channel.USER_VIDEO_OUT:
            self._write_video(self._video_rb.push(msg, now))
        elif isinstance(msg, DataChunk) and msg.channel is Channel.USER_DATA_OUT:
            self._write_data(self._data_rb.push(msg, now))

    def _write_video(self, chunks: list[VideoChunk]) -> None:
        r = self.sess.received
        for c in chunks:
            self._sink.append(FRAME, c.t, c.payload)
            self.video_log.append((c.seq, c.t))
            r.video_chunks += 1
            r.bytes += len(c.payload)

    def _write_data(self, chunks: list[DataChunk]) -> None:
        r = self.sess.received
        for c in chunks:
            self.data_log.append(c.text)
            if self._csv is not None:
                self._csv.write(c.text + "\n")
            r.data_lines += 1
            r.bytes += len(c.text)

    # -- timers ------------------------------------------------------------

    def poll(self, now: int) -> None:
        if self.state not in ("enabling", "enabled", "disabling"):
            return
        self._write_video(self._video_rb.poll(now))
        self._write_data(self._data_rb.poll(now))
        if self._retry_at is not None and now >= self._retry_at and self.state == "enabling":
            self._send_enable(now)
        if self.state == "disabling" and now >= self._drain_until:
            self._finish(now)

    def next_wakeup(self) -> int | None:
        if self.state not in ("enabling", "enabled", "disabling"):
            return None
        times = [d for d in (self._video_rb.deadline(), self._data_rb.deadline(),
                             self._retry_at, self._drain_until) if d is not None]
        return min(times) if times else None
