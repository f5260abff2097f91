"""Vehicle agent: local dual-segment recording plus on-demand streaming.

Start-up records locally unconditionally, logs in to the server and announces
that the vehicle is running.  When the server asks for the stream, frames and
telemetry captured from then on are sent in bursts on two independent timers
until the vehicle stops or an accident ends recording, after which a single
terminate report closes the session.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

from .party import Address, Backoff, Party, ServerAddress
from .protocol import (
    TERMINATE_ACCIDENT,
    TERMINATE_STOPPED,
    Channel,
    ControlMessage,
    DataChunk,
    MsgType,
    ProtocolError,
    VideoChunk,
    ack,
    decode,
    format_telemetry,
)
from .recorder import DualSegmentRecorder, RecorderConfig
from .sensor_sim import (
    AccidentKind,
    FrameChunk,
    SimConfig,
    TelemetrySample,
    VehicleSimulator,
    detect_vcd,
    detect_vtd,
    frame_time,
)

log = logging.getLogger(__name__)

EXIT_CLEAN = 0
EXIT_ACCIDENT = 2


class Phase(enum.Enum):
    STARTING = "starting"
    RECORDING_LOCAL = "recording_local"
    AWAITING_REQUEST = "awaiting_request"
    STREAMING = "streaming"
    TERMINATED = "terminated"


class AgentError(RuntimeError):
    pass


@dataclass(frozen=True)
class AgentConfig:
    vehicle_id: int
    credentials: str
    server: ServerAddress
    recorder: RecorderConfig = field(default_factory=RecorderConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    video_send_period: int = 33
    data_send_period: int | None = None
    time_scale: float = 1.0
    out_dir: Path | None = None
    # Simulated ms at which the driver switches the engine off; None = run until told.
    stop_at: int | None = None

    def __post_init__(self) -> None:
        if not 0 < self.vehicle_id <= 0xFFFF_FFFF:
            raise ValueError("vehicle_id must be a non-zero u32")
        if self.video_send_period <= 0 or (self.data_send_period is not None and self.data_send_period <= 0):
            raise ValueError("send periods must be > 0")
        if self.time_scale <= 0:
            raise ValueError("time_scale must be > 0")

    @property
    def data_period(self) -> int:
        return self.data_send_period if self.data_send_period is not None else self.sim.sample_period


@dataclass(frozen=True)
class SmsRecord:
    t: int
    vehicle_id: int
    lat: float
    lon: float
    kind: str


# Same-instant ordering: stop, sensor sample (so an accident beats a tick),
# tick, frame, then the two send timers and the handshake retry.
_P_STOP, _P_SAMPLE, _P_TICK, _P_FRAME, _P_VIDEO, _P_DATA, _P_RETRY = range(7)


class VehicleAgent(Party):
    def __init__(self, cfg: AgentConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.name = f"vehicle-{cfg.vehicle_id}"
        self.phase = Phase.STARTING
        self.recorder: DualSegmentRecorder | None = None
        self.sim: VehicleSimulator | None = None
        self.last_gps: tuple[float, float] | None = None
        self.sms_log: list[SmsRecord] = []
        self.exit_code: int | None = None
        self.accident_kind: AccidentKind | None = None
        self.stream_started_at: int | None = None

        self.sent_video: list[int] = []
        self.sent_data = 0
        self.control_sent: list[MsgType] = []

        self._t0 = 0
        self._frame_idx = 0
        self._next_sample = 0
        self._next_video = 0
        self._next_data = 0
        self._data_seq = 0
        self._video_buf: list[FrameChunk] = []
        self._data_buf: list[TelemetrySample] = []
        self._handshake: str | None = None
        self._retry_at: int | None = None
        self._backoff = Backoff()

    # -- lifecycle ------------------------------------------------------

    def start(self, now: int) -> None:
        if self.phase is not Phase.STARTING:
            raise AgentError("already-started")
        cfg = self.cfg
        rcfg = replace(cfg.recorder, vehicle_id=cfg.vehicle_id)
        if rcfg.segment_paths is None and cfg.out_dir is not None:
            out = Path(cfg.out_dir)
            rcfg = replace(rcfg, segment_paths=(out / "segment_1.ivsg", out / "segment_2.ivsg"))
        self.recorder = DualSegmentRecorder(rcfg, now)
        self.sim = VehicleSimulator(cfg.sim, t=now)
        self._t0 = now
        self._next_sample = now + cfg.sim.sample_period
        self.phase = Phase.RECORDING_LOCAL
        self.emit(now, "start", f"T={rcfg.segment_duration} variant={rcfg.variant.value}")

        self._handshake = "login"
        self._send_control(now, ControlMessage(MsgType.LOGIN, vehicle_id=cfg.vehicle_id, t=now,
                                               credentials=cfg.credentials))
        self._retry_at = now + self._backoff.next()
        self.phase = Phase.AWAITING_REQUEST

    def stop(self, now: int) -> None:
        if self.phase in (Phase.TERMINATED, Phase.STARTING):
            return
        self.recorder.stop(now)
        self.emit(now, "stop")
        self._finish(now)

    @property
    def done(self) -> bool:
        return self.phase is Phase.TERMINATED

    # -- network input ---------------------------------------------------

    def handle_datagram(self, data: bytes, src: Address, now: int, channel: Channel | None = None) -> None:
        try:
            msg = decode(data)
        except ProtocolError as exc:
            self.decode_errors += 1
            log.debug("%s: dropping bad datagram: %s", self.name, exc)
            return
        if not isinstance(msg, ControlMessage) or self.phase in (Phase.STARTING, Phase.TERMINATED):
            return
        self.emit(now, "recv", msg.kind.name)
        if msg.kind is MsgType.ACK and msg.ref is MsgType.LOGIN and self._handshake == "login":
            self._handshake = "running"
            self._backoff.reset()
            self._send_running(now)
        elif msg.kind is MsgType.REJECT and msg.ref in (MsgType.LOGIN, MsgType.RUNNING):
            log.warning("%s: server rejected login: %s", self.name, msg.reason)
            self._handshake = "rejected"
            self._retry_at = None
        elif msg.kind is MsgType.STREAM_REQUEST:
            self.on_stream_request(now)

    def on_stream_request(self, now: int) -> None:
        if self.phase is Phase.STREAMING:
            self._send_control(now, ack(MsgType.STREAM_REQUEST, vehicle_id=self.cfg.vehicle_id, t=now))
            return
        if self.phase is not Phase.AWAITING_REQUEST:
            return
        self._handshake = None
        self._retry_at = None
        self.phase = Phase.STREAMING
        self.stream_started_at = now
        self._next_video = now + self.cfg.video_send_period
        self._next_data = now + self.cfg.data_period
        self.emit(now, "streaming")

    # -- timed work ------------------------------------------------------

    def _due(self) -> list[tuple[int, int]]:
        if self.phase in (Phase.STARTING, Phase.TERMINATED):
            return []
        rec = self.recorder
        due = []
        if self.cfg.stop_at is not None:
            due.append((self.cfg.stop_at, _P_STOP))
        if not rec.state.accident_flag and not rec.state.stopped:
            due.append((self._next_sample, _P_SAMPLE))
        if rec.state.timer_enabled:
            due.append((rec.state.next_tick_at, _P_TICK))
        if not rec.state.stopped:
            due.append((frame_time(self._t0, self._frame_idx, self.cfg.recorder.fps), _P_FRAME))
        if self.phase is Phase.STREAMING:
            due.append((self._next_video, _P_VIDEO))
            due.append((self._next_data, _P_DATA))
        if self._retry_at is not None:
            due.append((self._retry_at, _P_RETRY))
        return due

    def next_wakeup(self) -> int | None:
        due = self._due()
        return min(due)[0] if due else None

    def poll(self, now: int) -> None:
        while True:
            due = self._due()
            if not due:
                return
            t, what = min(due)
            if t > now:
                return
            self._run(what, t)

    def _run(self, what: int, t: int) -> None:
        if what == _P_STOP:
            self.stop(t)
        elif what == _P_SAMPLE:
            self._on_sample(t)
        elif what == _P_TICK:
            self._tick(t)
        elif what == _P_FRAME:
            self._on_frame(t)
        elif what == _P_VIDEO:
            self._flush_video(t)
            self._next_video += self.cfg.video_send_period
        elif what == _P_DATA:
            self._flush_data(t)
            self._next_data += self.cfg.data_period
        elif what == _P_RETRY:
            if self._handshake == "login":
                self._send_control(t, ControlMessage(MsgType.LOGIN, vehicle_id=self.cfg.vehicle_id,
                                                     t=t, credentials=self.cfg.credentials))
            elif self._handshake == "running":
                self._send_running(t)
            self._retry_at = t + self._backoff.next() if self._handshake in ("login", "running") else None

    def _tick(self, t: int) -> None:
        rec = self.recorder
        rec.advance_to(t)
        self.emit(t, "tick", f"alternat={rec.state.file_alternat} stopped={int(rec.state.stopped)}")
        if rec.state.stopped and rec.state.accident_flag:
            self._finish(t)

    def _on_sample(self, t: int) -> None:
        sample = self.sim.next_sample()
        assert sample.t == t
        self._next_sample = t + self.cfg.sim.sample_period
        self.last_gps = sample.fix
        kind = None
        if detect_vtd(sample, self.cfg.sim.theta_crit):
            kind = AccidentKind.TURNOVER
        elif detect_vcd(sample):
            kind = AccidentKind.CRASH
        rec = self.recorder
        if kind is None:
            if rec.state.timer_enabled and rec.state.next_tick_at <= t:
                self._tick(t)
            rec.append_telemetry(sample)
            if self.phase is Phase.STREAMING:
                self._data_buf.append(sample)
            return
        # The reading that triggered detection is the last one kept.
        rec.append_telemetry(sample)
        if self.phase is Phase.STREAMING:
            self._data_buf.append(sample)
        self.on_accident(kind, t)

    def _on_frame(self, t: int) -> None:
        rec = self.recorder
        if rec.state.timer_enabled and rec.state.next_tick_at <= t:
            self._tick(t)
            if rec.state.stopped:
                return
        frame = self.sim.make_frame(self.cfg.recorder.frame_bytes, t)
        rec.append_frame(frame)
        self._frame_idx += 1
        if self.phase is Phase.STREAMING:
            self._video_buf.append(frame)

    # -- accident and termination ---------------------------------------

    def on_accident(self, kind: AccidentKind, now: int) -> None:
        if self.phase not in (Phase.AWAITING_REQUEST, Phase.STREAMING):
            return
        actions = self.recorder.on_accident(now)
        if not actions:
            return
        self.accident_kind = kind
        lat, lon = self.last_gps if self.last_gps is not None else self.cfg.sim.route[0]
        self.emit(now, "accident", f"{kind.value} lat={lat:.6f} lon={lon:.6f}")
        if actions.notify_server:
            self._send_control(now, ControlMessage(
                MsgType.ACCIDENT_NOTIFY, vehicle_id=self.cfg.vehicle_id, t=now,
                detection=kind, lat=lat, lon=lon))
        if actions.send_sms:
            self._send_sms(SmsRecord(now, self.cfg.vehicle_id, lat, lon, kind.value))
        if self.recorder.state.stopped:
            self._finish(now)

    def _send_sms(self, rec: SmsRecord) -> None:
        self.sms_log.append(rec)
        self.emit(rec.t, "sms", rec.kind)
        if self.cfg.out_dir is not None:
            path = Path(self.cfg.out_dir) / "sms.log"
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "a") as fh:
                fh.write(json.dumps(rec.__dict__, sort_keys=True) + "\n")

    def _finish(self, now: int) -> None:
        if self.phase is Phase.TERMINATED:
            return
        self._flush_video(now)
        self._flush_data(now)
        accident = self.recorder.state.accident_flag
        self._send_control(now, ControlMessage(
            MsgType.TERMINATE_REPORT, vehicle_id=self.cfg.vehicle_id, t=now,
            code=TERMINATE_ACCIDENT if accident else TERMINATE_STOPPED))
        self.recorder.close()
        self.phase = Phase.TERMINATED
        self._retry_at = None
        self.exit_code = EXIT_ACCIDENT if accident else EXIT_CLEAN
        self.emit(now, "terminated", f"exit={self.exit_code}")

    # -- sending --------------------------------------------------------

    def _send_control(self, now: int, msg: ControlMessage) -> None:
        self.control_sent.append(msg.kind)
        self.emit(now, "send", msg.kind.name)
        self.send(self.cfg.server.addr(Channel.CONTROL), Channel.CONTROL, msg)

    def _send_running(self, now: int) -> None:
        # The header time carries the recorder start so the server can align its segments.
        self._send_control(now, ControlMessage(MsgType.RUNNING, vehicle_id=self.cfg.vehicle_id, t=self._t0))
        self._retry_at = now + self._backoff.next()

    def _flush_video(self, now: int) -> None:
        if not self._video_buf:
            return
        dst = self.cfg.server.addr(Channel.VEHICLE_VIDEO_IN)
        for f in self._video_buf:
            self.send(dst, Channel.VEHICLE_VIDEO_IN, VideoChunk(self.cfg.vehicle_id, f.seq, f.t, f.payload))
            self.sent_video.append(f.seq)
        self._video_buf.clear()

    def _flush_data(self, now: int) -> None:
        if not self._data_buf:
            return
        dst = self.cfg.server.addr(Channel.VEHICLE_DATA_IN)
        vid = self.cfg.vehicle_id
        for s in self._data_buf:
            self.send(dst, Channel.VEHICLE_DATA_IN,
                      DataChunk(vid, self._data_seq, s.t, format_telemetry(s, vid)))
            self._data_seq += 1
            self.sent_data += 1
        self._data_buf.clear()
