"""ITS centre server.

Listens on five channels (control, vehicle video in, vehicle data in, user
video out, user data out), keeps the vehicle and user registries, records
every streaming vehicle with its own dual-segment recorder, forwards live
chunks to enabled owners, and replays the last recorded segments to an owner
whose vehicle is no longer running.

Server-side recorders tick on media time (chunk timestamps) starting from the
vehicle's own recorder start, so their segment boundaries line up with the
vehicle's.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterator

from .container import FRAME, Container, parse_container, read_container
from .geo import haversine_m
from .party import DEFAULT_PORTS, Address, Outgoing, Party
from .protocol import (
    ENABLE_LIVE,
    ENABLE_REPLAY,
    TERMINATE_ACCIDENT,
    Channel,
    ControlMessage,
    DataChunk,
    MsgType,
    ProtocolError,
    ReorderBuffer,
    VideoChunk,
    ack,
    decode,
    encode,
    parse_telemetry,
    reject,
)
from .recorder import DualSegmentRecorder, RecorderConfig
from .registry import Registry, VehicleStatus, hash_credentials

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ServerConfig:
    host: str = "its-server"
    ports: tuple[int, int, int, int, int] = DEFAULT_PORTS
    store_dir: Path | None = None
    segment_duration: int = 300_000
    reorder_window: int = 32
    reorder_hold_ms: int = 200
    d_crit_m: float = 10.0
    proximity_dt_ms: int = 1000
    proximity_period_ms: int = 500
    forward_queue_max: int = 4096
    # A terminate report can overtake the last chunks sent on the other
    # channels; the session stays open this long (ms) to let them land.
    terminate_grace_ms: int = 500
    # Replay chunks sent per ms of clock; None sends the whole replay at once.
    # One per ms keeps in-flight reordering inside a 32-chunk client window
    # even with tens of ms of delay jitter.
    replay_batch: int | None = 1


@dataclass(frozen=True)
class ProximityWarning:
    t: int
    vehicle_a: int
    vehicle_b: int
    distance_m: float


def proximity_check(fixes: dict[int, tuple[int, float, float]], d_crit_m: float = 10.0,
                    max_dt_ms: int = 1000) -> list[ProximityWarning]:
    """Pairs whose latest fixes are within ``d_crit_m`` metres and ``max_dt_ms``
    of each other.  ``fixes`` maps vehicle_id to ``(t, lat, lon)``."""
    out = []
    for a, b in combinations(sorted(fixes), 2):
        ta, lat_a, lon_a = fixes[a]
        tb, lat_b, lon_b = fixes[b]
        if abs(ta - tb) > max_dt_ms:
            continue
        d = haversine_m(lat_a, lon_a, lat_b, lon_b)
        if d <= d_crit_m:
            out.append(ProximityWarning(max(ta, tb), a, b, d))
    return out


@dataclass
class VehicleSession:
    vehicle_id: int
    number: int
    started_at: int
    recorder: DualSegmentRecorder
    video_rb: ReorderBuffer
    data_rb: ReorderBuffer
    frames_recorded: int = 0
    telemetry_recorded: int = 0
    last_t: int = 0
    closing_at: int | None = None
    end_t: int = 0
    cause: int = 0


@dataclass
class _Replay:
    user_id: int
    vehicle_id: int
    dst: Address
    records: Iterator
    video_seq: int = 0
    data_seq: int = 0


@dataclass
class ServerCounters:
    dropped_inactive: int = 0
    forwarded: dict[int, int] = field(default_factory=dict)
    forwarded_bytes: dict[int, int] = field(default_factory=dict)
    forward_overflow: int = 0
    replayed: dict[int, int] = field(default_factory=dict)
    rejects: int = 0


class ITSServer(Party):
    name = "its-server"

    def __init__(self, cfg: ServerConfig, registry: Registry | None = None) -> None:
        super().__init__()
        self.cfg = cfg
        self.registry = registry if registry is not None else Registry()
        self.sessions: dict[int, VehicleSession] = {}
        self.active_vehicles: set[int] = set()
        self.active_users: set[int] = set()
        self.counters = ServerCounters()
        self.control_log: dict[int, list[MsgType]] = {}
        self.accident_log: list[tuple[int, int, str, float, float]] = []
        self.warnings: list[ProximityWarning] = []
        self.event_log: list[dict] = []
        self.fixes: dict[int, tuple[int, float, float]] = {}

        self._session_counter: dict[int, int] = {}
        self._last_data: dict[int, list[bytes]] = {}
        self._seen_accidents: set[tuple[int, int]] = set()
        self._near: set[tuple[int, int]] = set()
        self._next_proximity: int | None = None
        self._forward_q: deque[Outgoing] = deque()
        self._replays: list[_Replay] = []
        self._last_pump: int | None = None
        self._now = 0
        if cfg.store_dir is not None:
            Path(cfg.store_dir).mkdir(parents=True, exist_ok=True)

    def addr(self, channel: Channel) -> Address:
        return (self.cfg.host, self.cfg.ports[int(channel)])

    # -- logging ---------------------------------------------------------

    def _event(self, t: int, event: str, **fields) -> None:
        rec = {"t": t, "event": event, **fields}
        self.event_log.append(rec)
        self.emit(t, event, " ".join(f"{k}={v}" for k, v in fields.items()))
        if self.cfg.store_dir is not None:
            with open(Path(self.cfg.store_dir) / "events.log", "a") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    # -- registration ----------------------------------------------------

    def register(self, kind: str, ident: int, credentials: str, vehicle_ids: tuple[int, ...] = ()):
        entry = self.registry.register(kind, ident, credentials, vehicle_ids)
        self._event(0, "register", kind=kind, id=ident)
        return entry

    # -- datagrams -------------------------------------------------------

    def handle_datagram(self, data: bytes, src: Address, now: int, channel: Channel | None = None) -> None:
        self._now = now
        try:
            msg = decode(data)
        except ProtocolError as exc:
            self.decode_errors += 1
            log.debug("bad datagram from %s: %s", src, exc)
            if channel in (None, Channel.CONTROL) and len(data) > 5 and data[5] in MsgType._value2member_map_:
                self._reply(src, reject(MsgType(data[5]), "malformed", t=now))
            return
        if isinstance(msg, ControlMessage):
            self.on_control(msg, src, now)
        else:
            self.ingest(msg, now)
        self._drain_forward()

    def _reply(self, dst: Address, msg: ControlMessage) -> None:
        if msg.kind is MsgType.REJECT:
            self.counters.rejects += 1
        self.send(dst, Channel.CONTROL, msg)

    def on_control(self, msg: ControlMessage, src: Address, now: int) -> None:
        kind = msg.kind
        vid = msg.vehicle_id
        if kind in (MsgType.LOGIN, MsgType.RUNNING, MsgType.TERMINATE_REPORT, MsgType.ACCIDENT_NOTIFY):
            self.control_log.setdefault(vid, []).append(kind)
            entry = self.registry.vehicles.get(vid)
            if entry is None:
                self._event(now, "reject", vehicle_id=vid, kind=kind.name, reason="not-registered")
                self._reply(src, reject(kind, "not-registered", vehicle_id=vid, t=now))
                return
            if kind is MsgType.LOGIN:
                if hash_credentials(msg.credentials) != entry.credentials_hash:
                    self._event(now, "reject", vehicle_id=vid, kind=kind.name, reason="bad-credentials")
                    self._reply(src, reject(kind, "bad-credentials", vehicle_id=vid, t=now))
                    return
                entry.peer = src
                self._event(now, "login", vehicle_id=vid)
                self._reply(src, ack(MsgType.LOGIN, vehicle_id=vid, t=now))
            elif kind is MsgType.RUNNING:
                self._on_running(entry, msg, src, now)
            elif kind is MsgType.TERMINATE_REPORT:
                self._on_terminate(entry, msg, now)
            else:
                self._on_accident(entry, msg, now)
        elif kind is MsgType.USER_ENABLE:
            self.user_enable(msg.user_id, msg.vehicle_id, msg.credentials, src, now)
        elif kind is MsgType.USER_DISABLE:
            self.user_disable(msg.user_id, src, now)
        # Acks and stray server-bound kinds are ignored.

    def _on_running(self, entry, msg: ControlMessage, src: Address, now: int) -> None:
        vid = entry.vehicle_id
        if entry.peer is None:
            self._reply(src, reject(MsgType.RUNNING, "bad-credentials", vehicle_id=vid, t=now))
            return
        session = self.sessions.get(vid)
        if session is not None and session.started_at != msg.t:
            self._close_session(session, session.last_t)
            session = None
        if session is None:
            session = self._open_session(vid, msg.t)
            entry.status = VehicleStatus.RUNNING
            self.active_vehicles.add(vid)
            self._event(now, "running", vehicle_id=vid, session=session.number)
            if len(self.active_vehicles) >= 2 and self._next_proximity is None:
                self._next_proximity = now + self.cfg.proximity_period_ms
        self._event(now, "stream-request", vehicle_id=vid)
        self._reply(src, ControlMessage(MsgType.STREAM_REQUEST, vehicle_id=vid, t=now))

    def _open_session(self, vid: int, started_at: int) -> VehicleSession:
        n = self._session_counter.get(vid, 0) + 1
        self._session_counter[vid] = n
        paths = None
        if self.cfg.store_dir is not None:
            d = Path(self.cfg.store_dir) / str(vid) / f"session_{n}"
            paths = (d / "segment_1.ivsg", d / "segment_2.ivsg")
        rcfg = RecorderConfig(segment_duration=self.cfg.segment_duration, segment_paths=paths, vehicle_id=vid)
        session = VehicleSession(
            vehicle_id=vid, number=n, started_at=started_at,
            recorder=DualSegmentRecorder(rcfg, started_at),
            last_t=started_at,
            video_rb=ReorderBuffer(self.cfg.reorder_window, self.cfg.reorder_hold_ms),
            data_rb=ReorderBuffer(self.cfg.reorder_window, self.cfg.reorder_hold_ms),
        )
        self.sessions[vid] = session
        return session

    def _close_session(self, session: VehicleSession, end_t: int) -> None:
        self._record(session, session.video_rb.flush())
        self._record(session, session.data_rb.flush())
        rec = session.recorder
        rec.advance_to(end_t)
        rec.stop(end_t)
        live = rec.chronological()
        entry = self.registry.vehicles[session.vehicle_id]
        paths = rec.cfg.segment_paths
        entry.last_segments = [paths[s.index - 1] for s in live if s.record_count] if paths else []
        self._last_data[session.vehicle_id] = [rec.segment_bytes(s.index) for s in live if s.record_count]
        rec.close()
        del self.sessions[session.vehicle_id]
        self.active_vehicles.discard(session.vehicle_id)
        self.fixes.pop(session.vehicle_id, None)

    def _on_terminate(self, entry, msg: ControlMessage, now: int) -> None:
        session = self.sessions.get(entry.vehicle_id)
        if session is None or session.closing_at is not None:
            return
        session.closing_at = now + self.cfg.terminate_grace_ms
        session.end_t = msg.t
        session.cause = msg.code
        if session.closing_at <= now:
            self._finish_terminate(session, now)

    def _finish_terminate(self, session: VehicleSession, now: int) -> None:
        self._close_session(session, max(session.end_t, session.last_t))
        entry = self.registry.vehicles[session.vehicle_id]
        entry.status = VehicleStatus.ACCIDENT if session.cause == TERMINATE_ACCIDENT else VehicleStatus.STOPPED
        self._event(now, "terminate", vehicle_id=session.vehicle_id, cause=session.cause,
                    frames=session.frames_recorded, telemetry=session.telemetry_recorded)

    def _on_accident(self, entry, msg: ControlMessage, now: int) -> None:
        key = (entry.vehicle_id, msg.t)
        if key in self._seen_accidents:
            return
        self._seen_accidents.add(key)
        if entry.vehicle_id in self.sessions:
            entry.status = VehicleStatus.ACCIDENT
        row = (msg.t, entry.vehicle_id, msg.detection.value, msg.lat, msg.lon)
        self.accident_log.append(row)
        self._event(now, "accident", vehicle_id=entry.vehicle_id, kind=msg.detection.value,
                    lat=f"{msg.lat:.6f}", lon=f"{msg.lon:.6f}")
        if self.cfg.store_dir is not None:
            with open(Path(self.cfg.store_dir) / "accidents.csv", "a") as fh:
                fh.write(f"{row[0]},{row[1]},{row[2]},{row[3]:.6f},{row[4]:.6f}\n")

    # -- streams ---------------------------------------------------------

    def ingest(self, chunk: VideoChunk | DataChunk, now: int) -> None:
        session = self.sessions.get(chunk.vehicle_id)
        if session is None or chunk.channel not in (Channel.VEHICLE_VIDEO_IN, Channel.VEHICLE_DATA_IN):
            self.counters.dropped_inactive += 1
            return
        rb = session.video_rb if isinstance(chunk, VideoChunk) else session.data_rb
        self._record(session, rb.push(chunk, now))

    def _record(self, session: VehicleSession, chunks: list) -> None:
        rec = session.recorder
        for c in chunks:
            session.last_t = max(session.last_t, c.t)
            rec.advance_to(c.t)
            if rec.state.stopped:
                continue
            if isinstance(c, VideoChunk):
                rec.append_frame(c)
                session.frames_recorded += 1
            else:
                rec.append_telemetry_line(c.t, c.text)
                session.telemetry_recorded += 1
                sample, _ = parse_telemetry(c.text)
                self.fixes[session.vehicle_id] = (sample.t, sample.lat, sample.lon)
            self._forward(session.vehicle_id, c)

    def _forward(self, vid: int, chunk: VideoChunk | DataChunk) -> None:
        for uid in sorted(self.registry.owners_of(vid)):
            user = self.registry.users[uid]
            if not (user.enabled and uid in self.active_users and user.enabled_vehicle == vid):
                continue
            if len(self._forward_q) >= self.cfg.forward_queue_max:
                self.counters.forward_overflow += 1
                continue
            if isinstance(chunk, VideoChunk):
                out = VideoChunk(vid, chunk.seq, chunk.t, chunk.payload, Channel.USER_VIDEO_OUT, uid)
                ch, nbytes = Channel.USER_VIDEO_OUT, len(chunk.payload)
            else:
                out = DataChunk(vid, chunk.seq, chunk.t, chunk.text, Channel.USER_DATA_OUT, uid)
                ch, nbytes = Channel.USER_DATA_OUT, len(chunk.text)
            self._forward_q.append(Outgoing(user.peer, ch, encode(out)))
            self.counters.forwarded[uid] = self.counters.forwarded.get(uid, 0) + 1
            self.counters.forwarded_bytes[uid] = self.counters.forwarded_bytes.get(uid, 0) + nbytes

    def _drain_forward(self) -> None:
        while self._forward_q:
            self.outbox.append(self._forward_q.popleft())

    # -- users -----------------------------------------------------------

    def user_enable(self, user_id: int, vehicle_id: int, credentials: str, src: Address, now: int) -> None:
        user = self.registry.users.get(user_id)
        if user is None:
            self._event(now, "reject", user_id=user_id, kind="USER_ENABLE", reason="not-registered")
            self._reply(src, reject(MsgType.USER_ENABLE, "not-registered", vehicle_id, user_id, now))
            return
        if hash_credentials(credentials) != user.credentials_hash:
            self._reply(src, reject(MsgType.USER_ENABLE, "bad-credentials", vehicle_id, user_id, now))
            return
        if vehicle_id not in user.vehicle_ids:
            self._reply(src, reject(MsgType.USER_ENABLE, "not-owner", vehicle_id, user_id, now))
            return
        user.peer = src
        session = self.sessions.get(vehicle_id)
        if session is not None and session.closing_at is not None:
            self._finish_terminate(session, now)
        if vehicle_id in self.active_vehicles:
            if not user.enabled:
                self._event(now, "user-enable", user_id=user_id, vehicle_id=vehicle_id, mode="live")
            user.enabled = True
            user.enabled_vehicle = vehicle_id
            self.active_users.add(user_id)
            self._reply(src, ack(MsgType.USER_ENABLE, ENABLE_LIVE, vehicle_id, user_id, now))
            return
        self._reply(src, ack(MsgType.USER_ENABLE, ENABLE_REPLAY, vehicle_id, user_id, now))
        if any(r.user_id == user_id for r in self._replays):
            return
        self._event(now, "user-enable", user_id=user_id, vehicle_id=vehicle_id, mode="replay")
        self._replays.append(_Replay(user_id, vehicle_id, src, self._replay_records(vehicle_id)))
        self._pump_replays(now)

    def user_disable(self, user_id: int, src: Address, now: int) -> None:
        user = self.registry.users.get(user_id)
        if user is None:
            self._reply(src, reject(MsgType.USER_DISABLE, "not-registered", 0, user_id, now))
            return
        if user.enabled:
            self._event(now, "user-disable", user_id=user_id, vehicle_id=user.enabled_vehicle)
        user.enabled = False
        user.enabled_vehicle = None
        self.active_users.discard(user_id)
        self._replays = [r for r in self._replays if r.user_id != user_id]
        self._reply(src, ack(MsgType.USER_DISABLE, 0, 0, user_id, now))

    def last_containers(self, vehicle_id: int) -> list[Container]:
        entry = self.registry.vehicles.get(vehicle_id)
        if entry is not None and entry.last_segments:
            return [read_container(p) for p in entry.last_segments]
        return [parse_container(b) for b in self._last_data.get(vehicle_id, [])]

    def _replay_records(self, vehicle_id: int):
        records = [r for c in self.last_containers(vehicle_id) for r in c.records]
        records.sort(key=lambda r: r.t)
        yield from records

    def _pump_replays(self, now: int) -> None:
        if now == self._last_pump:
            return
        self._last_pump = now
        batch = self.cfg.replay_batch
        still = []
        for rp in self._replays:
            sent = 0
            finished = True
            for rec in rp.records:
                if rec.type == FRAME:
                    self.send(rp.dst, Channel.USER_VIDEO_OUT,
                              VideoChunk(rp.vehicle_id, rp.video_seq, rec.t, rec.payload,
                                         Channel.USER_VIDEO_OUT, rp.user_id))
                    rp.video_seq += 1
                else:
                    self.send(rp.dst, Channel.USER_DATA_OUT,
                              DataChunk(rp.vehicle_id, rp.data_seq, rec.t, rec.payload.decode("ascii"),
                                        Channel.USER_DATA_OUT, rp.user_id))
                    rp.data_seq += 1
                self.counters.replayed[rp.user_id] = self.counters.replayed.get(rp.user_id, 0) + 1
                sent += 1
                if batch is not None and sent >= batch:
                    finished = False
                    break
            if not finished:
                still.append(rp)
        self._replays = still

    # -- timers ----------------------------------------------------------

    def poll(self, now: int) -> None:
        self._now = now
        for session in list(self.sessions.values()):
            self._record(session, session.video_rb.poll(now))
            self._record(session, session.data_rb.poll(now))
            if session.closing_at is not None and now >= session.closing_at:
                self._finish_terminate(session, now)
        if self._next_proximity is not None and now >= self._next_proximity:
            self._check_proximity(now)
            if len(self.active_vehicles) >= 2:
                while self._next_proximity <= now:
                    self._next_proximity += self.cfg.proximity_period_ms
            else:
                self._next_proximity = None
        if self._replays:
            self._pump_replays(now)
        self._drain_forward()

    def _check_proximity(self, now: int) -> None:
        fixes = {v: f for v, f in self.fixes.items() if v in self.active_vehicles}
        near = {}
        for w in proximity_check(fixes, self.cfg.d_crit_m, self.cfg.proximity_dt_ms):
            near[(w.vehicle_a, w.vehicle_b)] = w
        for pair in sorted(set(near) - self._near):
            w = near[pair]
            self.warnings.append(w)
            self._event(now, "proximity", a=w.vehicle_a, b=w.vehicle_b, distance_m=f"{w.distance_m:.2f}")
            if self.cfg.store_dir is not None:
                with open(Path(self.cfg.store_dir) / "proximity.log", "a") as fh:
                    fh.write(f"{w.t},{w.vehicle_a},{w.vehicle_b},{w.distance_m:.3f}\n")
        self._near = set(near)

    def next_wakeup(self) -> int | None:
        times = []
        for s in self.sessions.values():
            for rb in (s.video_rb, s.data_rb):
                d = rb.deadline()
                if d is not None:
                    times.append(d)
            if s.closing_at is not None:
                times.append(s.closing_at)
        if self._next_proximity is not None:
            times.append(self._next_proximity)
        if self._replays:
            times.append(self._now + 1)
        return min(times) if times else None

    @property
    def replay_pending(self) -> bool:
        return bool(self._replays)

    def finalize(self, now: int) -> None:
        """Seal every open session, e.g. at the end of a run whose terminate was lost."""
        for session in list(self.sessions.values()):
            if session.closing_at is not None:
                self._finish_terminate(session, now)
                continue
            self._close_session(session, session.last_t)
            self.registry.vehicles[session.vehicle_id].status = VehicleStatus.STOPPED
            self._event(now, "finalize", vehicle_id=session.vehicle_id)
        self._drain_forward()

