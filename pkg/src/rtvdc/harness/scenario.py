"""Scenario files and the deterministic in-process runner.

A scenario drives one server, any number of vehicles and users on a shared
logical clock.  The clock jumps from event to event (party timers, datagram
deliveries, scripted user actions); nothing depends on wall time, so a
scenario and seed always yield the same trace and the same files.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from ..party import Address, Party, ServerAddress
from ..protocol import Channel
from ..recorder import RecorderConfig, Variant
from ..registry import Registry, TextRegistryStore
from ..sensor_sim import SimConfig, sim_config_from_mapping
from ..server import ITSServer, ServerConfig
from ..user import UserClient, UserSession
from ..vehicle import AgentConfig, VehicleAgent
from .network import NetConfig, SimNetwork

SERVER_HOST = "its-server"
MINUTE_MS = 60_000


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class VehicleSpec:
    vehicle_id: int
    credentials: str = "secret"
    register: bool = True
    start_ms: int = 0
    stop_ms: int | None = None
    segment_duration: int = 300_000
    variant: Variant = Variant.STOP_ON_ACCIDENT
    fps: int = 30
    frame_bytes: int = 13
    sim: SimConfig = field(default_factory=SimConfig)
    video_send_period: int = 33
    data_send_period: int | None = None


@dataclass(frozen=True)
class UserAction:
    t: int
    action: str
    vehicle_id: int | None = None


@dataclass(frozen=True)
class UserSpec:
    user_id: int
    credentials: str = "secret"
    vehicle_ids: tuple[int, ...] = ()
    register: bool = True
    actions: tuple[UserAction, ...] = ()


@dataclass(frozen=True)
class Scenario:
    vehicles: tuple[VehicleSpec, ...]
    users: tuple[UserSpec, ...] = ()
    net: NetConfig = field(default_factory=NetConfig)
    duration: int = 60_000
    seed: int = 0
    server: dict = field(default_factory=dict)
    grace_ms: int = 5_000
    expected: str | None = None

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ScenarioError("duration must be > 0")
        ids = [v.vehicle_id for v in self.vehicles]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate vehicle ids")
        uids = [u.user_id for u in self.users]
        if len(set(uids)) != len(uids):
            raise ScenarioError("duplicate user ids")
        for u in self.users:
            for a in u.actions:
                if a.action not in ("enable", "disable"):
                    raise ScenarioError(f"unknown user action {a.action!r}")
                if a.action == "enable" and a.vehicle_id is None:
                    raise ScenarioError("enable needs a vehicle")
        unknown = set(self.server) - set(ServerConfig.__dataclass_fields__) - {"segment_minutes"}
        if unknown:
            raise ScenarioError(f"unknown server settings: {sorted(unknown)}")

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed, net=replace(self.net, seed=seed))


# -- scenario file parsing ----------------------------------------------------

def _minutes_or_ms(d: dict, minutes_key: str, ms_key: str, default: int) -> int:
    if ms_key in d:
        return int(d[ms_key])
    if minutes_key in d:
        return int(round(float(d[minutes_key]) * MINUTE_MS))
    return default


def scenario_from_dict(d: dict[str, Any]) -> Scenario:
    try:
        seed = int(d.get("seed", 0))
        netd = dict(d.get("net", {}))
        delay = netd.pop("delay_ms", 5)
        channel_loss = {Channel[k.upper()]: float(v) for k, v in netd.pop("channel_loss", {}).items()}
        net = NetConfig(
            loss_rate=float(netd.pop("loss_rate", 0.0)),
            channel_loss=channel_loss,
            delay=tuple(delay) if isinstance(delay, list) else int(delay),
            reorder_rate=float(netd.pop("reorder_rate", 0.0)),
            duplicate_rate=float(netd.pop("duplicate_rate", 0.0)),
            seed=int(netd.pop("seed", seed)),
        )
        if netd:
            raise ScenarioError(f"unknown net settings: {sorted(netd)}")
        vehicles = []
        for v in d.get("vehicles", []):
            simd = dict(v.get("sim", {}))
            simd.setdefault("seed", seed * 1000 + int(v["id"]))
            vehicles.append(VehicleSpec(
                vehicle_id=int(v["id"]),
                credentials=str(v.get("credentials", "secret")),
                register=bool(v.get("register", True)),
                start_ms=int(v.get("start_ms", 0)),
                stop_ms=int(v["stop_ms"]) if "stop_ms" in v else None,
                segment_duration=_minutes_or_ms(v, "segment_minutes", "segment_ms", 300_000),
                variant=Variant(v.get("variant", "stop")),
                fps=int(v.get("fps", 30)),
                frame_bytes=int(v.get("frame_bytes", 13)),
                sim=sim_config_from_mapping(simd),
                video_send_period=int(v.get("video_send_period", 33)),
                data_send_period=int(v["data_send_period"]) if "data_send_period" in v else None,
            ))
        users = []
        for u in d.get("users", []):
            actions = tuple(
                UserAction(int(a["t"]), str(a["action"]),
                           int(a["vehicle"]) if "vehicle" in a else None)
                for a in u.get("actions", [])
            )
            users.append(UserSpec(int(u["id"]), str(u.get("credentials", "secret")),
                                  tuple(int(x) for x in u.get("vehicles", [])),
                                  bool(u.get("register", True)), actions))
        return Scenario(
            vehicles=tuple(vehicles), users=tuple(users), net=net,
            duration=_minutes_or_ms(d, "duration_minutes", "duration_ms", 60_000),
            seed=seed, server=dict(d.get("server", {})),
            grace_ms=int(d.get("grace_ms", 5_000)), expected=d.get("expected"),
        )
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"bad scenario: {exc!r}") from None


def load_scenario(path: str | Path) -> Scenario:
    return scenario_from_dict(json.loads(Path(path).read_text()))


# -- trace ------------------------------------------------------------------------

class TraceLog:
    def __init__(self) -> None:
        self.lines: list[str] = []

    def __call__(self, t: int, party: str, kind: str, detail: str = "") -> None:
        self.lines.append(f"{t}|{party}|{kind}|{detail}")

    def digest(self) -> str:
        h = hashlib.sha256()
        for line in self.lines:
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

    def grep(self, party: str | None = None, kind: str | None = None) -> list[str]:
        out = []
        for line in self.lines:
            _, p, k, _ = line.split("|", 3)
            if (party is None or p == party) and (kind is None or k == kind):
                out.append(line)
        return out

    def write(self, path: Path) -> None:
        path.write_text("\n".join(self.lines) + "\n")


@dataclass
class RunResult:
    scenario: Scenario
    trace: TraceLog
    server: ITSServer
    vehicles: dict[int, VehicleAgent]
    users: dict[int, UserClient]
    net: SimNetwork
    out_dir: Path
    end_t: int

    def file_hashes(self) -> dict[str, str]:
        out = {}
        for p in sorted(self.out_dir.rglob("*")):
            if p.is_file() and p.name != "trace.log":
                out[str(p.relative_to(self.out_dir))] = hashlib.sha256(p.read_bytes()).hexdigest()
        return out


# -- runner -----------------------------------------------------------------------

def _server_config(sc: Scenario, store_dir: Path) -> ServerConfig:
    kwargs = dict(sc.server)
    if "segment_minutes" in kwargs:
        kwargs["segment_duration"] = int(round(float(kwargs.pop("segment_minutes")) * MINUTE_MS))
    elif "segment_duration" not in kwargs and sc.vehicles:
        kwargs["segment_duration"] = sc.vehicles[0].segment_duration
    return ServerConfig(host=SERVER_HOST, store_dir=store_dir, **kwargs)


def run_scenario(sc: Scenario, out_dir: str | Path | None = None, max_spin: int = 100_000) -> RunResult:
    """Run every party to completion on the logical clock."""
    out = Path(out_dir) if out_dir is not None else Path(tempfile.mkdtemp(prefix="rtvdc-run-"))
    if out.exists() and any(out.iterdir()):
        # Registry and logs are appended to; a reused directory would leak state between runs.
        raise ScenarioError(f"output directory {out} is not empty")
    out.mkdir(parents=True, exist_ok=True)
    trace = TraceLog()
    net = SimNetwork(sc.net, trace)

    scfg = _server_config(sc, out / "server")
    server = ITSServer(scfg, Registry(TextRegistryStore(out / "server" / "registry.txt")))
    server.trace = trace
    server_addr = ServerAddress(SERVER_HOST, scfg.ports)
    for v in sc.vehicles:
        if v.register:
            server.register("vehicle", v.vehicle_id, v.credentials)
    for u in sc.users:
        if u.register:
            server.register("user", u.user_id, u.credentials, u.vehicle_ids)

    routes: dict[Address, tuple[Party, Channel | None]] = {}
    for ch in Channel:
        routes[server.addr(ch)] = (server, ch)
    home: dict[int, Address] = {id(server): server.addr(Channel.CONTROL)}

    vehicles: dict[int, VehicleAgent] = {}
    actions: list[tuple[int, int, Any]] = []
    n = 0
    for v in sc.vehicles:
        rcfg = RecorderConfig(segment_duration=v.segment_duration, variant=v.variant,
                              fps=v.fps, frame_bytes=v.frame_bytes)
        agent = VehicleAgent(AgentConfig(
            vehicle_id=v.vehicle_id, credentials=v.credentials, server=server_addr, recorder=rcfg,
            sim=v.sim, video_send_period=v.video_send_period, data_send_period=v.data_send_period,
            out_dir=out / f"vehicle_{v.vehicle_id}",
            stop_at=v.stop_ms if v.stop_ms is not None else sc.duration,
        ))
        agent.trace = trace
        vehicles[v.vehicle_id] = agent
        addr = (f"vehicle-{v.vehicle_id}", 0)
        routes[addr] = (agent, None)
        home[id(agent)] = addr
        heapq.heappush(actions, (v.start_ms, n, ("start", agent)))
        n += 1

    users: dict[int, UserClient] = {}
    for u in sc.users:
        client = UserClient(UserSession(u.user_id, server_addr, u.credentials,
                                        out_dir=out / f"user_{u.user_id}"))
        client.trace = trace
        users[u.user_id] = client
        addr = (f"user-{u.user_id}", 0)
        routes[addr] = (client, None)
        home[id(client)] = addr
        for a in u.actions:
            heapq.heappush(actions, (a.t, n, (a.action, client, a.vehicle_id)))
            n += 1

    parties: list[Party] = [server, *vehicles.values(), *users.values()]

    def flush(p: Party, now: int) -> None:
        for o in p.drain():
            net.send(now, home[id(p)], o)

    def run_action(act: tuple, now: int) -> None:
        if act[0] == "start":
            act[1].start(now)
            flush(act[1], now)
        elif act[0] == "enable":
            act[1].enable(act[2], now)
            flush(act[1], now)
        else:
            act[1].disable(now)
            flush(act[1], now)

    horizon = sc.duration + sc.grace_ms
    now = 0
    spin = 0
    while True:
        cands = [net.next_time()]
        if actions:
            cands.append(actions[0][0])
        cands.extend(p.next_wakeup() for p in parties)
        cands = [c for c in cands if c is not None]
        if not cands:
            break
        t = max(min(cands), now)
        if t > horizon:
            break
        spin = spin + 1 if t == now else 0
        if spin > max_spin:
            raise RuntimeError(f"no progress at t={now}")
        now = t
        for d in net.pop_due(now):
            target = routes.get(d.dst)
            if target is None:
                trace(now, "net", "unroutable", f"{d.dst[0]}:{d.dst[1]}")
                continue
            party, ch = target
            party.handle_datagram(d.data, d.src, now, ch if ch is not None else d.channel)
            flush(party, now)
        while actions and actions[0][0] <= now:
            run_action(heapq.heappop(actions)[2], now)
        for p in parties:
            p.poll(now)
            flush(p, now)

    end_t = max(now, sc.duration)
    for agent in vehicles.values():
        if not agent.done:
            agent.stop(end_t)
    for client in users.values():
        client.close(end_t)
    server.finalize(end_t)
    trace(end_t, "harness", "end", f"sent={net.stats.sent} dropped={net.stats.dropped} "
                                   f"dup={net.stats.duplicated} delivered={net.stats.delivered}")
    trace.write(out / "trace.log")
    return RunResult(sc, trace, server, vehicles, users, net, out, end_t)
