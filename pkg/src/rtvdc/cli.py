"""Command-line entry points: ``vehicle``, ``its-server``, ``user-client``, ``harness``."""

from __future__ import annotations

import argparse
import logging
import signal
import sys
from dataclasses import replace
from pathlib import Path

from .party import DEFAULT_PORTS, ServerAddress
from .protocol import Channel
from .recorder import RecorderConfig, Variant
from .sensor_sim import AccidentScript, SimConfig, load_sim_config

MINUTE_MS = 60_000


def _minutes(text: str) -> int:
    ms = int(round(float(text) * MINUTE_MS))
    if ms <= 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return ms


def _ports(text: str) -> tuple[int, ...]:
    parts = tuple(int(p) for p in text.split(","))
    if len(parts) != 5:
        raise argparse.ArgumentTypeError("expected five comma-separated ports")
    return parts


def _server_addr(text: str, ports: tuple[int, ...] | None) -> ServerAddress:
    """``host`` or ``host:control_port``; the other four ports follow it."""
    host, _, port = text.partition(":")
    if ports is None:
        ports = tuple(int(port) + i for i in range(5)) if port else DEFAULT_PORTS
    return ServerAddress(host or "127.0.0.1", ports)


def _logging(verbose: bool) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)


class _Stop:
    def __init__(self) -> None:
        self.flag = False
        signal.signal(signal.SIGINT, self._set)
        signal.signal(signal.SIGTERM, self._set)

    def _set(self, *_):
        self.flag = True


# -- vehicle -------------------------------------------------------------------

def vehicle_main(argv: list[str] | None = None) -> int:
    from .netio import UdpRunner
    from .vehicle import AgentConfig, VehicleAgent

    ap = argparse.ArgumentParser(prog="vehicle", description="Record locally and stream on request.")
    ap.add_argument("--config", type=Path, help="sensor config (JSON or key = value)")
    ap.add_argument("--server", default="127.0.0.1", help="host[:control_port]")
    ap.add_argument("--ports", type=_ports, help="explicit server ports c,vv,vd,uv,ud")
    ap.add_argument("--id", type=int, required=True, dest="vehicle_id")
    ap.add_argument("--credentials", default="secret")
    ap.add_argument("--segment-minutes", type=_minutes, default=300_000, dest="segment_ms")
    ap.add_argument("--variant", choices=[v.value for v in Variant], default="stop")
    ap.add_argument("--accident", type=AccidentScript.parse, help="turnover@ms or crash@ms")
    ap.add_argument("--time-scale", type=float, default=1.0)
    ap.add_argument("--out-dir", type=Path)
    ap.add_argument("--duration", type=int, help="stop the engine after this many ms")
    ap.add_argument("--fps", type=int, default=30)
    ap.add_argument("--frame-bytes", type=int, default=12_722)
    ap.add_argument("--seed", type=int)
    ap.add_argument("-v", "--verbose", action="store_true")
    a = ap.parse_args(argv)
    _logging(a.verbose)

    sim = load_sim_config(a.config) if a.config else SimConfig()
    if a.accident is not None:
        sim = replace(sim, accident_script=a.accident)
    if a.seed is not None:
        sim = replace(sim, seed=a.seed)
    cfg = AgentConfig(
        vehicle_id=a.vehicle_id, credentials=a.credentials, server=_server_addr(a.server, a.ports),
        recorder=RecorderConfig(segment_duration=a.segment_ms, variant=Variant(a.variant),
                                fps=a.fps, frame_bytes=a.frame_bytes),
        sim=sim, time_scale=a.time_scale, out_dir=a.out_dir, stop_at=a.duration,
    )
    agent = VehicleAgent(cfg)
    runner = UdpRunner(agent, time_scale=a.time_scale)
    stop = _Stop()
    try:
        agent.start(runner.now())
        runner.run(lambda: agent.done or stop.flag)
        if not agent.done:
            agent.stop(runner.now())
            runner.flush(runner.now())
    finally:
        runner.close()
    logging.getLogger("vehicle").info("exit %s", agent.exit_code)
    return agent.exit_code or 0


# -- server --------------------------------------------------------------------

def server_main(argv: list[str] | None = None) -> int:
    from .netio import UdpRunner
    from .registry import Registry, TextRegistryStore
    from .server import ITSServer, ServerConfig

    ap = argparse.ArgumentParser(prog="its-server", description="ITS centre server.")
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--ports", type=_ports, default=DEFAULT_PORTS)
    ap.add_argument("--registry", type=Path, help="registry text file (loaded and appended to)")
    ap.add_argument("--register", action="append", default=[], metavar="KIND:ID:CREDS[:VIDS]",
                    help="register a vehicle or user at start-up, e.g. user:7:pw:1,2")
    ap.add_argument("--segment-minutes", type=_minutes, default=300_000, dest="segment_ms")
    ap.add_argument("--store-dir", type=Path, default=Path("its-store"))
    ap.add_argument("--time-scale", type=float, default=1.0)
    ap.add_argument("--duration", type=int, help="shut down after this many ms")
    ap.add_argument("-v", "--verbose", action="store_true")
    a = ap.parse_args(argv)
    _logging(a.verbose)

    registry = Registry(TextRegistryStore(a.registry) if a.registry else None)
    cfg = ServerConfig(host=a.host, ports=a.ports, store_dir=a.store_dir, segment_duration=a.segment_ms)
    server = ITSServer(cfg, registry)
    for spec in a.register:
        parts = spec.split(":")
        if len(parts) not in (3, 4) or parts[0] not in ("vehicle", "user"):
            ap.error(f"bad --register {spec!r}")
        vids = tuple(int(v) for v in parts[3].split(",") if v) if len(parts) == 4 else ()
        if int(parts[1]) not in (registry.vehicles if parts[0] == "vehicle" else registry.users):
            server.register(parts[0], int(parts[1]), parts[2], vids)
    runner = UdpRunner(server, binds={ch: (a.host, a.ports[int(ch)]) for ch in Channel},
                       time_scale=a.time_scale)
    stop = _Stop()
    try:
        runner.run(lambda: stop.flag or (a.duration is not None and runner.now() >= a.duration))
        server.finalize(runner.now())
        runner.flush(runner.now())
    finally:
        runner.close()
    return 0


# -- user ----------------------------------------------------------------------

def user_main(argv: list[str] | None = None) -> int:
    from .netio import UdpRunner
    from .user import Summary, UserClient, UserSession

    ap = argparse.ArgumentParser(prog="user-client", description="Watch one vehicle live or replayed.")
    ap.add_argument("--server", default="127.0.0.1", help="host[:control_port]")
    ap.add_argument("--ports", type=_ports)
    ap.add_argument("--user", type=int, required=True)
    ap.add_argument("--credentials", default="secret")
    ap.add_argument("--vehicle", type=int, required=True)
    ap.add_argument("--out-dir", type=Path)
    ap.add_argument("--duration", type=int, default=10_000, help="ms to stay enabled")
    ap.add_argument("--time-scale", type=float, default=1.0)
    ap.add_argument("-v", "--verbose", action="store_true")
    a = ap.parse_args(argv)
    _logging(a.verbose)

    if a.out_dir is not None:
        a.out_dir.mkdir(parents=True, exist_ok=True)
    client = UserClient(UserSession(a.user, _server_addr(a.server, a.ports), a.credentials, out_dir=a.out_dir))
    runner = UdpRunner(client, time_scale=a.time_scale)
    stop = _Stop()
    try:
        client.enable(a.vehicle, runner.now())
        deadline = runner.now() + a.duration
        runner.run(lambda: stop.flag or client.state == "rejected" or runner.now() >= deadline)
        client.disable(runner.now())
        # Keep reading until the chunks already in flight have landed.
        runner.run(lambda: stop.flag or client.state != "disabling")
        client.close(runner.now())
        runner.flush(runner.now())
    finally:
        runner.close()
    if client.state == "rejected":
        print(f"rejected: {client.error}", file=sys.stderr)
        return 1
    print(Summary.CSV_HEADER)
    print(client.summary.csv())
    return 0


# -- harness -------------------------------------------------------------------

def harness_main(argv: list[str] | None = None) -> int:
    from .container import ContainerError
    from .harness.diff import container_diff
    from .harness.report import SCHEMES, storage_report
    from .harness.scenario import load_scenario, run_scenario

    ap = argparse.ArgumentParser(prog="harness", description="Deterministic scenario runner and reports.")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a scenario file on the logical clock")
    r.add_argument("--scenario", type=Path, required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out-dir", type=Path)
    p = sub.add_parser("report", help="storage comparison CSV")
    p.add_argument("--schemes", nargs="+", choices=SCHEMES, default=list(SCHEMES))
    p.add_argument("--durations", nargs="+", type=float, default=[1, 5, 10, 30, 60], help="minutes")
    p.add_argument("--T", nargs="+", type=float, default=[2, 5], dest="T_values", help="segment minutes")
    p.add_argument("--rate", type=int, default=22_900_000, help="bytes per minute")
    p.add_argument("--fps", type=int, default=30)
    p.add_argument("--out", type=Path)
    d = sub.add_parser("diff", help="compare two IVSG containers")
    d.add_argument("a", type=Path)
    d.add_argument("b", type=Path)
    d.add_argument("--from", type=int, dest="t_from")
    d.add_argument("--to", type=int, dest="t_to")
    a = ap.parse_args(argv)

    if a.cmd == "run":
        sc = load_scenario(a.scenario)
        if a.seed is not None:
            sc = sc.with_seed(a.seed)
        res = run_scenario(sc, a.out_dir)
        digest = res.trace.digest()
        print(f"trace {digest} lines={len(res.trace.lines)} out={res.out_dir}")
        if sc.expected is not None and sc.expected != digest:
            print(f"expected {sc.expected}", file=sys.stderr)
            return 1
        return 0
    if a.cmd == "report":
        rep = storage_report(a.schemes, a.durations, a.T_values, a.rate, a.fps)
        if a.out is not None:
            rep.write_csv(a.out)
        else:
            sys.stdout.write(rep.to_csv())
        return 0
    interval = None
    if a.t_from is not None or a.t_to is not None:
        interval = (a.t_from or 0, a.t_to if a.t_to is not None else 2**64)
    try:
        rep = container_diff(a.a, a.b, interval)
    except ContainerError as exc:
        print(f"invalid container: {exc}", file=sys.stderr)
        return 2
    for line in rep.lines():
        print(line)
    print(f"missing={len(rep.missing_on_b)} extra={len(rep.extra_on_b)} mismatched={len(rep.mismatched)}")
    return 0 if rep.empty else 1
