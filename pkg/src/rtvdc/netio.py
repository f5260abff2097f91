"""Run one sans-IO party over real UDP sockets.

The party sees a logical millisecond clock derived from the monotonic wall
clock times ``time_scale``.  Outgoing datagrams pass through the same seeded
fault injector the in-process harness uses before they reach the socket, so
a NetConfig means the same thing in both modes.
"""

from __future__ import annotations

import logging
import selectors
import socket
import time
from typing import Callable

from .harness.network import NetConfig, SimNetwork
from .party import Party
from .protocol import Channel

log = logging.getLogger(__name__)

MAX_DATAGRAM = 65_535


class ScaledClock:
    def __init__(self, time_scale: float = 1.0, start_ms: int = 0) -> None:
        if time_scale <= 0:
            raise ValueError("time_scale must be > 0")
        self.scale = time_scale
        self.start_ms = start_ms
        self._t0 = time.monotonic()

    def now(self) -> int:
        return self.start_ms + int((time.monotonic() - self._t0) * 1000 * self.scale)

    def wall_seconds(self, logical_ms: int) -> float:
        return max(0.0, logical_ms / 1000 / self.scale)


class UdpRunner:
    """Binds one socket per channel (``{channel: (host, port)}``) or a single
    ephemeral socket for a client party, and pumps the party until ``until``
    returns true."""

    def __init__(self, party: Party, binds: dict[Channel, tuple[str, int]] | None = None,
                 host: str = "127.0.0.1", time_scale: float = 1.0,
                 net: NetConfig | None = None) -> None:
        self.party = party
        self.clock = ScaledClock(time_scale)
        self.net = SimNetwork(net if net is not None else NetConfig(delay=0))
        self.sel = selectors.DefaultSelector()
        self.socks: dict[Channel | None, socket.socket] = {}
        if binds:
            for ch, addr in binds.items():
                self._open(ch, addr)
        else:
            self._open(None, (host, 0))

    def _open(self, ch: Channel | None, addr: tuple[str, int]) -> None:
        s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        s.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 4 << 20)
        s.bind(addr)
        s.setblocking(False)
        self.socks[ch] = s
        self.sel.register(s, selectors.EVENT_READ, ch)

    @property
    def local_addr(self) -> tuple[str, int]:
        return next(iter(self.socks.values())).getsockname()

    def now(self) -> int:
        return self.clock.now()

    def _sock_for(self, ch: Channel) -> socket.socket:
        return self.socks.get(ch) or self.socks.get(Channel.CONTROL) or next(iter(self.socks.values()))

    def flush(self, now: int) -> None:
        for o in self.party.drain():
            self.net.send(now, self.local_addr, o)
        for d in self.net.pop_due(now):
            try:
                self._sock_for(d.channel).sendto(d.data, d.dst)
            except OSError as exc:
                # Unreachable peers are just loss on a datagram network.
                log.debug("sendto %s failed: %s", d.dst, exc)

    def step(self, max_wait_ms: int = 50) -> None:
        now = self.now()
        wake = [w for w in (self.party.next_wakeup(), self.net.next_time()) if w is not None]
        wait_ms = min([max_wait_ms, *[w - now for w in wake]])
        for key, _ in self.sel.select(self.clock.wall_seconds(max(0, wait_ms))):
            sock: socket.socket = key.fileobj
            while True:
                try:
                    data, src = sock.recvfrom(MAX_DATAGRAM)
                except (BlockingIOError, InterruptedError):
                    break
                except OSError as exc:
                    log.debug("recv failed: %s", exc)
                    break
                now = self.now()
                self.party.handle_datagram(data, src, now, key.data)
                self.flush(now)
        now = self.now()
        self.party.poll(now)
        self.flush(now)

    def run(self, until: Callable[[], bool]) -> None:
        while not until():
            self.step()
        self.flush(self.now())

    def close(self) -> None:
        for s in self.socks.values():
            self.sel.unregister(s)
            s.close()
        self.sel.close()

