"""Shared plumbing for the three network parties.

Parties are sans-IO: they receive datagrams through :meth:`Party.handle_datagram`,
do timed work in :meth:`Party.poll`, and queue outgoing datagrams in
``outbox``.  A driver (the in-process harness or the UDP runner) owns the clock
and the sockets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

from .protocol import Channel, Message, encode

log = logging.getLogger(__name__)

Address = tuple[str, int]
TraceHook = Callable[[int, str, str, str], None]

DEFAULT_PORTS = (7000, 7001, 7002, 7003, 7004)


@dataclass(frozen=True)
class Outgoing:
    dst: Address
    channel: Channel
    data: bytes


@dataclass(frozen=True)
class ServerAddress:
    host: str
    ports: tuple[int, int, int, int, int] = DEFAULT_PORTS

    def __post_init__(self) -> None:
        if len(self.ports) != 5 or len(set(self.ports)) != 5:
            raise ValueError("the server needs five distinct ports")

    def addr(self, channel: Channel) -> Address:
        return (self.host, self.ports[int(channel)])


class Backoff:
    """Exponential retry delay, doubling from ``initial`` up to ``cap`` (ms)."""

    def __init__(self, initial: int = 1000, cap: int = 32_000) -> None:
        self.initial = initial
        self.cap = cap
        self.delay = initial

    def next(self) -> int:
        d = self.delay
        self.delay = min(self.cap, self.delay * 2)
        return d

    def reset(self) -> None:
        self.delay = self.initial


class Party:
    name = "party"

    def __init__(self) -> None:
        self.outbox: list[Outgoing] = []
        self.trace: TraceHook | None = None
        self.decode_errors = 0

    def send(self, dst: Address, channel: Channel, msg: Message) -> None:
        self.outbox.append(Outgoing(dst, channel, encode(msg)))

    def drain(self) -> list[Outgoing]:
        out, self.outbox = self.outbox, []
        return out

    def emit(self, t: int, kind: str, detail: str = "") -> None:
        if self.trace is not None:
            self.trace(t, self.name, kind, detail)

    # Subclasses override these three.
    def handle_datagram(self, data: bytes, src: Address, now: int, channel: Channel | None = None) -> None:
        raise NotImplementedError

    def poll(self, now: int) -> None:
        raise NotImplementedError

    def next_wakeup(self) -> int | None:
        raise NotImplementedError

    @property
    def done(self) -> bool:
        return False
