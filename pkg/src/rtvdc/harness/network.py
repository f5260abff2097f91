"""Seeded in-process datagram network with loss, delay, reordering and duplication."""

from __future__ import annotations

import heapq
import random
import zlib
from dataclasses import dataclass, field
from typing import Callable, Mapping

from ..party import Address, Outgoing
from ..protocol import Channel


@dataclass(frozen=True)
class NetConfig:
    loss_rate: float = 0.0
    channel_loss: Mapping[Channel, float] = field(default_factory=dict)
    # Fixed delay, or an inclusive (lo, hi) range sampled uniformly per datagram.
    delay: int | tuple[int, int] = 5
    reorder_rate: float = 0.0
    reorder_extra: tuple[int, int] = (1, 50)
    duplicate_rate: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        rates = [self.loss_rate, self.reorder_rate, self.duplicate_rate, *self.channel_loss.values()]
        if any(not 0.0 <= r <= 1.0 for r in rates):
            raise ValueError("rates must lie in [0, 1]")
        lo, hi = self.delay_range
        if lo < 0 or hi < lo:
            raise ValueError("delay must be >= 0")

    @property
    def delay_range(self) -> tuple[int, int]:
        if isinstance(self.delay, int):
            return (self.delay, self.delay)
        return (int(self.delay[0]), int(self.delay[1]))

    def loss_for(self, channel: Channel) -> float:
        return self.channel_loss.get(channel, self.loss_rate)


@dataclass(frozen=True)
class Delivery:
    at: int
    src: Address
    dst: Address
    channel: Channel
    data: bytes


@dataclass
class NetStats:
    sent: int = 0
    dropped: int = 0
    duplicated: int = 0
    delivered: int = 0
    reordered: int = 0
    per_channel_sent: dict[Channel, int] = field(default_factory=dict)
    per_channel_dropped: dict[Channel, int] = field(default_factory=dict)


class SimNetwork:
    """Every datagram gets one sampled fate: dropped, or delivered once or
    twice after its delay.  Four uniforms are drawn per datagram whatever the
    fate, so one change of rate does not reshuffle every later datagram."""

    def __init__(self, cfg: NetConfig, trace: Callable[[int, str, str, str], None] | None = None) -> None:
        self.cfg = cfg
        self.stats = NetStats()
        self._rng = random.Random(cfg.seed)
        self._heap: list[tuple[int, int, Delivery]] = []
        self._n = 0
        self._trace = trace

    def _delay(self) -> int:
        lo, hi = self.cfg.delay_range
        return lo if lo == hi else self._rng.randint(lo, hi)

    def send(self, now: int, src: Address, out: Outgoing) -> None:
        rng = self._rng
        st = self.stats
        st.sent += 1
        st.per_channel_sent[out.channel] = st.per_channel_sent.get(out.channel, 0) + 1
        u_loss, u_dup, u_reorder, u_extra = rng.random(), rng.random(), rng.random(), rng.random()
        if u_loss < self.cfg.loss_for(out.channel):
            st.dropped += 1
            st.per_channel_dropped[out.channel] = st.per_channel_dropped.get(out.channel, 0) + 1
            self._log(now, "drop", src, out)
            return
        copies = 2 if u_dup < self.cfg.duplicate_rate else 1
        if copies == 2:
            st.duplicated += 1
        for _ in range(copies):
            delay = self._delay()
            if u_reorder < self.cfg.reorder_rate:
                lo, hi = self.cfg.reorder_extra
                delay += lo + int(u_extra * (hi - lo + 1))
                st.reordered += 1
            d = Delivery(now + delay, src, out.dst, out.channel, out.data)
            heapq.heappush(self._heap, (d.at, self._n, d))
            self._n += 1
        self._log(now, "send" if copies == 1 else "send-dup", src, out)

    def _log(self, now: int, what: str, src: Address, out: Outgoing) -> None:
        if self._trace is not None:
            self._trace(now, "net", what,
                        f"{out.channel.name} {src[0]}:{src[1]}->{out.dst[0]}:{out.dst[1]} "
                        f"len={len(out.data)} crc={zlib.crc32(out.data):08x}")

    def next_time(self) -> int | None:
        return self._heap[0][0] if self._heap else None

    def pop_due(self, now: int) -> list[Delivery]:
        out = []
        while self._heap and self._heap[0][0] <= now:
            out.append(heapq.heappop(self._heap)[2])
        self.stats.delivered += len(out)
        return out

    def __len__(self) -> int:
        return len(self._heap)
