"""Receive-side reordering for one inbound UDP stream."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Generic, Protocol, TypeVar


class _Seqd(Protocol):
    @property
    def seq(self) -> int: ...


C = TypeVar("C", bound=_Seqd)

DEFAULT_WINDOW = 32
DEFAULT_HOLD_MS = 200


@dataclass
class ReorderStats:
    released: int = 0
    duplicates: int = 0
    late: int = 0
    gaps: int = 0
    lost: int = 0


class ReorderBuffer(Generic[C]):
    """Releases chunks in strictly increasing ``seq``.

    A missing seq is waited on until ``window`` chunks are held or ``hold_ms``
    has passed since the first chunk queued behind it; then it is declared lost
    and everything contiguous after it is released.  Duplicates and chunks that
    arrive after their slot was released or skipped are dropped.

    Without ``start_seq`` the stream may join mid-sequence, so the first
    arrivals are held under the same window/hold rule and the lowest seq seen
    by then becomes the start.  Nothing before it counts as lost.
    """

    def __init__(self, window: int = DEFAULT_WINDOW, hold_ms: int = DEFAULT_HOLD_MS,
                 start_seq: int | None = None) -> None:
        if window < 1 or hold_ms < 0:
            raise ValueError("window must be >= 1 and hold_ms >= 0")
        self.window = window
        self.hold_ms = hold_ms
        self.next_seq = start_seq
        self.stats = ReorderStats()
        self._held: dict[int, C] = {}
        self._waiting_since: int | None = None

    def __len__(self) -> int:
        return len(self._held)

    def push(self, chunk: C, now: int) -> list[C]:
        seq = chunk.seq
        if self.next_seq is not None and seq < self.next_seq:
            self.stats.late += 1
            return []
        if seq in self._held:
            self.stats.duplicates += 1
            return []
        self._held[seq] = chunk
        out = self._drain()
        if self._held and self._waiting_since is None:
            self._waiting_since = now
        out.extend(self._expire(now))
        return out

    def deadline(self) -> int | None:
        """Time at which a held gap will be given up on, if any."""
        if not self._held or self._waiting_since is None:
            return None
        return self._waiting_since + self.hold_ms

    def poll(self, now: int) -> list[C]:
        """Release anything whose hold time has run out."""
        return self._expire(now)

    def flush(self) -> list[C]:
        """End of stream: give up on every gap and release what is held."""
        out: list[C] = []
        while self._held:
            out.extend(self._skip_gap())
        self._waiting_since = None
        return out

    def _drain(self) -> list[C]:
        out = []
        held = self._held
        while self.next_seq in held:
            out.append(held.pop(self.next_seq))
            self.next_seq += 1
        self.stats.released += len(out)
        if out:
            # Whatever is still held is now waiting on a fresh gap.
            self._waiting_since = None
        return out

    def _skip_gap(self) -> list[C]:
        first = min(self._held)
        if self.next_seq is not None and first > self.next_seq:
            self.stats.gaps += 1
            self.stats.lost += first - self.next_seq
        self.next_seq = first
        return self._drain()

    def _expire(self, now: int) -> list[C]:
        out: list[C] = []
        while self._held and (
            len(self._held) >= self.window
            or (self._waiting_since is not None and now - self._waiting_since >= self.hold_ms)
        ):
            out.extend(self._skip_gap())
            if self._held:
                self._waiting_since = now
        return out
