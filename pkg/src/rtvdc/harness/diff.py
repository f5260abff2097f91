"""Record-level comparison of IVSG containers."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from ..container import Container, Record, parse_container, read_container

Key = tuple[int, int]  # (record type, t)


@dataclass
class DiffReport:
    missing_on_b: list[Key] = field(default_factory=list)
    extra_on_b: list[Key] = field(default_factory=list)
    mismatched: list[Key] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not (self.missing_on_b or self.extra_on_b or self.mismatched)

    def __len__(self) -> int:
        return len(self.missing_on_b) + len(self.extra_on_b) + len(self.mismatched)

    def lines(self) -> list[str]:
        out = []
        for tag, keys in (("missing", self.missing_on_b), ("extra", self.extra_on_b),
                          ("mismatch", self.mismatched)):
            out += [f"{tag} type={k[0]} t={k[1]}" for k in keys]
        return out


def _load(src: Container | bytes | str | Path) -> Container:
    if isinstance(src, Container):
        return src
    if isinstance(src, (bytes, bytearray)):
        return parse_container(bytes(src))
    return read_container(src)


def _index(containers: Iterable[Container], interval: tuple[int, int] | None) -> dict[Key, list[bytes]]:
    idx: dict[Key, list[bytes]] = {}
    for c in containers:
        for r in c.records:
            if interval is not None and not interval[0] <= r.t < interval[1]:
                continue
            idx.setdefault((r.type, r.t), []).append(r.payload)
    return idx


def container_diff(a, b, interval: tuple[int, int] | None = None) -> DiffReport:
    """Compare the records of ``a`` and ``b`` keyed by (type, t), keeping only
    records with ``interval[0] <= t < interval[1]`` when given.

    Each side may be one container (object, bytes or path) or a list of them,
    e.g. both segments of a recorder.  A key present on both sides with
    different payloads is a mismatch; repeated keys are matched as multisets.
    """
    side_a = [_load(x) for x in a] if isinstance(a, (list, tuple)) else [_load(a)]
    side_b = [_load(x) for x in b] if isinstance(b, (list, tuple)) else [_load(b)]
    ia, ib = _index(side_a, interval), _index(side_b, interval)
    rep = DiffReport()
    for key in sorted(ia.keys() | ib.keys()):
        pa, pb = Counter(ia.get(key, [])), Counter(ib.get(key, []))
        common = sum((pa & pb).values())
        only_a = sum(pa.values()) - common
        only_b = sum(pb.values()) - common
        paired = min(only_a, only_b)
        rep.mismatched += [key] * paired
        rep.missing_on_b += [key] * (only_a - paired)
        rep.extra_on_b += [key] * (only_b - paired)
    return rep


def records_in(containers: Iterable[Container], interval: tuple[int, int]) -> list[Record]:
    return sorted((r for c in containers for r in c.records if interval[0] <= r.t < interval[1]),
                  key=lambda r: (r.t, r.type))
