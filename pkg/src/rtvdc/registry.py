"""Vehicle and user registries with an append-only text store."""

from __future__ import annotations

import enum
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol


class VehicleStatus(enum.Enum):
    REGISTERED = "registered"
    RUNNING = "running"
    STOPPED = "stopped"
    ACCIDENT = "accident"


class RegistryError(ValueError):
    def __init__(self, code: str) -> None:
        self.code = code
        super().__init__(code)


def hash_credentials(credentials: str) -> str:
    return hashlib.sha256(credentials.encode("utf-8")).hexdigest()


@dataclass
class VehicleRegistryEntry:
    vehicle_id: int
    credentials_hash: str
    status: VehicleStatus = VehicleStatus.REGISTERED
    peer: tuple[str, int] | None = None
    last_segments: list[Path] = field(default_factory=list)
    owners: set[int] = field(default_factory=set)


@dataclass
class UserRegistryEntry:
    user_id: int
    credentials_hash: str
    vehicle_ids: tuple[int, ...] = ()
    enabled: bool = False
    enabled_vehicle: int | None = None
    peer: tuple[str, int] | None = None


class RegistryStore(Protocol):
    def load(self) -> list[tuple[str, int, str, tuple[int, ...]]]: ...
    def append(self, kind: str, ident: int, cred_hash: str, vehicle_ids: tuple[int, ...]) -> None: ...


class TextRegistryStore:
    """One tab-separated line per registration: ``kind  id  sha256  vehicle_ids``."""

    def __init__(self, path: str | os.PathLike) -> None:
        self.path = Path(path)

    def load(self) -> list[tuple[str, int, str, tuple[int, ...]]]:
        if not self.path.exists():
            return []
        rows = []
        for lineno, line in enumerate(self.path.read_text().splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4 or parts[0] not in ("vehicle", "user"):
                raise ValueError(f"{self.path}:{lineno}: malformed registry line")
            vids = tuple(int(v) for v in parts[3].split(",") if v)
            rows.append((parts[0], int(parts[1]), parts[2], vids))
        return rows

    def append(self, kind: str, ident: int, cred_hash: str, vehicle_ids: tuple[int, ...]) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a") as fh:
            fh.write(f"{kind}\t{ident}\t{cred_hash}\t{','.join(map(str, vehicle_ids))}\n")


class Registry:
    """In-memory view backed by an optional persistent store.

    Runtime state (running status, peers, enabled users) is never persisted;
    a reload starts every vehicle as registered and every user disabled.
    """

    def __init__(self, store: RegistryStore | None = None) -> None:
        self.store = store
        self.vehicles: dict[int, VehicleRegistryEntry] = {}
        self.users: dict[int, UserRegistryEntry] = {}
        if store is not None:
            for kind, ident, cred_hash, vids in store.load():
                self._add(kind, ident, cred_hash, vids)

    def register(self, kind: str, ident: int, credentials: str,
                 vehicle_ids: tuple[int, ...] = ()) -> VehicleRegistryEntry | UserRegistryEntry:
        if kind not in ("vehicle", "user"):
            raise ValueError(f"unknown registration kind {kind!r}")
        if ident <= 0:
            raise RegistryError("bad-id")
        table = self.vehicles if kind == "vehicle" else self.users
        if ident in table:
            raise RegistryError("already-registered")
        cred_hash = hash_credentials(credentials)
        entry = self._add(kind, ident, cred_hash, tuple(vehicle_ids))
        if self.store is not None:
            self.store.append(kind, ident, cred_hash, tuple(vehicle_ids))
        return entry

    def _add(self, kind: str, ident: int, cred_hash: str, vids: tuple[int, ...]):
        if kind == "vehicle":
            entry = VehicleRegistryEntry(ident, cred_hash)
            entry.owners = {u.user_id for u in self.users.values() if ident in u.vehicle_ids}
            self.vehicles[ident] = entry
        else:
            entry = UserRegistryEntry(ident, cred_hash, vids)
            self.users[ident] = entry
            for vid in vids:
                if vid in self.vehicles:
                    self.vehicles[vid].owners.add(ident)
        return entry

    def owners_of(self, vehicle_id: int) -> set[int]:
        return {u.user_id for u in self.users.values() if vehicle_id in u.vehicle_ids}
