"""Simulated vehicle sensor feed and the two accident predicates.

The generator is driven by :class:`random.Random` (Mersenne Twister MT19937,
CPython's stdlib implementation).  Golden traces depend on that choice: speed
comes from ``Random.gauss``, angle noise from ``Random.gauss``, brake and turn
signal from ``Random.random``, all drawn in a fixed order per sample.  Frame
payloads use a separate MT19937 instance seeded with ``(seed << 64) | seq`` and
``Random.randbytes``, so any frame can be regenerated without replaying the
stream.
"""

from __future__ import annotations

import enum
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .geo import haversine_m, lerp_fix

DEFAULT_THETA_CRIT = 60.0
DEFAULT_ROUTE = ((15.369400, 44.191000), (15.402000, 44.214000), (15.447000, 44.209000))
TURNOVER_RAMP_MS = 1000


class TurnSignal(enum.IntEnum):
    OFF = 0
    LEFT = 1
    RIGHT = 2


class AccidentKind(enum.Enum):
    TURNOVER = "turnover"
    CRASH = "crash"


@dataclass(frozen=True)
class TelemetrySample:
    t: int
    speed: float
    angle: float
    airbag_deployed: bool
    lat: float
    lon: float
    brake: bool = False
    turn_signal: TurnSignal = TurnSignal.OFF

    def __post_init__(self) -> None:
        if self.speed < 0:
            raise ValueError(f"speed must be >= 0, got {self.speed}")
        if not -180.0 <= self.angle <= 180.0:
            raise ValueError(f"angle out of range: {self.angle}")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"lat out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"lon out of range: {self.lon}")

    @property
    def fix(self) -> tuple[float, float]:
        return (self.lat, self.lon)


@dataclass(frozen=True)
class AccidentScript:
    kind: AccidentKind
    at: int

    @classmethod
    def parse(cls, text: str) -> "AccidentScript":
        """Parse ``turnover@420000`` / ``crash@5000``."""
        kind, sep, at = text.partition("@")
        if not sep:
            raise ValueError(f"accident script must look like kind@ms, got {text!r}")
        try:
            return cls(AccidentKind(kind.strip().lower()), int(at))
        except ValueError as exc:
            raise ValueError(f"bad accident script {text!r}: {exc}") from None

    def __str__(self) -> str:
        return f"{self.kind.value}@{self.at}"


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    mu_speed: float = 60.0
    sigma_speed: float = 10.0
    theta_crit: float = DEFAULT_THETA_CRIT
    sample_period: int = 100
    accident_script: AccidentScript | None = None
    route: tuple[tuple[float, float], ...] = DEFAULT_ROUTE
    angle_sigma: float = 2.0
    # Baseline noise is clipped here so an unscripted drive never trips VTD.
    angle_noise_max: float = 6.0
    brake_prob: float = 0.05
    turn_prob: float = 0.02

    def __post_init__(self) -> None:
        if self.sigma_speed < 0:
            raise ValueError("sigma_speed must be >= 0")
        if self.theta_crit <= 0:
            raise ValueError("theta_crit must be > 0")
        if self.sample_period <= 0:
            raise ValueError("sample_period must be > 0")
        if self.angle_noise_max >= self.theta_crit:
            raise ValueError("angle_noise_max must be strictly below theta_crit")
        if not self.route:
            raise ValueError("route needs at least one waypoint")


@dataclass(frozen=True)
class FrameChunk:
    seq: int
    t: int
    payload: bytes


def detect_vtd(sample: TelemetrySample, theta_crit: float) -> bool:
    """Turnover: the body angle is strictly past the critical angle."""
    if theta_crit <= 0:
        raise ValueError("theta_crit must be > 0")
    return abs(sample.angle) > theta_crit


def detect_vcd(sample: TelemetrySample) -> bool:
    """Crash: the airbag has deployed."""
    return sample.airbag_deployed


def frame_payload(seed: int, seq: int, frame_bytes: int) -> bytes:
    key = ((seed & 0xFFFF_FFFF_FFFF_FFFF) << 64) | (seq & 0xFFFF_FFFF_FFFF_FFFF)
    return random.Random(key).randbytes(frame_bytes)


class _Route:
    """Piecewise-linear path walked by cumulative distance."""

    def __init__(self, waypoints: tuple[tuple[float, float], ...]) -> None:
        self.points = waypoints
        self.legs = [haversine_m(*a, *b) for a, b in zip(waypoints, waypoints[1:])]

    def position(self, dist_m: float) -> tuple[float, float]:
        for i, leg in enumerate(self.legs):
            if dist_m <= leg:
                frac = dist_m / leg if leg > 0 else 0.0
                return lerp_fix(self.points[i], self.points[i + 1], frac)
            dist_m -= leg
        return self.points[-1]


@dataclass
class VehicleSimulator:
    """Sensor and camera stand-in for one vehicle.

    One instance per vehicle; instances share no state.
    """

    cfg: SimConfig
    t: int = 0
    frame_seq: int = 0
    distance_m: float = 0.0
    _rng: random.Random = field(init=False, repr=False)
    _route: _Route = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._rng = random.Random(self.cfg.seed)
        self._route = _Route(self.cfg.route)

    def next_sample(self) -> TelemetrySample:
        cfg = self.cfg
        rng = self._rng
        self.t += cfg.sample_period
        t = self.t

        z_speed = rng.gauss(0.0, 1.0)
        z_angle = rng.gauss(0.0, 1.0)
        u_brake = rng.random()
        u_turn = rng.random()

        speed = max(0.0, cfg.mu_speed + cfg.sigma_speed * z_speed)

        script = cfg.accident_script
        if script is not None and script.kind is AccidentKind.TURNOVER and t >= script.at:
            frac = min(1.0, (t - script.at) / TURNOVER_RAMP_MS)
            angle = min(180.0, 2.0 * cfg.theta_crit * frac)
        else:
            noise = cfg.angle_sigma * z_angle
            angle = max(-cfg.angle_noise_max, min(cfg.angle_noise_max, noise))
        airbag = script is not None and script.kind is AccidentKind.CRASH and t >= script.at

        self.distance_m += speed / 3.6 * cfg.sample_period / 1000.0
        lat, lon = self._route.position(self.distance_m)

        if u_turn < cfg.turn_prob / 2:
            turn = TurnSignal.LEFT
        elif u_turn < cfg.turn_prob:
            turn = TurnSignal.RIGHT
        else:
            turn = TurnSignal.OFF

        # Six decimals is the wire precision; rounding here keeps CSV round-trips exact.
        return TelemetrySample(
            t=t,
            speed=round(speed, 6),
            angle=round(angle, 6) + 0.0,
            airbag_deployed=airbag,
            lat=round(lat, 6),
            lon=round(lon, 6),
            brake=u_brake < cfg.brake_prob,
            turn_signal=turn,
        )

    def make_frame(self, frame_bytes: int, t: int | None = None) -> FrameChunk:
        if frame_bytes <= 0:
            raise ValueError("frame_bytes must be > 0")
        seq = self.frame_seq
        self.frame_seq += 1
        return FrameChunk(seq=seq, t=self.t if t is None else t,
                          payload=frame_payload(self.cfg.seed, seq, frame_bytes))


def _parse_route(text: str) -> tuple[tuple[float, float], ...]:
    points = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        lat, lon = (float(x) for x in chunk.split(","))
        points.append((lat, lon))
    return tuple(points)


def sim_config_from_mapping(data: dict) -> SimConfig:
    kwargs: dict = {}
    for key in ("seed", "sample_period"):
        if key in data:
            kwargs[key] = int(data[key])
    for key in ("mu_speed", "sigma_speed", "theta_crit", "angle_sigma",
                "angle_noise_max", "brake_prob", "turn_prob"):
        if key in data:
            kwargs[key] = float(data[key])
    accident = data.get("accident") or data.get("accident_script")
    if accident:
        kwargs["accident_script"] = AccidentScript.parse(str(accident))
    route = data.get("route")
    if isinstance(route, str):
        kwargs["route"] = _parse_route(route)
    elif route:
        kwargs["route"] = tuple((float(a), float(b)) for a, b in route)
    unknown = set(data) - set(kwargs) - {"accident", "accident_script", "route"}
    if unknown:
        raise ValueError(f"unknown sim config keys: {sorted(unknown)}")
    return SimConfig(**kwargs)


def load_sim_config(path: str | Path) -> SimConfig:
    """Load a SimConfig from JSON or ``key = value`` text.

    In the text form ``route`` is ``lat,lon; lat,lon; ...`` and ``accident``
    is ``kind@ms``.
    """
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        return sim_config_from_mapping(json.loads(text))
    data = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        data[key.strip()] = value.strip()
    return sim_config_from_mapping(data)


def frame_time(t0: int, index: int, fps: int) -> int:
    """Capture time of frame ``index``; integer ms, no drift."""
    return t0 + (index * 1000) // fps

