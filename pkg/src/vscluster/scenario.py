"""Scenario description, JSON loading with field-path errors, and eavesdropper checks."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

from .channel import DEFAULT_WINDOW_S, ChannelParams, Position, snr_linear
from .errors import AssumptionViolationError, ScenarioError, ValidationError
from .hashchain import DEFAULT_CHAIN_LENGTH, MAX_CHAIN_LENGTH, Vin

LEGITIMATE = "legitimate"
EAVESDROPPER = "eavesdropper"
MEC = "mec"


@dataclass(frozen=True)
class VehicleSpec:
    name: str
    vin: Vin
    position: Position
    velocity: tuple = (0.0, 0.0)
    role: str = LEGITIMATE


@dataclass(frozen=True)
class Scenario:
    vehicles: tuple
    seed: int = 0
    duration_s: float = 60.0
    tick_s: float = 0.1
    window_s: float = DEFAULT_WINDOW_S
    channel: ChannelParams = field(default_factory=ChannelParams)
    threshold: float = 1.0
    ttl_seconds: float = 10.0
    initiator: str = MEC
    traffic: int = 1
    emergency_interval_s: float = 1.0
    chain_length: int = DEFAULT_CHAIN_LENGTH
    replay_window_s: float = 5.0
    tamper_probability: float = 0.0

    def __post_init__(self):
        _validate(self)

    @property
    def tick_ms(self) -> int:
        return int(round(self.tick_s * 1000))

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration_s / self.tick_s))

    def legitimate(self) -> list:
        return [v for v in self.vehicles if v.role == LEGITIMATE]

    def eavesdroppers(self) -> list:
        return [v for v in self.vehicles if v.role == EAVESDROPPER]

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "duration_s": self.duration_s,
            "tick_s": self.tick_s,
            "window_s": self.window_s,
            "channel": self.channel.to_json(),
            "threshold": self.threshold,
            "ttl_seconds": self.ttl_seconds,
            "initiator": self.initiator,
            "traffic": self.traffic,
            "emergency_interval_s": self.emergency_interval_s,
            "chain_length": self.chain_length,
            "replay_window_s": self.replay_window_s,
            "tamper_probability": self.tamper_probability,
            "vehicles": [
                {
                    "name": v.name,
                    "vin": v.vin.text,
                    "position": [v.position.x, v.position.y],
                    "velocity": list(v.velocity),
                    "role": v.role,
                }
                for v in self.vehicles
            ],
        }


def _ms_multiple(path: str, seconds: float) -> None:
    if abs(seconds * 1000 - round(seconds * 1000)) > 1e-6:
        raise ScenarioError(path, "must be a whole number of milliseconds")


def _validate(s: Scenario) -> None:
    if isinstance(s.seed, bool) or not isinstance(s.seed, int) or not 0 <= s.seed < 1 << 64:
        raise ScenarioError("seed", "must be an unsigned 64-bit integer")
    for name in ("duration_s", "tick_s", "window_s", "ttl_seconds", "emergency_interval_s",
                 "replay_window_s"):
        v = getattr(s, name)
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v) or v <= 0:
            raise ScenarioError(name, "must be a positive number")
        _ms_multiple(name, v)
    if s.tick_ms < 1:
        raise ScenarioError("tick_s", "must be at least 1 ms")
    if s.n_ticks < 1:
        raise ScenarioError("duration_s", "must cover at least one tick")
    if not isinstance(s.threshold, (int, float)) or not math.isfinite(s.threshold):
        raise ScenarioError("threshold", "must be a finite number")
    if isinstance(s.traffic, bool) or not isinstance(s.traffic, int) or s.traffic < 0:
        raise ScenarioError("traffic", "must be a non-negative integer")
    if not isinstance(s.chain_length, int) or not 1 <= s.chain_length <= MAX_CHAIN_LENGTH:
        raise ScenarioError("chain_length", f"must be in 1..{MAX_CHAIN_LENGTH}")
    if not 0.0 <= s.tamper_probability <= 1.0:
        raise ScenarioError("tamper_probability", "must be in [0, 1]")
    names = set()
    vins = set()
    for i, v in enumerate(s.vehicles):
        if v.role not in (LEGITIMATE, EAVESDROPPER):
            raise ScenarioError(f"vehicles[{i}].role", f"unknown role {v.role!r}")
        if v.name in names:
            raise ScenarioError(f"vehicles[{i}].name", f"duplicate name {v.name!r}")
        if v.vin.text in vins:
            raise ScenarioError(f"vehicles[{i}].vin", "duplicate VIN")
        names.add(v.name)
        vins.add(v.vin.text)
    if len(s.legitimate()) < 2:
        raise ScenarioError("vehicles", "need at least 2 legitimate vehicles")
    if s.initiator != MEC:
        match = [v for v in s.vehicles if v.name == s.initiator]
        if not match:
            raise ScenarioError("initiator", f"no vehicle named {s.initiator!r}")
        if match[0].role != LEGITIMATE:
            raise ScenarioError("initiator", "initiator must be a legitimate vehicle")


def _pair(obj, path: str) -> tuple:
    if not isinstance(obj, (list, tuple)) or len(obj) != 2:
        raise ScenarioError(path, "must be a two-element [x, y] array")
    try:
        x, y = float(obj[0]), float(obj[1])
    except (TypeError, ValueError):
        raise ScenarioError(path, "must contain numbers") from None
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ScenarioError(path, "must be finite")
    return x, y


_TOP_KEYS = {"seed", "duration_s", "tick_s", "window_s", "channel", "threshold", "ttl_seconds",
             "initiator", "traffic", "emergency_interval_s", "chain_length", "replay_window_s",
             "tamper_probability", "vehicles"}


def scenario_from_dict(obj: dict, permissive_vins: bool = False) -> Scenario:
    if not isinstance(obj, dict):
        raise ScenarioError("$", "scenario must be a JSON object")
    unknown = sorted(set(obj) - _TOP_KEYS)
    if unknown:
        raise ScenarioError(unknown[0], "unknown field")
    if "vehicles" not in obj or not isinstance(obj["vehicles"], list):
        raise ScenarioError("vehicles", "required array")
    vehicles = []
    for i, v in enumerate(obj["vehicles"]):
        path = f"vehicles[{i}]"
        if not isinstance(v, dict):
            raise ScenarioError(path, "must be an object")
        try:
            vin = Vin(v["vin"], permissive=permissive_vins)
        except KeyError:
            raise ScenarioError(f"{path}.vin", "required") from None
        except ValidationError as exc:
            raise ScenarioError(f"{path}.vin", str(exc)) from None
        if "position" not in v:
            raise ScenarioError(f"{path}.position", "required")
        pos = _pair(v["position"], f"{path}.position")
        vel = _pair(v.get("velocity", [0.0, 0.0]), f"{path}.velocity")
        vehicles.append(VehicleSpec(
            name=str(v.get("name", f"v{i}")),
            vin=vin,
            position=Position(*pos),
            velocity=vel,
            role=v.get("role", LEGITIMATE),
        ))
    channel_obj = obj.get("channel", {})
    if not isinstance(channel_obj, dict):
        raise ScenarioError("channel", "must be an object")
    try:
        channel = ChannelParams(**channel_obj)
    except TypeError as exc:
        raise ScenarioError("channel", str(exc)) from None
    except ValidationError as exc:
        raise ScenarioError("channel", str(exc)) from None
    kwargs = {k: obj[k] for k in _TOP_KEYS - {"vehicles", "channel"} if k in obj}
    return Scenario(vehicles=tuple(vehicles), channel=channel, **kwargs)


def load_scenario(path, permissive_vins: bool = False) -> Scenario:
    """Parse a scenario file. JSON syntax errors surface as ScenarioError with line/column."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"line {exc.lineno} column {exc.colno}", exc.msg) from None
    return scenario_from_dict(obj, permissive_vins=permissive_vins)


def _demo_vin(i: int) -> Vin:
    return Vin(f"5YJ3E1EA{i:09d}")


def default_scenario(seed: int = 0, n_legitimate: int = 10, eavesdropper: bool = True) -> Scenario:
    """Highway convoy of vehicle pairs (12 m apart, pairs 150 m apart) plus one
    trailing eavesdropper 400 m off the convoy."""
    vehicles = []
    for i in range(n_legitimate):
        pair, slot = divmod(i, 2)
        x = 150.0 * pair + 12.0 * slot
        y = 3.5 * slot
        drift = ((pair * 7) % 5 - 2) * 0.2
        vehicles.append(VehicleSpec(f"v{i}", _demo_vin(i), Position(x, y), (25.0 + drift, 0.0)))
    if eavesdropper:
        vehicles.append(VehicleSpec("eve", _demo_vin(900), Position(300.0, 400.0), (25.0, 0.0),
                                    EAVESDROPPER))
    return Scenario(vehicles=tuple(vehicles), seed=seed)


def eavesdropper_margins(s: Scenario) -> dict:
    """For each (eavesdropper, legitimate host): host mean SNR minus eavesdropper SNR.

    The mean runs over every responder the host hears, eavesdroppers included.
    """
    out = {}
    for host in s.legitimate():
        others = [v for v in s.vehicles if v.name != host.name]
        snrs = {v.name: snr_linear(v.position, host.position, s.channel) for v in others}
        if s.channel.max_range_m is not None:
            snrs = {k: val for k, val in snrs.items()
                    if next(v for v in others if v.name == k).position.distance_to(host.position)
                    <= s.channel.max_range_m}
        if not snrs:
            continue
        mean = math.fsum(snrs.values()) / len(snrs)
        for eve in s.eavesdroppers():
            if eve.name in snrs:
                out[(eve.name, host.name)] = mean - snrs[eve.name]
    return out


def place_eavesdropper_validly(s: Scenario) -> Scenario:
    """Check that every eavesdropper's SNR at every host is below that host's mean.

    Positions are validated, not moved; a violation raises.
    """
    if len(s.legitimate()) < 2:
        raise ValidationError("need at least 2 legitimate vehicles")
    for (eve, host), margin in sorted(eavesdropper_margins(s).items()):
        if not margin > 0:
            raise AssumptionViolationError(
                f"eavesdropper {eve!r} is not below the mean SNR at host {host!r}")
    return s
