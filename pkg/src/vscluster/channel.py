"""Log-distance channel, Shannon capacity and vehicular secrecy capacity (VSC).

All SNR values are linear power ratios unless a name says ``_db``.

VSC for a host A talking to target B over one signaling window is

    VSC = log2(1 + SNR_AB) - log2(1 + mean_i SNR_Ai)

where the mean runs over every channel report the host received in the
window (the target's own reports included, the host's excluded).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .errors import InsufficientObservationsError, ValidationError

DEFAULT_WINDOW_S = 1.0


def _finite(name: str, value) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must be a number, got {value!r}") from None
    if not math.isfinite(v):
        raise ValidationError(f"{name} must be finite, got {value!r}")
    return v


@dataclass(frozen=True)
class Position:
    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", _finite("x", self.x))
        object.__setattr__(self, "y", _finite("y", self.y))

    def distance_to(self, other: "Position") -> float:
        # plain sqrt, not math.hypot: the compiled SNR kernel must agree bit for bit
        dx = other.x - self.x
        dy = other.y - self.y
        return math.sqrt(dx * dx + dy * dy)


@dataclass(frozen=True)
class ChannelParams:
    tx_power_dbm: float = 23.0
    ref_loss_db: float = 47.0
    ref_distance_m: float = 1.0
    path_loss_exponent: float = 2.7
    noise_floor_dbm: float = -96.0
    min_distance_m: float = 1.0
    max_range_m: Optional[float] = None
    rayleigh_fading: bool = False

    def __post_init__(self):
        for name in ("tx_power_dbm", "ref_loss_db", "ref_distance_m",
                     "path_loss_exponent", "noise_floor_dbm", "min_distance_m"):
            object.__setattr__(self, name, _finite(name, getattr(self, name)))
        if self.ref_distance_m <= 0:
            raise ValidationError("ref_distance_m must be > 0")
        if self.min_distance_m <= 0:
            raise ValidationError("min_distance_m must be > 0")
        if self.path_loss_exponent <= 0:
            raise ValidationError("path_loss_exponent must be > 0")
        if self.max_range_m is not None:
            r = _finite("max_range_m", self.max_range_m)
            if r <= 0:
                raise ValidationError("max_range_m must be > 0")
            object.__setattr__(self, "max_range_m", r)

    def to_json(self) -> dict:
        return {
            "tx_power_dbm": self.tx_power_dbm,
            "ref_loss_db": self.ref_loss_db,
            "ref_distance_m": self.ref_distance_m,
            "path_loss_exponent": self.path_loss_exponent,
            "noise_floor_dbm": self.noise_floor_dbm,
            "min_distance_m": self.min_distance_m,
            "max_range_m": self.max_range_m,
            "rayleigh_fading": self.rayleigh_fading,
        }


@dataclass(frozen=True)
class ChannelInfo:
    """One channel report: ``sender`` responded, ``receiver`` measured the SNR."""

    sender: str
    receiver: str
    snr_linear: float
    timestamp: float

    def __post_init__(self):
        snr = _finite("snr_linear", self.snr_linear)
        if snr < 0:
            raise ValidationError("snr_linear must be >= 0")
        if self.sender == self.receiver:
            raise ValidationError("sender and receiver must differ")
        object.__setattr__(self, "snr_linear", snr)


@dataclass(frozen=True)
class VscInputs:
    snr_ab: float
    observed: tuple
    host: Optional[str] = None

    def __post_init__(self):
        snr = _finite("snr_ab", self.snr_ab)
        if snr < 0:
            raise ValidationError("snr_ab must be >= 0")
        object.__setattr__(self, "snr_ab", snr)
        object.__setattr__(self, "observed", tuple(self.observed))
        if self.host is not None and any(o.sender == self.host for o in self.observed):
            raise ValidationError("observed must exclude reports sent by the host")

    @classmethod
    def for_host(cls, host: str, snr_ab: float, reports: Iterable[ChannelInfo]) -> "VscInputs":
        """Build inputs from a raw report stream, dropping the host's own reports."""
        return cls(snr_ab, tuple(r for r in reports if r.sender != host), host)


def path_loss_db(distance_m: float, params: ChannelParams) -> float:
    d = _finite("distance_m", distance_m)
    if d < 0:
        raise ValidationError("distance_m must be >= 0")
    d = max(d, params.min_distance_m)
    return params.ref_loss_db + 10.0 * params.path_loss_exponent * math.log10(d / params.ref_distance_m)


def snr_db_at(distance_m: float, params: ChannelParams) -> float:
    return params.tx_power_dbm - path_loss_db(distance_m, params) - params.noise_floor_dbm


def snr_linear(tx: Position, rx: Position, params: ChannelParams) -> float:
    return math.pow(10.0, snr_db_at(tx.distance_to(rx), params) / 10.0)


def capacity(snr: float) -> float:
    """Shannon capacity in bits/s/Hz."""
    v = _finite("snr_linear", snr)
    if v < 0:
        raise ValidationError("snr_linear must be >= 0")
    return math.log2(1.0 + v)


def average_snr(observed: Sequence) -> tuple:
    """Mean linear SNR over a window and the report count M.

    Accepts ChannelInfo records or bare numbers.
    """
    values = [o.snr_linear if isinstance(o, ChannelInfo) else _finite("snr", o) for o in observed]
    if not values:
        raise InsufficientObservationsError("no channel reports in the window")
    return math.fsum(values) / len(values), len(values)


def vsc(inputs: VscInputs) -> float:
    mean, _ = average_snr(inputs.observed)
    return capacity(inputs.snr_ab) - capacity(mean)


def vsc_from_values(snr_ab: float, observed: Sequence[float]) -> float:
    """VSC straight from numbers, as the CLI takes them."""
    mean, _ = average_snr(observed)
    return capacity(snr_ab) - capacity(mean)
