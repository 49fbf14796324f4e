"""Vehicle hash chains seeded by the VIN.

A chain of length N holds ``values[m] = H^m(VIN bytes)`` for m = 1..N. The raw
VIN is never part of the value sequence. A vehicle publishes the pair
``(values[m], m)``; anyone who knows the VIN can recompute it, and anyone who
saw an earlier disclosure with a larger m can link the two.
"""

from __future__ import annotations

import hmac
import re
from dataclasses import dataclass, field

from . import kernels
from .errors import ChainRangeError, OrderingError, ValidationError

ALG = "sha-256"
DIGEST_SIZE = 32
DEFAULT_CHAIN_LENGTH = 1000
MAX_CHAIN_LENGTH = 1_000_000

_STRICT_VIN = re.compile(r"[A-HJ-NPR-Z0-9]{17}")
_PERMISSIVE_VIN = re.compile(r"[A-Z0-9]{11,17}")


class Digest(bytes):
    """A 32-byte hash output."""

    def __new__(cls, raw: bytes) -> "Digest":
        if len(raw) != DIGEST_SIZE:
            raise ValidationError(f"digest must be {DIGEST_SIZE} bytes, got {len(raw)}")
        return super().__new__(cls, raw)

    @classmethod
    def fromhex(cls, text: str) -> "Digest":
        if not isinstance(text, str) or len(text) != 2 * DIGEST_SIZE:
            raise ValidationError("digest hex must be 64 characters")
        try:
            return cls(bytes.fromhex(text))
        except ValueError as exc:
            raise ValidationError(f"bad digest hex: {exc}") from None

    def __repr__(self) -> str:
        return f"Digest({self.hex()[:16]}...)"


@dataclass(frozen=True)
class Vin:
    """Vehicle identification number.

    Strict mode enforces the 17-character convention (no I, O, Q).
    ``permissive=True`` accepts 11-17 uppercase alphanumerics for test corpora.
    """

    text: str
    permissive: bool = field(default=False, compare=False, repr=False)

    def __post_init__(self):
        pattern = _PERMISSIVE_VIN if self.permissive else _STRICT_VIN
        if not isinstance(self.text, str) or not pattern.fullmatch(self.text):
            raise ValidationError(f"invalid VIN {self.text!r}")

    def to_bytes(self) -> bytes:
        return self.text.encode("ascii")

    def __str__(self) -> str:
        return self.text


def as_vin(vin) -> Vin:
    return vin if isinstance(vin, Vin) else Vin(vin)


@dataclass(frozen=True)
class ChainDisclosure:
    value: Digest
    m: int

    def __post_init__(self):
        if not isinstance(self.value, Digest):
            object.__setattr__(self, "value", Digest(self.value))
        if isinstance(self.m, bool) or not isinstance(self.m, int) or self.m < 1:
            raise ValidationError(f"m must be a positive integer, got {self.m!r}")

    def to_json(self) -> dict:
        return {"value": self.value.hex(), "m": self.m, "alg": ALG}

    @classmethod
    def from_json(cls, obj: dict) -> "ChainDisclosure":
        alg = obj.get("alg", ALG)
        if alg != ALG:
            raise ValidationError(f"unsupported hash algorithm {alg!r}")
        return cls(Digest.fromhex(obj["value"]), obj["m"])


@dataclass(frozen=True)
class HashChain:
    seed_vin: Vin
    values: tuple

    @property
    def length(self) -> int:
        return len(self.values)

    def value(self, m: int) -> Digest:
        """1-based access: ``value(1)`` is H(VIN)."""
        if not 1 <= m <= len(self.values):
            raise ChainRangeError(f"m={m} outside 1..{len(self.values)}")
        return self.values[m - 1]


def generate_chain(vin, n: int = DEFAULT_CHAIN_LENGTH) -> HashChain:
    vin = as_vin(vin)
    if isinstance(n, bool) or not isinstance(n, int) or not 1 <= n <= MAX_CHAIN_LENGTH:
        raise ValidationError(f"chain length must be in 1..{MAX_CHAIN_LENGTH}, got {n!r}")
    raw = kernels.sha256_chain(vin.to_bytes(), n)
    return HashChain(vin, tuple(Digest(v) for v in raw))


def disclose(chain: HashChain, m: int) -> ChainDisclosure:
    return ChainDisclosure(chain.value(m), m)


def verify_disclosure(d: ChainDisclosure, vin) -> bool:
    """True iff H applied exactly ``d.m`` times to the VIN bytes equals ``d.value``."""
    vin = as_vin(vin)
    if d.m > MAX_CHAIN_LENGTH:
        return False
    expected = kernels.sha256_iterate(vin.to_bytes(), d.m)
    return hmac.compare_digest(expected, d.value)


def verify_link(earlier: ChainDisclosure, later: ChainDisclosure) -> bool:
    """Check that ``later`` lies ``later.m - earlier.m`` hashes after ``earlier``."""
    if earlier.m >= later.m:
        raise OrderingError(f"earlier.m={earlier.m} must be < later.m={later.m}")
    steps = later.m - earlier.m
    if steps > MAX_CHAIN_LENGTH:
        return False
    return hmac.compare_digest(kernels.sha256_iterate(bytes(earlier.value), steps), later.value)
