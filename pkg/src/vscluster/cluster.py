"""Secure cluster admission, group-key derivation, distribution and lifetime.

A secure cluster is the set of vehicles whose VSC meets the threshold and
whose chain disclosure checks out. Members never receive the group key on
the air: the key-material message carries the member disclosures, cluster id
and expiry, and every member re-derives the key locally.
"""

from __future__ import annotations

import functools
import hashlib
import math
from dataclasses import dataclass
from types import MappingProxyType
from typing import Callable, Iterable, Mapping, Optional

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from . import hashchain
from .errors import (
    ClusterExpiredError,
    DegenerateClusterError,
    HostBelowThresholdError,
    ValidationError,
)
from .hashchain import ChainDisclosure, Digest

GROUP_KEY_INFO = b"vscluster group key v1"
FRAME_TAG_DOMAIN = b"vscluster frame tag v1"
CLUSTER_ID_SIZE = 16
KEY_SIZE = 32

Verifier = Callable[[str, ChainDisclosure], bool]


def frame_tag(chain_value: bytes) -> Digest:
    """One-way public form of a chain value, carried in broadcast frames.

    Frames must not expose raw disclosure values: those are the group-key
    input, and every member transmits.
    """
    return Digest(hashlib.sha256(FRAME_TAG_DOMAIN + bytes(chain_value)).digest())


def to_ms(seconds: float) -> int:
    """Simulation-clock milliseconds; every time comparison goes through here."""
    return int(round(float(seconds) * 1000.0))


@dataclass(frozen=True)
class Announcement:
    sender: str
    disclosure: ChainDisclosure
    vsc_value: float
    timestamp: float

    def __post_init__(self):
        if not math.isfinite(self.vsc_value):
            raise ValidationError("vsc_value must be finite")


@dataclass(frozen=True)
class SecureCluster:
    cluster_id: bytes
    threshold: float
    members: Mapping[str, ChainDisclosure]
    group_key: bytes
    created_at: float
    expires_at: float

    def __post_init__(self):
        if len(self.cluster_id) != CLUSTER_ID_SIZE:
            raise ValidationError("cluster_id must be 16 bytes")
        if to_ms(self.expires_at) <= to_ms(self.created_at):
            raise ValidationError("expires_at must be after created_at")
        if not isinstance(self.members, MappingProxyType):
            object.__setattr__(self, "members", MappingProxyType(dict(self.members)))

    @property
    def size(self) -> int:
        return len(self.members)

    @functools.cached_property
    def _sorted_values(self) -> tuple:
        return tuple(sorted(d.value for d in self.members.values()))

    @functools.cached_property
    def _tags(self) -> dict:
        return {frame_tag(v): i for i, v in enumerate(self._sorted_values)}

    def sorted_values(self) -> list:
        return list(self._sorted_values)

    def sender_index(self, value: bytes) -> int:
        return self._sorted_values.index(value)

    def has_tag(self, tag: bytes) -> bool:
        return tag in self._tags


def make_announcement(sender: str, disclosure: ChainDisclosure, vsc_value: float,
                      threshold: float, timestamp: float) -> Optional[Announcement]:
    """Announce only when the VSC reaches the reference value (inclusive)."""
    if vsc_value >= threshold:
        return Announcement(sender, disclosure, vsc_value, timestamp)
    return None


def latest_per_sender(announcements: Iterable[Announcement]) -> dict:
    """Latest timestamp wins; on equal timestamps the first one seen stays."""
    chosen = {}
    for a in announcements:
        prev = chosen.get(a.sender)
        if prev is None or a.timestamp > prev.timestamp:
            chosen[a.sender] = a
    return chosen


def derive_group_key(member_disclosures: Iterable[ChainDisclosure], cluster_id: bytes,
                     expires_at: float) -> bytes:
    values = sorted(d.value.hex() for d in member_disclosures)
    if not values:
        raise ValidationError("cannot derive a key for an empty member set")
    ikm = b"".join(bytes.fromhex(v) for v in values)
    ikm += bytes(cluster_id) + to_ms(expires_at).to_bytes(8, "big", signed=False)
    return HKDF(algorithm=hashes.SHA256(), length=KEY_SIZE, salt=None,
                info=GROUP_KEY_INFO).derive(ikm)


def form_cluster(initiator: Announcement, announcements: Iterable[Announcement],
                 verifier: Verifier, now: float, ttl_seconds: float, threshold: float,
                 rng) -> SecureCluster:
    """Admit every announcer with VSC >= threshold whose disclosure verifies.

    The initiator must clear the threshold and the verifier too. ``rng``
    supplies the 16-byte cluster id.
    """
    if not ttl_seconds > 0:
        raise ValidationError("ttl_seconds must be > 0")
    if initiator.vsc_value < threshold:
        raise HostBelowThresholdError(
            f"initiator VSC {initiator.vsc_value:.6g} below threshold {threshold:.6g}")
    if not verifier(initiator.sender, initiator.disclosure):
        raise ValidationError("initiator disclosure failed verification")

    members = {initiator.sender: initiator.disclosure}
    for sender, a in sorted(latest_per_sender(announcements).items()):
        if sender == initiator.sender or a.vsc_value < threshold:
            continue
        if verifier(sender, a.disclosure):
            members[sender] = a.disclosure
    if len(members) < 2:
        raise DegenerateClusterError("no admissible member besides the initiator")

    cluster_id = rng.random_bytes(CLUSTER_ID_SIZE)
    created_at = to_ms(now) / 1000.0
    expires_at = to_ms(now + ttl_seconds) / 1000.0
    key = derive_group_key(members.values(), cluster_id, expires_at)
    return SecureCluster(cluster_id, float(threshold), members, key, created_at, expires_at)


def is_active(cluster: SecureCluster, now: float) -> bool:
    """Lifetime is the half-open interval [created_at, expires_at)."""
    t = to_ms(now)
    return to_ms(cluster.created_at) <= t < to_ms(cluster.expires_at)


def contains(cluster: Optional[SecureCluster], chain_value: bytes) -> bool:
    if cluster is None:
        return False
    return any(d.value == chain_value for d in cluster.members.values())


def key_material(cluster: SecureCluster) -> dict:
    """The distributable view of a cluster. Carries no key."""
    return {
        "cluster_id": cluster.cluster_id.hex(),
        "threshold": cluster.threshold,
        "expires_at_ms": to_ms(cluster.expires_at),
        "members": [
            {"id": mid, "value": d.value.hex(), "m": d.m}
            for mid, d in sorted(cluster.members.items())
        ],
    }


@dataclass(frozen=True)
class KeyMaterialMessage:
    addressee: str
    payload: dict


def distribute(cluster: SecureCluster, now: float) -> list:
    if to_ms(now) >= to_ms(cluster.expires_at):
        raise ClusterExpiredError("cluster has expired")
    payload = key_material(cluster)
    return [KeyMaterialMessage(mid, payload) for mid in sorted(cluster.members)]


def cluster_from_key_material(payload: dict, received_at: float) -> SecureCluster:
    """Member-side reconstruction; the group key is re-derived, never received.

    The creation time is unknown to members, so the receive time stands in.
    """
    try:
        cluster_id = bytes.fromhex(payload["cluster_id"])
        expires_at = int(payload["expires_at_ms"]) / 1000.0
        members = {
            m["id"]: ChainDisclosure(Digest.fromhex(m["value"]), int(m["m"]))
            for m in payload["members"]
        }
        threshold = float(payload["threshold"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed key material: {exc}") from None
    key = derive_group_key(members.values(), cluster_id, expires_at)
    created = min(to_ms(received_at), to_ms(expires_at) - 1) / 1000.0
    return SecureCluster(cluster_id, threshold, members, key, created, expires_at)


def registry_verifier(vins: Mapping) -> Verifier:
    """Verifier for a party that knows the VINs (the MEC registry)."""

    def verify(sender: str, disclosure: ChainDisclosure) -> bool:
        vin = vins.get(sender)
        return vin is not None and hashchain.verify_disclosure(disclosure, vin)

    return verify


class LinkVerifier:
    """Verifier for peers without VIN knowledge.

    The first disclosure seen from a sender is pinned (trust on first use).
    Later disclosures must hash-link to the pinned one; a link toward a
    smaller m re-pins, so the pin tracks the freshest value.
    """

    def __init__(self):
        self.pinned: dict = {}

    def __call__(self, sender: str, disclosure: ChainDisclosure) -> bool:
        pin = self.pinned.get(sender)
        if pin is None:
            self.pinned[sender] = disclosure
            return True
        if pin.m == disclosure.m:
            return pin.value == disclosure.value
        if disclosure.m < pin.m:
            ok = hashchain.verify_link(disclosure, pin)
            if ok:
                self.pinned[sender] = disclosure
            return ok
        return hashchain.verify_link(pin, disclosure)
