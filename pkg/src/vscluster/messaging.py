"""Broadcast frames on two multiplexed levels.

Core frames carry emergency data in the clear so every vehicle can read them.
Enhancement frames carry driving data under AES-256-GCM with the cluster
group key; the sender's tag, the cluster id and the timestamp are bound in as
associated data.

The ``sender_value`` field of a frame holds ``frame_tag(chain value)``, never
the raw chain value: receivers match it against the tags of the stored
member values.
"""

from __future__ import annotations

import base64
import binascii
import enum
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .cluster import SecureCluster, contains, frame_tag, to_ms
from .errors import ClusterExpiredError, NotAMemberError, ValidationError
from .hashchain import Digest

AEAD_ALG = "aes-256-gcm"
NONCE_SIZE = 12
TAG_SIZE = 16
DEFAULT_REPLAY_WINDOW_S = 5.0


class Level(enum.Enum):
    CORE = "core"
    ENHANCEMENT = "enh"


@dataclass(frozen=True)
class BroadcastFrame:
    level: Level
    sender_value: Digest
    timestamp: float
    plaintext: Optional[bytes] = None
    cluster_id: Optional[bytes] = None
    nonce: Optional[bytes] = None
    ciphertext: Optional[bytes] = None
    tag: Optional[bytes] = None
    alg: Optional[str] = None

    def __post_init__(self):
        if self.level is Level.CORE:
            if any(v is not None for v in (self.cluster_id, self.nonce, self.ciphertext, self.tag, self.alg)):
                raise ValidationError("core frames carry no cryptographic fields")
            if self.plaintext is None:
                raise ValidationError("core frames need a plaintext payload")
        elif self.plaintext is not None:
            raise ValidationError("enhancement frames carry no plaintext")

    @property
    def ts_ms(self) -> int:
        return to_ms(self.timestamp)

    def to_json(self) -> dict:
        def hx(b):
            return None if b is None else b.hex()

        def b64(b):
            return None if b is None else base64.b64encode(b).decode("ascii")

        return {
            "level": self.level.value,
            "sender_value": self.sender_value.hex(),
            "ts_ms": self.ts_ms,
            "cluster_id": hx(self.cluster_id),
            "nonce": hx(self.nonce),
            "ct": b64(self.ciphertext),
            "tag": hx(self.tag),
            "pt": b64(self.plaintext),
            "alg": self.alg,
        }

    def to_wire(self) -> bytes:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def from_json(cls, obj: dict) -> "BroadcastFrame":
        try:
            level = Level(obj["level"])

            def unhex(key):
                v = obj.get(key)
                return None if v is None else bytes.fromhex(v)

            def unb64(key):
                v = obj.get(key)
                return None if v is None else base64.b64decode(v, validate=True)

            ts = obj["ts_ms"]
            if isinstance(ts, bool) or not isinstance(ts, int):
                raise ValueError("ts_ms must be an integer")
            return cls(
                level=level,
                sender_value=Digest.fromhex(obj["sender_value"]),
                timestamp=ts / 1000.0,
                plaintext=unb64("pt"),
                cluster_id=unhex("cluster_id"),
                nonce=unhex("nonce"),
                ciphertext=unb64("ct"),
                tag=unhex("tag"),
                alg=obj.get("alg"),
            )
        except (KeyError, TypeError, ValueError, AttributeError, binascii.Error) as exc:
            raise ValidationError(f"malformed frame: {exc}") from None

    @classmethod
    def from_wire(cls, data: bytes) -> "BroadcastFrame":
        try:
            obj = json.loads(data)
        except (ValueError, UnicodeDecodeError) as exc:
            raise ValidationError(f"frame is not JSON: {exc}") from None
        if not isinstance(obj, dict):
            raise ValidationError("frame must be a JSON object")
        return cls.from_json(obj)


def associated_data(cluster_id: bytes, sender_value: bytes, ts_ms: int) -> bytes:
    return bytes(cluster_id) + bytes(sender_value) + ts_ms.to_bytes(8, "big", signed=True)


def make_nonce(sender_index: int, counter: int) -> bytes:
    return sender_index.to_bytes(4, "big") + counter.to_bytes(8, "big")


def core_frame(sender_value: bytes, plaintext: bytes, now: float) -> BroadcastFrame:
    return BroadcastFrame(Level.CORE, frame_tag(sender_value), to_ms(now) / 1000.0,
                          plaintext=bytes(plaintext))


def encrypt_broadcast(cluster: SecureCluster, sender_value: bytes, plaintext: bytes,
                      now: float, nonce_counter: int) -> BroadcastFrame:
    if not contains(cluster, sender_value):
        raise NotAMemberError("sender chain value is not in the cluster")
    t = to_ms(now)
    if not to_ms(cluster.created_at) <= t < to_ms(cluster.expires_at):
        raise ClusterExpiredError("cluster is not active")
    if not 0 <= nonce_counter < 1 << 64:
        raise ValidationError("nonce counter out of range")
    nonce = make_nonce(cluster.sender_index(sender_value), nonce_counter)
    tag = frame_tag(sender_value)
    sealed = AESGCM(cluster.group_key).encrypt(
        nonce, bytes(plaintext), associated_data(cluster.cluster_id, tag, t))
    return BroadcastFrame(
        Level.ENHANCEMENT, tag, t / 1000.0,
        cluster_id=cluster.cluster_id, nonce=nonce,
        ciphertext=sealed[:-TAG_SIZE], tag=sealed[-TAG_SIZE:], alg=AEAD_ALG,
    )


@dataclass(frozen=True)
class Reception:
    status: str  # accepted | ignored | expired | auth_failure
    plaintext: Optional[bytes] = None

    @property
    def accepted(self) -> bool:
        return self.status == "accepted"


ACCEPTED = "accepted"
IGNORED = "ignored"
EXPIRED = "expired"
AUTH_FAILURE = "auth_failure"


def open_frame(frame: BroadcastFrame, key: bytes) -> Optional[bytes]:
    """Try one key; None on any authentication or format failure."""
    if (frame.nonce is None or frame.ciphertext is None or frame.tag is None
            or frame.cluster_id is None or len(frame.nonce) != NONCE_SIZE
            or len(frame.tag) != TAG_SIZE or frame.alg != AEAD_ALG):
        return None
    try:
        return AESGCM(key).decrypt(
            frame.nonce, frame.ciphertext + frame.tag,
            associated_data(frame.cluster_id, frame.sender_value, frame.ts_ms))
    except (InvalidTag, ValueError):
        return None


def receive_broadcast(frame: BroadcastFrame, cluster: Optional[SecureCluster], now: float,
                      replay_window_s: float = DEFAULT_REPLAY_WINDOW_S) -> Reception:
    """Total over all frames: never raises, always returns one of four statuses."""
    if frame.level is Level.CORE:
        return Reception(ACCEPTED, frame.plaintext)
    if cluster is None or not cluster.has_tag(frame.sender_value):
        return Reception(IGNORED)
    t = to_ms(now)
    if frame.cluster_id != cluster.cluster_id:
        return Reception(IGNORED)
    if t >= to_ms(cluster.expires_at):
        return Reception(EXPIRED)
    if t - frame.ts_ms > to_ms(replay_window_s):
        return Reception(IGNORED)
    plaintext = open_frame(frame, cluster.group_key)
    if plaintext is None:
        return Reception(AUTH_FAILURE)
    return Reception(ACCEPTED, plaintext)


def receive_wire(data: bytes, cluster: Optional[SecureCluster], now: float,
                 replay_window_s: float = DEFAULT_REPLAY_WINDOW_S) -> Reception:
    """Byte-level entry point: unparseable input is ignored."""
    try:
        frame = BroadcastFrame.from_wire(data)
    except ValidationError:
        return Reception(IGNORED)
    return receive_broadcast(frame, cluster, now, replay_window_s)


@dataclass
class SenderState:
    """Per-sender nonce counter. Owned by exactly one sending vehicle."""

    counter: int = 0
    cluster_id: Optional[bytes] = None

    def seal(self, cluster: SecureCluster, sender_value: bytes, plaintext: bytes,
             now: float) -> BroadcastFrame:
        if cluster.cluster_id != self.cluster_id:
            self.cluster_id = cluster.cluster_id
            self.counter = 0
        frame = encrypt_broadcast(cluster, sender_value, plaintext, now, self.counter)
        self.counter += 1
        return frame


@dataclass(frozen=True)
class MuxedSignal:
    frames: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if sum(1 for f in self.frames if f.level is Level.CORE) > 1:
            raise ValidationError("a signal carries at most one core frame")


def mux(core: Optional[BroadcastFrame], enhancements: Sequence[BroadcastFrame]) -> MuxedSignal:
    if core is not None and core.level is not Level.CORE:
        raise ValidationError("core slot needs a core frame")
    if any(f.level is Level.CORE for f in enhancements):
        raise ValidationError("a signal carries at most one core frame")
    frames = ((core,) if core is not None else ()) + tuple(enhancements)
    return MuxedSignal(frames)


def demux(signal: MuxedSignal) -> tuple:
    core = next((f for f in signal.frames if f.level is Level.CORE), None)
    return core, [f for f in signal.frames if f.level is Level.ENHANCEMENT]
