"""Secure clustering service hosted on an MEC platform (RSU).

The service is the one party that knows VINs: vehicles register out of band,
and every announcement is then checked against the registered VIN. A host
vehicle asks for a cluster and gets back the key-material message.

``MecService.dispatch`` implements the newline-delimited JSON protocol. The
in-process path and the socket server both go through it, so their responses
are byte-identical for equal inputs.
"""

from __future__ import annotations

import collections
import json
import logging
import math
import os
import socket
import socketserver
import threading
from dataclasses import dataclass
from typing import Optional

from . import cluster as cl
from .channel import DEFAULT_WINDOW_S
from .errors import (
    ConflictError,
    DegenerateClusterError,
    HostBelowThresholdError,
    UnknownHostError,
    ValidationError,
    VsclusterError,
)
from .hashchain import ChainDisclosure, Vin, as_vin, verify_disclosure
from .rng import Xoshiro256

log = logging.getLogger(__name__)

DEFAULT_PORT = 47001
DEFAULT_BIND = "127.0.0.1"
PSEUDO_ID_SIZE = 8

STATUS_OK = "ok"
STATUS_DEGENERATE = "degenerate"
STATUS_HOST_BELOW = "host_below_threshold"


class VinRegistry:
    def __init__(self):
        self._by_id: dict = {}
        self._by_vin: dict = {}

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, pseudo_id) -> bool:
        return pseudo_id in self._by_id

    def get(self, pseudo_id) -> Optional[Vin]:
        return self._by_id.get(pseudo_id)

    def has_vin(self, vin: Vin) -> bool:
        return vin.text in self._by_vin

    def add(self, pseudo_id: str, vin: Vin) -> None:
        if vin.text in self._by_vin:
            raise ConflictError("VIN already registered")
        if pseudo_id in self._by_id:
            raise ConflictError("pseudo-id collision")
        self._by_id[pseudo_id] = vin
        self._by_vin[vin.text] = pseudo_id

    def ids(self) -> list:
        return sorted(self._by_id)


@dataclass(frozen=True)
class ClusterRequest:
    host_id: str
    threshold: float
    ttl_seconds: float
    window_seconds: float = DEFAULT_WINDOW_S

    def __post_init__(self):
        if not (math.isfinite(self.threshold)):
            raise ValidationError("threshold must be finite")
        if not self.ttl_seconds > 0:
            raise ValidationError("ttl_seconds must be > 0")
        if not self.window_seconds > 0:
            raise ValidationError("window_seconds must be > 0")


@dataclass(frozen=True)
class ClusterResponse:
    status: str
    key_material: Optional[dict] = None
    cluster: Optional[cl.SecureCluster] = None

    def __post_init__(self):
        if (self.key_material is not None) != (self.status == STATUS_OK):
            raise ValidationError("key material is present iff status is ok")

    def to_json(self) -> dict:
        return {"status": self.status, "body": self.key_material}


@dataclass(frozen=True)
class IngestResult:
    accepted: bool
    reason: Optional[str] = None  # unknown_sender | bad_disclosure | stale


class MecService:
    """Registry, announcement buffer and cluster formation behind one lock.

    Cluster requests see a consistent snapshot: ingestion never interleaves
    with a request in progress.
    """

    def __init__(self, seed: int = 0, window_seconds: float = DEFAULT_WINDOW_S):
        if not window_seconds > 0:
            raise ValidationError("window_seconds must be > 0")
        self.rng = Xoshiro256(seed)
        self.window_seconds = window_seconds
        self.registry = VinRegistry()
        self._retention = max(1, math.ceil(window_seconds * 10))
        self._buffers: dict = {}
        self._verified: dict = {}
        self._lock = threading.RLock()

    def register_vehicle(self, vin, pseudo_id: Optional[str] = None) -> str:
        vin = as_vin(vin)
        with self._lock:
            if self.registry.has_vin(vin):
                raise ConflictError("VIN already registered")
            if pseudo_id is None:
                pseudo_id = self.rng.random_bytes(PSEUDO_ID_SIZE).hex()
                while pseudo_id in self.registry:
                    pseudo_id = self.rng.random_bytes(PSEUDO_ID_SIZE).hex()
            self.registry.add(pseudo_id, vin)
            return pseudo_id

    def _prune(self, now_ms: int) -> None:
        horizon = now_ms - cl.to_ms(self.window_seconds)
        for buf in self._buffers.values():
            while buf and cl.to_ms(buf[0].timestamp) < horizon:
                buf.popleft()

    def ingest_announcement(self, a: cl.Announcement, now: float) -> IngestResult:
        with self._lock:
            now_ms = cl.to_ms(now)
            self._prune(now_ms)
            vin = self.registry.get(a.sender)
            if vin is None:
                return IngestResult(False, "unknown_sender")
            ts = cl.to_ms(a.timestamp)
            if ts > now_ms or ts < now_ms - cl.to_ms(self.window_seconds):
                return IngestResult(False, "stale")
            if not self._verify(a.sender, a.disclosure):
                return IngestResult(False, "bad_disclosure")
            buf = self._buffers.setdefault(a.sender, collections.deque(maxlen=self._retention))
            buf.append(a)
            return IngestResult(True)

    def _window(self, now_ms: int, window_seconds: float) -> list:
        lo = now_ms - cl.to_ms(window_seconds)
        out = []
        for sender in sorted(self._buffers):
            out.extend(a for a in self._buffers[sender] if lo <= cl.to_ms(a.timestamp) <= now_ms)
        return out

    def handle_cluster_request(self, req: ClusterRequest, now: float) -> ClusterResponse:
        with self._lock:
            if req.host_id not in self.registry:
                raise UnknownHostError(f"host {req.host_id!r} is not registered")
            now_ms = cl.to_ms(now)
            recent = cl.latest_per_sender(self._window(now_ms, req.window_seconds))
            host = recent.pop(req.host_id, None)
            if host is None or host.vsc_value < req.threshold:
                return ClusterResponse(STATUS_HOST_BELOW)
            verifier = self._verify
            try:
                formed = cl.form_cluster(host, recent.values(), verifier, now,
                                         req.ttl_seconds, req.threshold, self.rng)
            except DegenerateClusterError:
                return ClusterResponse(STATUS_DEGENERATE)
            except HostBelowThresholdError:
                return ClusterResponse(STATUS_HOST_BELOW)
            return ClusterResponse(STATUS_OK, cl.key_material(formed), formed)

    def _verify(self, sender: str, disclosure: ChainDisclosure) -> bool:
        # vehicles repeat one disclosure for a whole epoch; check each once
        vin = self.registry.get(sender)
        if vin is None:
            return False
        key = (sender, bytes(disclosure.value), disclosure.m)
        ok = self._verified.get(key)
        if ok is None:
            if len(self._verified) > 65536:
                self._verified.clear()
            ok = self._verified[key] = verify_disclosure(disclosure, vin)
        return ok

    def snapshot(self) -> dict:
        """State summary without VINs, for shutdown flushes."""
        with self._lock:
            return {
                "registered": self.registry.ids(),
                "buffered": {k: len(v) for k, v in sorted(self._buffers.items())},
            }

    # wire protocol

    def dispatch(self, request: dict) -> dict:
        try:
            return self._dispatch(request)
        except UnknownHostError as exc:
            return _error("unknown_host", str(exc))
        except ConflictError as exc:
            return _error("conflict", str(exc))
        except (ValidationError, KeyError, TypeError, ValueError) as exc:
            return _error("invalid", str(exc))
        except VsclusterError as exc:
            return _error("error", str(exc))

    def _dispatch(self, req: dict) -> dict:
        if not isinstance(req, dict):
            raise ValidationError("request must be a JSON object")
        op = req.get("op")
        if op == "register":
            return {"status": STATUS_OK, "body": {"id": self.register_vehicle(req["vin"])}}
        if op == "announce":
            ts_ms = _int(req, "ts_ms")
            now_ms = _int(req, "now_ms") if "now_ms" in req else ts_ms
            a = cl.Announcement(
                sender=str(req["sender"]),
                disclosure=ChainDisclosure.from_json(req),
                vsc_value=float(req["vsc"]),
                timestamp=ts_ms / 1000.0,
            )
            res = self.ingest_announcement(a, now_ms / 1000.0)
            if res.accepted:
                return {"status": "accepted", "body": None}
            return {"status": "rejected", "body": {"reason": res.reason}}
        if op == "cluster":
            creq = ClusterRequest(
                host_id=str(req["host_id"]),
                threshold=float(req["threshold"]),
                ttl_seconds=_int(req, "ttl_ms") / 1000.0,
                window_seconds=_int(req, "window_ms") / 1000.0 if "window_ms" in req else DEFAULT_WINDOW_S,
            )
            return self.handle_cluster_request(creq, _int(req, "now_ms") / 1000.0).to_json()
        raise ValidationError(f"unknown op {op!r}")

    def handle_line(self, line: bytes) -> bytes:
        """One request line in, one response line out (newline included)."""
        try:
            request = json.loads(line)
        except (ValueError, UnicodeDecodeError) as exc:
            response = _error("invalid", f"bad JSON: {exc}")
        else:
            response = self.dispatch(request)
        return encode(response)


def _int(req: dict, key: str) -> int:
    v = req[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValidationError(f"{key} must be an integer")
    return v


def _error(reason: str, message: str) -> dict:
    return {"status": "error", "body": {"reason": reason, "message": message}}


def encode(obj: dict) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode() + b"\n"


def announce_request(a: cl.Announcement, now: Optional[float] = None) -> dict:
    req = {"op": "announce", "sender": a.sender, "vsc": a.vsc_value,
           "ts_ms": cl.to_ms(a.timestamp), **a.disclosure.to_json()}
    if now is not None:
        req["now_ms"] = cl.to_ms(now)
    return req


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        for line in self.rfile:
            if not line.strip():
                continue
            self.wfile.write(self.server.service.handle_line(line))
            self.wfile.flush()


class MecServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = False

    def __init__(self, service: MecService, bind: str = DEFAULT_BIND, port: int = DEFAULT_PORT):
        self.service = service
        super().__init__((bind, port), _Handler)

    @property
    def port(self) -> int:
        return self.server_address[1]


def bind_from_env() -> tuple:
    return (os.environ.get("VSCLUSTER_BIND", DEFAULT_BIND),
            int(os.environ.get("VSCLUSTER_PORT", DEFAULT_PORT)))


class MecClient:
    """Blocking line-protocol client."""

    def __init__(self, host: str = DEFAULT_BIND, port: int = DEFAULT_PORT, timeout: float = 5.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self._file = self.sock.makefile("rb")

    def call_raw(self, request: dict) -> bytes:
        self.sock.sendall(encode(request))
        line = self._file.readline()
        if not line:
            raise ConnectionError("server closed the connection")
        return line

    def call(self, request: dict) -> dict:
        return json.loads(self.call_raw(request))

    def close(self):
        self._file.close()
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
