"""Deterministic discrete-event world for hash-chain secure clusters.

Each tick runs six phases in a fixed order:

1. mobility (constant velocity)
2. channel-report exchange between every pair in range
3. VSC per legitimate vehicle, announcements when above threshold
4. cluster formation when no cluster exists (vehicle- or MEC-initiated)
5. data traffic: last tick's signals are delivered, then new ones emitted
6. expiry checks

Events inside a tick are ordered by (phase, source pseudo-id). Randomness
comes from named xoshiro256** sub-streams of the scenario seed.

Announcements and key-material messages travel over the secrecy-qualified
links and are not observable by eavesdroppers; broadcast frames are.
"""

from __future__ import annotations

import collections
import csv
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Optional

from . import cluster as cl
from . import kernels
from .channel import ChannelInfo, VscInputs, vsc
from .errors import DegenerateClusterError, HostBelowThresholdError, ValidationError
from .hashchain import ChainDisclosure, generate_chain
from .mec import STATUS_OK, ClusterRequest, MecService
from .messaging import (
    ACCEPTED,
    AUTH_FAILURE,
    EXPIRED,
    IGNORED,
    BroadcastFrame,
    Level,
    SenderState,
    core_frame,
    mux,
    open_frame,
    receive_broadcast,
)
from .rng import Xoshiro256
from .scenario import EAVESDROPPER, LEGITIMATE, MEC, Scenario

log = logging.getLogger(__name__)

STREAM_MEC = 1
STREAM_PROTOCOL = 2
STREAM_FADING = 3
STREAM_EAVESDROPPER = 4
STREAM_TAMPER = 5
STREAM_IDS = 6

PHASE_MOBILITY, PHASE_CHANNEL, PHASE_VSC, PHASE_FORMATION, PHASE_DATA, PHASE_EXPIRY = range(1, 7)


@dataclass
class Vehicle:
    name: str
    role: str
    pseudo_id: str
    x: float
    y: float
    vx: float
    vy: float
    chain: object = None
    reports: collections.deque = field(default_factory=collections.deque)
    latest: dict = field(default_factory=dict)
    vsc: Optional[float] = None
    target: Optional[str] = None
    announcement: Optional[cl.Announcement] = None
    keyring: dict = field(default_factory=dict)
    view: Optional[cl.SecureCluster] = None
    own_value: Optional[bytes] = None
    sender: SenderState = field(default_factory=SenderState)
    inbox: list = field(default_factory=list)
    verifier: cl.LinkVerifier = field(default_factory=cl.LinkVerifier)

    @property
    def legitimate(self) -> bool:
        return self.role == LEGITIMATE


@dataclass
class Metrics:
    seed: int
    ticks: int
    clusters_formed: int = 0
    cluster_sizes: list = field(default_factory=list)
    latencies_ms: list = field(default_factory=list)
    formation_attempts: int = 0
    formation_failures: dict = field(default_factory=dict)
    announcements: int = 0
    announcements_rejected: int = 0
    key_agreement_failures: int = 0
    frames_emitted: int = 0
    frames_sent: int = 0
    frames_accepted: int = 0
    frames_ignored: int = 0
    frames_auth_failed: int = 0
    frames_expired: int = 0
    frames_in_flight: int = 0
    frames_tampered: int = 0
    core_frames_sent: int = 0
    core_frames_read_by_eavesdroppers: int = 0
    core_frames_to_eavesdroppers: int = 0
    core_frames_in_flight: int = 0
    eavesdrop_attempts: int = 0
    eavesdrop_success: int = 0
    vsc_trace: dict = field(default_factory=dict)
    cluster_size_trace: list = field(default_factory=list)

    @property
    def mean_cluster_size(self) -> Optional[float]:
        return sum(self.cluster_sizes) / len(self.cluster_sizes) if self.cluster_sizes else None

    @property
    def formation_latency_s(self) -> Optional[float]:
        if not self.latencies_ms:
            return None
        return sum(self.latencies_ms) / len(self.latencies_ms) / 1000.0

    def conserved(self) -> bool:
        return self.frames_sent == (self.frames_accepted + self.frames_ignored + self.frames_auth_failed
                                    + self.frames_expired + self.frames_in_flight)

    def scalars(self) -> dict:
        return {
            "seed": self.seed,
            "ticks": self.ticks,
            "clusters_formed": self.clusters_formed,
            "mean_cluster_size": self.mean_cluster_size,
            "formation_latency_s": self.formation_latency_s,
            "formation_attempts": self.formation_attempts,
            "announcements": self.announcements,
            "announcements_rejected": self.announcements_rejected,
            "key_agreement_failures": self.key_agreement_failures,
            "frames_emitted": self.frames_emitted,
            "frames_sent": self.frames_sent,
            "frames_accepted": self.frames_accepted,
            "frames_ignored": self.frames_ignored,
            "frames_auth_failed": self.frames_auth_failed,
            "frames_expired": self.frames_expired,
            "frames_in_flight": self.frames_in_flight,
            "frames_tampered": self.frames_tampered,
            "core_frames_sent": self.core_frames_sent,
            "core_frames_to_eavesdroppers": self.core_frames_to_eavesdroppers,
            "core_frames_in_flight": self.core_frames_in_flight,
            "core_frames_read_by_eavesdroppers": self.core_frames_read_by_eavesdroppers,
            "eavesdrop_attempts": self.eavesdrop_attempts,
            "eavesdrop_success": self.eavesdrop_success,
        }

    def to_json(self) -> dict:
        out = self.scalars()
        out["formation_failures"] = dict(sorted(self.formation_failures.items()))
        out["cluster_sizes"] = list(self.cluster_sizes)
        out["vsc_trace"] = {k: self.vsc_trace[k] for k in sorted(self.vsc_trace)}
        out["cluster_size_trace"] = list(self.cluster_size_trace)
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in self.scalars().items():
            w.writerow([k, "" if v is None else v])
        return buf.getvalue()

    def timeseries_csv(self, tick_ms: int) -> str:
        """Long-format VSC and cluster-size series, one row per (tick, vehicle)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_s", "vehicle", "vsc", "cluster_size"])
        names = sorted(self.vsc_trace)
        for k, size in enumerate(self.cluster_size_trace):
            t = (k + 1) * tick_ms / 1000.0
            for name in names:
                v = self.vsc_trace[name][k]
                w.writerow([t, name, "" if v is None else repr(v), size])
        return buf.getvalue()


class Simulation:
    def __init__(self, scenario: Scenario, trace: bool = False, check_nonces: bool = False):
        self.scenario = scenario
        self.trace_enabled = trace
        self.check_nonces = check_nonces
        self._nonces: set = set()
        self.events: list = []
        self.tick_index = 0

        root = Xoshiro256(scenario.seed)
        self.mec = MecService(root.spawn(STREAM_MEC).next_u64(), window_seconds=scenario.window_s)
        self.protocol_rng = root.spawn(STREAM_PROTOCOL)
        self.fading_rng = root.spawn(STREAM_FADING)
        self.eve_rng = root.spawn(STREAM_EAVESDROPPER)
        self.tamper_rng = root.spawn(STREAM_TAMPER)
        id_rng = root.spawn(STREAM_IDS)

        self.vehicles: list = []
        for spec in scenario.vehicles:
            if spec.role == LEGITIMATE:
                pid = self.mec.register_vehicle(spec.vin)
                chain = generate_chain(spec.vin, scenario.chain_length)
            else:
                # eavesdroppers are never registered with the MEC
                pid = id_rng.random_bytes(8).hex()
                chain = None
            self.vehicles.append(Vehicle(
                name=spec.name, role=spec.role, pseudo_id=pid,
                x=spec.position.x, y=spec.position.y,
                vx=float(spec.velocity[0]), vy=float(spec.velocity[1]), chain=chain,
            ))
        self.vehicles.sort(key=lambda v: v.pseudo_id)
        self.by_id = {v.pseudo_id: v for v in self.vehicles}
        self.by_name = {v.name: v for v in self.vehicles}
        self.legit = [v for v in self.vehicles if v.legitimate]
        self.eves = [v for v in self.vehicles if not v.legitimate]

        self.cluster: Optional[cl.SecureCluster] = None
        self.epoch = 0
        self.pending_since_ms: Optional[int] = None
        self.in_flight: list = []
        self._eve_memory: dict = {}
        self._eve_keys: dict = {}
        self.metrics = Metrics(seed=scenario.seed, ticks=scenario.n_ticks)
        self.metrics.vsc_trace = {v.name: [] for v in self.legit}

    # helpers

    @property
    def now_ms(self) -> int:
        return self.tick_index * self.scenario.tick_ms

    def _in_range(self, a: Vehicle, b: Vehicle) -> bool:
        r = self.scenario.channel.max_range_m
        if r is None:
            return True
        dx, dy = b.x - a.x, b.y - a.y
        return dx * dx + dy * dy <= r * r

    def _current_m(self) -> int:
        return self.scenario.chain_length - self.epoch

    def _emit(self, bucket: list, phase: int, src: str, kind: str, **data) -> None:
        ev = {"t_ms": self.now_ms, "phase": phase, "src": src, "kind": kind}
        ev.update(data)
        bucket.append(ev)

    # phases

    def _mobility(self, ev: list) -> None:
        dt = self.scenario.tick_ms / 1000.0
        for v in self.vehicles:
            v.x += v.vx * dt
            v.y += v.vy * dt
            if self.trace_enabled:
                self._emit(ev, PHASE_MOBILITY, v.pseudo_id, "move", x=v.x, y=v.y)

    def _channel(self, ev: list) -> None:
        p = self.scenario.channel
        now = self.now_ms / 1000.0
        horizon = self.now_ms - int(round(self.scenario.window_s * 1000))
        snr = kernels.snr_matrix([v.x for v in self.vehicles], [v.y for v in self.vehicles],
                                 p.tx_power_dbm, p.ref_loss_db, p.ref_distance_m,
                                 p.path_loss_exponent, p.noise_floor_dbm, p.min_distance_m)
        for i, host in enumerate(self.vehicles):
            host.latest = {}
            for j, responder in enumerate(self.vehicles):
                if i == j or not self._in_range(host, responder):
                    continue
                value = float(snr[j, i])
                if p.rayleigh_fading:
                    value *= self.fading_rng.exponential()
                info = ChannelInfo(responder.pseudo_id, host.pseudo_id, value, now)
                host.reports.append(info)
                host.latest[responder.pseudo_id] = value
            while host.reports and cl.to_ms(host.reports[0].timestamp) <= horizon:
                host.reports.popleft()
            self._emit(ev, PHASE_CHANNEL, host.pseudo_id, "channel", m_count=len(host.reports))

    def _vsc(self, ev: list) -> None:
        now = self.now_ms / 1000.0
        s = self.scenario
        for v in self.legit:
            v.announcement = None
            if not v.latest:
                v.vsc, v.target = None, None
                self.metrics.vsc_trace[v.name].append(None)
                continue
            target = max(sorted(v.latest), key=lambda pid: v.latest[pid])
            value = vsc(VscInputs.for_host(v.pseudo_id, v.latest[target], v.reports))
            v.vsc, v.target = value, target
            self.metrics.vsc_trace[v.name].append(value)
            m = self._current_m()
            if m < 1:
                continue
            disclosure = ChainDisclosure(v.chain.value(m), m)
            a = cl.make_announcement(v.pseudo_id, disclosure, value, s.threshold, now)
            if a is None:
                continue
            v.announcement = a
            self.metrics.announcements += 1
            self._emit(ev, PHASE_VSC, v.pseudo_id, "announce", vsc=value, m=m, target=target)
            if s.initiator == MEC:
                res = self.mec.ingest_announcement(a, now)
                if not res.accepted:
                    self.metrics.announcements_rejected += 1
                    self._emit(ev, PHASE_VSC, v.pseudo_id, "announce_rejected", reason=res.reason)
            else:
                init = self.by_name[s.initiator]
                if init is not v and self._in_range(init, v):
                    init.inbox.append(a)

    def _formation(self, ev: list) -> None:
        if self.cluster is not None:
            return
        s = self.scenario
        now = self.now_ms / 1000.0
        if self.pending_since_ms is None:
            self.pending_since_ms = self.now_ms
        self.metrics.formation_attempts += 1
        formed, status, src = None, None, MEC
        if s.initiator == MEC:
            qualified = [v for v in self.legit if v.vsc is not None and v.vsc >= s.threshold]
            host = (qualified or self.legit)[0]
            src = host.pseudo_id
            resp = self.mec.handle_cluster_request(
                ClusterRequest(host.pseudo_id, s.threshold, s.ttl_seconds, s.window_s), now)
            status = resp.status
            if resp.status == STATUS_OK:
                formed = resp.cluster
        else:
            init = self.by_name[s.initiator]
            src = init.pseudo_id
            horizon = self.now_ms - int(round(s.window_s * 1000))
            init.inbox = [a for a in init.inbox if cl.to_ms(a.timestamp) > horizon]
            if init.announcement is None:
                status = "host_below_threshold"
            else:
                try:
                    formed = cl.form_cluster(init.announcement, init.inbox, init.verifier, now,
                                             s.ttl_seconds, s.threshold, self.protocol_rng)
                    status = STATUS_OK
                except HostBelowThresholdError:
                    status = "host_below_threshold"
                except DegenerateClusterError:
                    status = "degenerate"
                except ValidationError:
                    status = "initiator_rejected"
        if formed is None:
            self.metrics.formation_failures[status] = self.metrics.formation_failures.get(status, 0) + 1
            self._emit(ev, PHASE_FORMATION, src, "formation_failed", status=status)
            return

        self.cluster = formed
        self.epoch += 1
        self.metrics.clusters_formed += 1
        self.metrics.cluster_sizes.append(formed.size)
        self.metrics.latencies_ms.append(self.now_ms - self.pending_since_ms)
        self.pending_since_ms = None
        self._emit(ev, PHASE_FORMATION, src, "cluster_formed", cluster_id=formed.cluster_id.hex(),
                   members=sorted(formed.members), expires_ms=cl.to_ms(formed.expires_at))
        for v in self.legit:
            v.view, v.own_value = None, None
        for msg in cl.distribute(formed, now):
            member = self.by_id[msg.addressee]
            view = cl.cluster_from_key_material(msg.payload, now)
            if view.group_key != formed.group_key:
                self.metrics.key_agreement_failures += 1
            member.keyring[view.cluster_id] = view
            member.view = view
            member.own_value = view.members[member.pseudo_id].value
            self._emit(ev, PHASE_FORMATION, member.pseudo_id, "key_material",
                       cluster_id=view.cluster_id.hex())

    def _eavesdrop(self, eve: Vehicle, frame: BroadcastFrame) -> None:
        m = self.metrics
        cid = frame.cluster_id or b""
        seen = self._eve_memory.setdefault(cid, {"tags": set(), "first_ms": frame.ts_ms})
        seen["tags"].add(bytes(frame.sender_value))
        m.eavesdrop_attempts += 1
        if open_frame(frame, self.eve_rng.random_bytes(32)) is not None:
            m.eavesdrop_success += 1
        # public-artifact guess: treat observed tags as member values, expiry = first sighting + ttl
        if frame.cluster_id is None:
            return
        sig = (cid, frozenset(seen["tags"]))
        key = self._eve_keys.get(sig)
        if key is None:
            guesses = [ChainDisclosure(t, 1) for t in seen["tags"]]
            key = cl.derive_group_key(guesses, cid, (seen["first_ms"] / 1000.0) + self.scenario.ttl_seconds)
            self._eve_keys[sig] = key
        m.eavesdrop_attempts += 1
        if open_frame(frame, key) is not None:
            m.eavesdrop_success += 1

    def _tamper(self, frame: BroadcastFrame) -> BroadcastFrame:
        ct = bytearray(frame.ciphertext)
        tag = bytearray(frame.tag)
        pos = self.tamper_rng.randbelow(len(ct) + len(tag))
        bit = 1 << self.tamper_rng.randbelow(8)
        if pos < len(ct):
            ct[pos] ^= bit
        else:
            tag[pos - len(ct)] ^= bit
        return BroadcastFrame(frame.level, frame.sender_value, frame.timestamp,
                              cluster_id=frame.cluster_id, nonce=frame.nonce,
                              ciphertext=bytes(ct), tag=bytes(tag), alg=frame.alg)

    def _deliver(self, ev: list) -> None:
        now = self.now_ms / 1000.0
        m = self.metrics
        s = self.scenario
        for sender, signal, receivers in self.in_flight:
            for frame in signal.frames:
                dispositions = {}
                for rid in receivers:
                    r = self.by_id[rid]
                    if frame.level is Level.CORE:
                        if not r.legitimate:
                            m.core_frames_to_eavesdroppers += 1
                            m.core_frames_in_flight -= 1
                            if receive_broadcast(frame, None, now).accepted:
                                m.core_frames_read_by_eavesdroppers += 1
                        continue
                    if not r.legitimate:
                        self._eavesdrop(r, frame)
                        continue
                    f = frame
                    if s.tamper_probability > 0 and self.tamper_rng.random() < s.tamper_probability:
                        f = self._tamper(frame)
                        m.frames_tampered += 1
                    res = receive_broadcast(f, r.keyring.get(f.cluster_id), now, s.replay_window_s)
                    m.frames_in_flight -= 1
                    if res.status == ACCEPTED:
                        m.frames_accepted += 1
                    elif res.status == IGNORED:
                        m.frames_ignored += 1
                    elif res.status == AUTH_FAILURE:
                        m.frames_auth_failed += 1
                    elif res.status == EXPIRED:
                        m.frames_expired += 1
                    dispositions[rid] = res.status
                if dispositions and self.trace_enabled:
                    self._emit(ev, PHASE_DATA, sender, "frame_rx", nonce=frame.nonce.hex(),
                               dispositions=dict(sorted(dispositions.items())))
        self.in_flight = []

    def _send(self, ev: list) -> None:
        now = self.now_ms / 1000.0
        s = self.scenario
        m = self.metrics
        emergency_ms = int(round(s.emergency_interval_s * 1000))
        for v in self.legit:
            core = None
            value = v.own_value or v.chain.value(max(1, self._current_m()))
            if self.now_ms % emergency_ms == 0:
                body = json.dumps({"id": v.pseudo_id, "kind": "emergency", "t_ms": self.now_ms},
                                  sort_keys=True).encode()
                core = core_frame(value, body, now)
                m.core_frames_sent += 1
            enh = []
            if v.view is not None and cl.is_active(v.view, now):
                for _ in range(s.traffic):
                    body = json.dumps({"id": v.pseudo_id, "x": round(v.x, 3), "y": round(v.y, 3),
                                       "vx": v.vx, "vy": v.vy, "seq": v.sender.counter},
                                      sort_keys=True).encode()
                    frame = v.sender.seal(v.view, v.own_value, body, now)
                    if self.check_nonces:
                        key = (v.view.group_key, frame.nonce)
                        if key in self._nonces:
                            raise AssertionError("nonce reuse under one key")
                        self._nonces.add(key)
                    enh.append(frame)
            if core is None and not enh:
                continue
            signal = mux(core, enh)
            receivers = [r.pseudo_id for r in self.vehicles if r is not v and self._in_range(v, r)]
            n_legit = sum(1 for rid in receivers if self.by_id[rid].legitimate)
            if core is not None:
                m.core_frames_in_flight += len(receivers) - n_legit
            m.frames_emitted += len(enh)
            m.frames_sent += len(enh) * n_legit
            m.frames_in_flight += len(enh) * n_legit
            self.in_flight.append((v.pseudo_id, signal, receivers))
            self._emit(ev, PHASE_DATA, v.pseudo_id, "signal", core=core is not None,
                       enhancement=len(enh), nonces=[f.nonce.hex() for f in enh])

    def _expiry(self, ev: list) -> None:
        now = self.now_ms / 1000.0
        replay_ms = int(round(self.scenario.replay_window_s * 1000))
        if self.cluster is not None and not cl.is_active(self.cluster, now):
            self._emit(ev, PHASE_EXPIRY, MEC if self.scenario.initiator == MEC
                       else self.by_name[self.scenario.initiator].pseudo_id,
                       "cluster_expired", cluster_id=self.cluster.cluster_id.hex())
            self.cluster = None
        for v in self.legit:
            for cid in [c for c, k in v.keyring.items() if self.now_ms >= cl.to_ms(k.expires_at) + replay_ms]:
                del v.keyring[cid]
        self.metrics.cluster_size_trace.append(
            self.cluster.size if self.cluster is not None and cl.is_active(self.cluster, now) else 0)

    def step(self) -> list:
        """Advance one tick and return its events in stable order."""
        self.tick_index += 1
        ev: list = []
        self._mobility(ev)
        self._channel(ev)
        self._vsc(ev)
        self._formation(ev)
        self._deliver(ev)
        self._send(ev)
        self._expiry(ev)
        ev.sort(key=lambda e: (e["phase"], e["src"]))
        if self.trace_enabled:
            self.events.extend(ev)
        return ev

    def run(self) -> Metrics:
        for _ in range(self.scenario.n_ticks):
            self.step()
        return self.metrics

    def trace_ndjson(self) -> str:
        return "".join(json.dumps(e, sort_keys=True, separators=(",", ":")) + "\n" for e in self.events)


def run(scenario: Scenario, trace: bool = False, check_nonces: bool = False) -> Metrics:
    return Simulation(scenario, trace=trace, check_nonces=check_nonces).run()
