import base64
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_vin
from vscluster.cluster import (
    Announcement,
    cluster_from_key_material,
    derive_group_key,
    distribute,
    form_cluster,
    frame_tag,
    registry_verifier,
)
from vscluster.errors import ClusterExpiredError, NotAMemberError, ValidationError
from vscluster.hashchain import ChainDisclosure, disclose, generate_chain
from vscluster.messaging import (
    BroadcastFrame,
    Level,
    MuxedSignal,
    SenderState,
    core_frame,
    demux,
    encrypt_broadcast,
    mux,
    open_frame,
    receive_broadcast,
    receive_wire,
)
from vscluster.rng import Xoshiro256


@pytest.fixture(scope="module")
def setup():
    rng = Xoshiro256(77)
    vins = {f"id{i}": random_vin(rng) for i in range(4)}
    chains = {k: generate_chain(v, 10) for k, v in vins.items()}
    ids = sorted(vins)
    anns = [Announcement(i, disclose(chains[i], 10), 2.0, 0.0) for i in ids]
    c = form_cluster(anns[0], anns[1:], registry_verifier(vins), 0.0, 10.0, 1.0, Xoshiro256(1))
    return c, chains, ids


def value_of(chains, pid):
    return chains[pid].value(10)


def test_roundtrip_between_members(setup):
    c, chains, ids = setup
    frame = encrypt_broadcast(c, value_of(chains, ids[1]), b"speed=25", 1.0, 0)
    for msg in distribute(c, 1.0):
        view = cluster_from_key_material(msg.payload, 1.0)
        res = receive_broadcast(frame, view, 1.05)
        assert res.status == "accepted" and res.plaintext == b"speed=25"


def test_frame_never_carries_raw_chain_value(setup):
    c, chains, ids = setup
    v = value_of(chains, ids[1])
    frame = encrypt_broadcast(c, v, b"x", 1.0, 0)
    wire = frame.to_wire()
    assert v.hex().encode() not in wire
    assert frame.sender_value == frame_tag(v)


def test_non_member_cannot_send(setup):
    c, _, _ = setup
    outsider = generate_chain("5YJ3E1EA000000999", 10).value(10)
    with pytest.raises(NotAMemberError):
        encrypt_broadcast(c, outsider, b"x", 1.0, 0)


def test_expired_cluster_cannot_send(setup):
    c, chains, ids = setup
    with pytest.raises(ClusterExpiredError):
        encrypt_broadcast(c, value_of(chains, ids[0]), b"x", 10.0, 0)


def test_unknown_sender_ignored(setup):
    c, chains, ids = setup
    frame = encrypt_broadcast(c, value_of(chains, ids[0]), b"x", 1.0, 0)
    forged = BroadcastFrame(Level.ENHANCEMENT, frame_tag(bytes(32)), frame.timestamp,
                            cluster_id=frame.cluster_id, nonce=frame.nonce,
                            ciphertext=frame.ciphertext, tag=frame.tag, alg=frame.alg)
    assert receive_broadcast(forged, c, 1.0).status == "ignored"
    assert receive_broadcast(frame, None, 1.0).status == "ignored"


def test_ciphertext_flip_is_auth_failure(setup):
    c, chains, ids = setup
    frame = encrypt_broadcast(c, value_of(chains, ids[2]), b"hello world", 1.0, 3)
    ct = bytearray(frame.ciphertext)
    ct[0] ^= 1
    bad = BroadcastFrame(frame.level, frame.sender_value, frame.timestamp, cluster_id=frame.cluster_id,
                         nonce=frame.nonce, ciphertext=bytes(ct), tag=frame.tag, alg=frame.alg)
    assert receive_broadcast(bad, c, 1.0).status == "auth_failure"


def test_timestamp_is_authenticated(setup):
    c, chains, ids = setup
    frame = encrypt_broadcast(c, value_of(chains, ids[2]), b"x", 1.0, 4)
    moved = BroadcastFrame(frame.level, frame.sender_value, 1.001, cluster_id=frame.cluster_id,
                           nonce=frame.nonce, ciphertext=frame.ciphertext, tag=frame.tag, alg=frame.alg)
    assert receive_broadcast(moved, c, 1.5).status == "auth_failure"


def test_expiry_and_replay(setup):
    c, chains, ids = setup
    frame = encrypt_broadcast(c, value_of(chains, ids[0]), b"x", 9.9, 5)
    assert receive_broadcast(frame, c, 9.999).status == "accepted"
    assert receive_broadcast(frame, c, 10.0).status == "expired"
    assert receive_broadcast(frame, c, 20.0).status == "expired"
    early = encrypt_broadcast(c, value_of(chains, ids[0]), b"x", 0.5, 6)
    assert receive_broadcast(early, c, 5.5).status == "accepted"
    assert receive_broadcast(early, c, 5.501).status == "ignored"


def test_core_frames_readable_by_anyone(setup):
    _, chains, ids = setup
    frame = core_frame(value_of(chains, ids[0]), b"accident ahead", 2.0)
    assert frame.nonce is None and frame.ciphertext is None and frame.alg is None
    assert receive_broadcast(frame, None, 2.0).plaintext == b"accident ahead"
    with pytest.raises(ValidationError):
        BroadcastFrame(Level.CORE, frame.sender_value, 0.0, plaintext=b"x", nonce=bytes(12))


def test_nonce_layout(setup):
    c, chains, ids = setup
    v = value_of(chains, ids[3])
    frame = encrypt_broadcast(c, v, b"x", 1.0, 258)
    assert frame.nonce[:4] == c.sender_index(v).to_bytes(4, "big")
    assert frame.nonce[4:] == (258).to_bytes(8, "big")
    assert len(frame.tag) == 16


def test_sender_state_counter_unique(setup):
    c, chains, ids = setup
    st_ = SenderState()
    nonces = {st_.seal(c, value_of(chains, ids[1]), b"p", 1.0).nonce for _ in range(50)}
    assert len(nonces) == 50


def test_wire_roundtrip(setup):
    c, chains, ids = setup
    frame = encrypt_broadcast(c, value_of(chains, ids[1]), b"payload", 1.234, 9)
    obj = json.loads(frame.to_wire())
    assert set(obj) == {"level", "sender_value", "ts_ms", "cluster_id", "nonce", "ct", "tag", "pt", "alg"}
    assert obj["level"] == "enh" and obj["ts_ms"] == 1234 and obj["alg"] == "aes-256-gcm"
    assert obj["pt"] is None and base64.b64decode(obj["ct"]) == frame.ciphertext
    assert BroadcastFrame.from_wire(frame.to_wire()) == frame
    core = core_frame(value_of(chains, ids[1]), b"sos", 1.0)
    cobj = json.loads(core.to_wire())
    assert cobj["level"] == "core" and cobj["nonce"] is None and base64.b64decode(cobj["pt"]) == b"sos"
    assert BroadcastFrame.from_wire(core.to_wire()) == core


def test_mux_demux():
    v = bytes(32)
    core = core_frame(v, b"c", 0.0)
    s1 = mux(core, [])
    assert isinstance(s1, MuxedSignal) and len(s1.frames) == 1
    enh = [BroadcastFrame(Level.ENHANCEMENT, frame_tag(v), 0.0, cluster_id=bytes(16), nonce=bytes(12),
                          ciphertext=b"", tag=bytes(16), alg="aes-256-gcm")] * 3
    s2 = mux(core, enh)
    assert len(s2.frames) == 4
    assert demux(s2) == (core, enh)
    assert demux(mux(None, enh)) == (None, enh)
    with pytest.raises(ValidationError):
        mux(core, [core])
    with pytest.raises(ValidationError):
        MuxedSignal((core, core))


def test_public_artifact_attack_fails(setup):
    """Frames expose tags, the cluster id and a send time; none of it rebuilds the key."""
    c, chains, ids = setup
    frames = [encrypt_broadcast(c, value_of(chains, i), b"data", 0.0, 0) for i in ids]
    tags = [ChainDisclosure(f.sender_value, 10) for f in frames]
    guess = derive_group_key(tags, frames[0].cluster_id, frames[0].timestamp + 10.0)
    assert all(open_frame(f, guess) is None for f in frames)
    # the same guess over raw chain values would have worked, which is why frames carry tags
    raw = [ChainDisclosure(value_of(chains, i), 10) for i in ids]
    assert derive_group_key(raw, frames[0].cluster_id, frames[0].timestamp + 10.0) == c.group_key


@settings(max_examples=300, deadline=None)
@given(data=st.binary(max_size=400))
def test_receive_wire_total_on_garbage(data, setup):
    c, _, _ = setup
    assert receive_wire(data, c, 1.0).status in {"accepted", "ignored", "expired", "auth_failure"}


@settings(max_examples=300, deadline=None)
@given(pos=st.integers(0, 10_000), byte=st.integers(0, 255))
def test_receive_wire_total_on_mutations(pos, byte, setup):
    c, chains, ids = setup
    wire = bytearray(encrypt_broadcast(c, value_of(chains, ids[0]), b"abc", 1.0, 1).to_wire())
    wire[pos % len(wire)] = byte
    res = receive_wire(bytes(wire), c, 1.0)
    assert res.status in {"accepted", "ignored", "expired", "auth_failure"}
    if res.status == "accepted":
        assert res.plaintext == b"abc"
