from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from epochswitch.core_model import (
    CodecError,
    ConsensusKind,
    Done,
    EpochChange,
    EpochConfig,
    FaultModel,
    HandoverCertificate,
    Noop,
    ReplicaId,
    SigningKey,
    Transaction,
    decode_content,
    encode_content,
    genesis_hash,
    hash_bytes,
    is_system,
    make_done,
    make_ready,
    sign,
    validate_epoch_config,
    verify,
)
from epochswitch.runner import load_scenario

from conftest import key_for, make_config

# pinned once with SHA-256 over the canonical encoding
WORKED_EC_HASH = "57b03d6aa7d8a13f2419f17f4e40645e3e2e3756e8daef2a8728e191053586b8"
WORKED_GENESIS_HASH = "e292879097d7f5c1a07b02ba7a793bfcaad32617fe78fb9afc276fca841830df"
SET_A_1_ID = "7858789688473a8838ae6dfddca2187b4d615cb542591b44657c6fc2c305011a"


def test_hash_empty_is_sha256_empty():
    assert hash_bytes(b"").hex() == (
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855")


def test_hash_is_deterministic():
    assert hash_bytes(b"abc") == hash_bytes(b"abc")


def test_worked_example_frozen_hashes():
    cfgs = load_scenario("worked_example").configs()
    ec = EpochChange(1, cfgs[2])
    assert hash_bytes(encode_content(ec)).hex() == WORKED_EC_HASH
    assert genesis_hash(cfgs[1]).hex() == WORKED_GENESIS_HASH
    assert Transaction(b"set a 1").id.hex() == SET_A_1_ID


def test_sign_verify_round_trip():
    k = key_for(1, 0)
    sig = sign(b"m", k)
    assert verify(b"m", sig, k.public_key)


def test_verify_rejects_tampered_message():
    k = key_for(1, 0)
    assert not verify(b"m2", sign(b"m", k), k.public_key)


def test_verify_rejects_wrong_key():
    assert not verify(b"m", sign(b"m", key_for(1, 0)), key_for(1, 1).public_key)


def test_verify_unknown_scheme_prefix_is_false():
    assert not verify(b"m", b"x" * 32, b"\x09" + b"0" * 32)


def test_ed25519_round_trip():
    pytest.importorskip("cryptography")
    k = SigningKey.derive(b"s", "1:0", "ed25519")
    sig = k.sign(b"hello")
    assert verify(b"hello", sig, k.public_key)
    assert not verify(b"hellp", sig, k.public_key)


@pytest.mark.parametrize("secret", [b"", b"short", b"x" * 33])
def test_malformed_key_rejected(secret):
    with pytest.raises(ValueError):
        SigningKey(secret)


def test_unknown_scheme_rejected():
    with pytest.raises(ValueError):
        SigningKey(b"x" * 32, "rsa")


def test_validate_byzantine_four_of_one_ok():
    assert validate_epoch_config(make_config(1, 4, 1)) is None


def test_validate_byzantine_three_of_one_rejected():
    assert validate_epoch_config(make_config(1, 3, 1)) == "3 < 3f+1 (f=1)"


def test_validate_crash_three_of_one_ok():
    assert validate_epoch_config(make_config(1, 3, 1, FaultModel.CRASH)) is None


def test_validate_crash_two_of_one_rejected():
    assert "2f+1" in validate_epoch_config(make_config(1, 2, 1, FaultModel.CRASH))


def test_validate_duplicate_members_rejected():
    cfg = make_config(1, 4, 1)
    dup = EpochConfig(1, cfg.members[:3] + cfg.members[:1], 1, cfg.fault_model,
                      cfg.consensus_kind)
    assert "distinct" in validate_epoch_config(dup)


def test_validate_foreign_member_rejected():
    cfg = make_config(2, 4, 1)
    other = ReplicaId(1, 9, key_for(1, 9).public_key)
    bad = EpochConfig(2, cfg.members[:3] + (other,), 1, cfg.fault_model, cfg.consensus_kind)
    assert "different epoch" in validate_epoch_config(bad)


@pytest.mark.parametrize("n,f,fm,q", [
    (4, 1, FaultModel.BYZANTINE, 3),
    (5, 1, FaultModel.BYZANTINE, 4),
    (7, 2, FaultModel.BYZANTINE, 5),
    (13, 4, FaultModel.BYZANTINE, 9),
    (3, 1, FaultModel.CRASH, 2),
    (5, 2, FaultModel.CRASH, 3),
])
def test_quorum_sizes(n, f, fm, q):
    assert make_config(1, n, f, fm).quorum == q


def test_learn_threshold():
    assert make_config(1, 4, 1).learn_threshold == 2
    assert make_config(1, 3, 1, FaultModel.CRASH).learn_threshold == 1


def test_transaction_id_must_match_payload():
    with pytest.raises(ValueError):
        Transaction(b"a", id=hash_bytes(b"b"))


def test_decode_rejects_trailing_bytes():
    raw = encode_content(Transaction(b"x")) + b"\x00"
    with pytest.raises(CodecError):
        decode_content(raw)


def test_decode_rejects_unknown_tag():
    with pytest.raises(CodecError):
        decode_content(b"\x09")


def test_ready_and_done_signatures():
    old, new = make_config(1, 4, 1), make_config(2, 4, 1)
    r = make_ready(1, 2, b"h" * 32, new.members[0], key_for(2, 0))
    assert r.sig_ok()
    forged = make_ready(1, 2, b"h" * 32, new.members[1], key_for(2, 0))
    assert not forged.sig_ok()
    cert = HandoverCertificate(1, new, 9, genesis_hash(old))
    d = make_done(cert, old.members[0], key_for(1, 0))
    assert d.sig_ok()
    assert not Done(HandoverCertificate(1, new, 10, cert.prev_cert_hash), d.signer, d.sig).sig_ok()


def test_is_system():
    cfg = make_config(2, 4, 1)
    assert is_system(EpochChange(1, cfg))
    assert not is_system(Transaction(b"x"))
    assert not is_system(Noop())


def test_config_codec_round_trip():
    cfg = make_config(3, 7, 2, FaultModel.BYZANTINE, ConsensusKind.MULTILANE)
    assert EpochConfig.decode(cfg.encode()) == cfg


def test_certificate_codec_round_trip():
    cert = HandoverCertificate(1, make_config(2, 4, 1), 9, b"p" * 32)
    assert HandoverCertificate.decode(cert.encode()) == cert


# -- properties ---------------------------------------------------------------------------


@given(st.binary(max_size=64), st.binary(max_size=64))
def test_txid_equal_iff_payload_equal(a, b):
    assert (Transaction(a).id == Transaction(b).id) == (a == b)


@given(st.binary(max_size=64))
def test_txid_recomputable(p):
    tx = Transaction(p)
    assert decode_content(encode_content(tx)).id == tx.id == hash_bytes(p)


_contents = st.one_of(
    st.binary(max_size=40).map(Transaction),
    st.text(max_size=10).map(Noop),
    st.builds(lambda e, h: HandoverCertificate(e, make_config(e + 1, 4, 1), h, b"p" * 32),
              st.integers(1, 50), st.integers(1, 1000)).map(
        lambda c: make_done(c, ReplicaId(c.old_epoch, 0, key_for(c.old_epoch, 0).public_key),
                            key_for(c.old_epoch, 0))),
    st.integers(1, 50).map(lambda e: EpochChange(e, make_config(e + 1, 4, 1))),
    st.integers(1, 50).map(lambda e: make_ready(e, e + 1, b"h" * 32,
                                                ReplicaId(e + 1, 2, key_for(e + 1, 2).public_key),
                                                key_for(e + 1, 2))),
)


@given(_contents)
def test_content_codec_round_trip(c):
    raw = encode_content(c)
    back = decode_content(raw)
    assert back == c
    assert encode_content(back) == raw
