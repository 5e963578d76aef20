"""Domain records, canonical encoding, hashing and signatures.

Every record that is hashed or signed has one canonical byte form.  The
encoding is field-order-fixed and length-prefixed:

* unsigned integers: 8 bytes, big-endian
* small enums and variant tags: 1 byte
* byte strings: 4-byte big-endian length, then the bytes
* sequences: 4-byte big-endian count, then each item

See README.md for the per-record field order.
"""
from __future__ import annotations

import enum
import hashlib
import hmac
import struct
from dataclasses import dataclass, field
from typing import Optional, Union

HASH_LEN = 32

# inner-log content tags
TAG_CLIENT = 0
TAG_EPOCH_CHANGE = 1
TAG_READY = 2
TAG_DONE = 3
TAG_NOOP = 4


def hash_bytes(data: bytes) -> bytes:
    """SHA-256 digest of ``data``."""
    return hashlib.sha256(data).digest()


class CodecError(ValueError):
    pass


class Writer:
    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def u8(self, v: int) -> "Writer":
        self._parts.append(struct.pack(">B", v))
        return self

    def u64(self, v: int) -> "Writer":
        if v < 0:
            raise CodecError(f"negative integer {v}")
        self._parts.append(struct.pack(">Q", v))
        return self

    def blob(self, b: bytes) -> "Writer":
        self._parts.append(struct.pack(">I", len(b)))
        self._parts.append(bytes(b))
        return self

    def count(self, n: int) -> "Writer":
        self._parts.append(struct.pack(">I", n))
        return self

    def raw(self, b: bytes) -> "Writer":
        self._parts.append(b)
        return self

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise CodecError("truncated record")
        out = self._data[self._pos:self._pos + n]
        self._pos += n
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def count(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def blob(self) -> bytes:
        return self._take(self.count())

    def done(self) -> bool:
        return self._pos == len(self._data)

    def expect_end(self) -> None:
        if not self.done():
            raise CodecError("trailing bytes after record")


# --------------------------------------------------------------------------
# signatures

MOCK_PREFIX = b"\x01"
ED25519_PREFIX = b"\x02"

# public key -> secret, for the keyed-digest mock.  Verification in the mock
# needs the secret; the registry plays the role of a public-key infrastructure.
_MOCK_REGISTRY: dict[bytes, bytes] = {}


class SigningKey:
    """Secret signing key.  ``scheme`` is ``"mock"`` or ``"ed25519"``."""

    __slots__ = ("scheme", "_secret", "public_key", "_ed")

    def __init__(self, secret: bytes, scheme: str = "mock") -> None:
        if not isinstance(secret, (bytes, bytearray)) or len(secret) != 32:
            raise ValueError("signing key secret must be exactly 32 bytes")
        self.scheme = scheme
        self._secret = bytes(secret)
        self._ed = None
        if scheme == "mock":
            self.public_key = MOCK_PREFIX + hash_bytes(b"mock-pub" + self._secret)
            _MOCK_REGISTRY[self.public_key] = self._secret
        elif scheme == "ed25519":
            from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
            from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

            self._ed = Ed25519PrivateKey.from_private_bytes(self._secret)
            raw = self._ed.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
            self.public_key = ED25519_PREFIX + raw
        else:
            raise ValueError(f"unknown signature scheme {scheme!r}")

    @classmethod
    def derive(cls, seed: bytes, label: str, scheme: str = "mock") -> "SigningKey":
        return cls(hash_bytes(seed + b"/" + label.encode()), scheme)

    def sign(self, msg: bytes) -> bytes:
        if self._ed is not None:
            return self._ed.sign(msg)
        return hash_bytes(self._secret + msg)

    def __repr__(self) -> str:
        return f"SigningKey({self.scheme}, pub={self.public_key[:5].hex()}..)"


def sign(msg: bytes, key: SigningKey) -> bytes:
    return key.sign(msg)


def verify(msg: bytes, sig: bytes, pubkey: bytes) -> bool:
    """Check ``sig`` over ``msg`` under ``pubkey``; never raises."""
    if pubkey[:1] == MOCK_PREFIX:
        secret = _MOCK_REGISTRY.get(pubkey)
        if secret is None:
            return False
        return hmac.compare_digest(hash_bytes(secret + msg), sig)
    if pubkey[:1] == ED25519_PREFIX:
        from cryptography.exceptions import InvalidSignature
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

        try:
            Ed25519PublicKey.from_public_bytes(pubkey[1:]).verify(sig, msg)
        except (InvalidSignature, ValueError):
            return False
        return True
    return False


# --------------------------------------------------------------------------
# configuration


class FaultModel(enum.IntEnum):
    CRASH = 0
    BYZANTINE = 1


class ConsensusKind(enum.IntEnum):
    SEQUENCER = 0
    MULTILANE = 1


@dataclass(frozen=True, order=True)
class ReplicaId:
    epoch: int
    index: int
    public_key: bytes = field(compare=False, repr=False)

    @property
    def key(self) -> tuple[int, int]:
        return (self.epoch, self.index)

    def write(self, w: Writer) -> None:
        w.u64(self.epoch).u64(self.index).blob(self.public_key)

    @classmethod
    def read(cls, r: Reader) -> "ReplicaId":
        return cls(r.u64(), r.u64(), r.blob())

    def __str__(self) -> str:
        return f"R({self.epoch},{self.index})"


@dataclass(frozen=True)
class EpochConfig:
    epoch: int
    members: tuple[ReplicaId, ...]
    f: int
    fault_model: FaultModel
    consensus_kind: ConsensusKind

    @property
    def n(self) -> int:
        return len(self.members)

    def member(self, index: int) -> Optional[ReplicaId]:
        for m in self.members:
            if m.index == index:
                return m
        return None

    def is_member(self, rid: ReplicaId) -> bool:
        return any(m.key == rid.key and m.public_key == rid.public_key for m in self.members)

    @property
    def quorum(self) -> int:
        """Votes needed so any two quorums share a correct member."""
        if self.fault_model == FaultModel.BYZANTINE:
            return max(2 * self.f + 1, (self.n + self.f + 2) // 2)
        return self.n // 2 + 1

    @property
    def learn_threshold(self) -> int:
        """Matching copies from distinct members needed to trust a reported value."""
        return self.f + 1 if self.fault_model == FaultModel.BYZANTINE else 1

    def write(self, w: Writer) -> None:
        w.u64(self.epoch).u64(self.f).u8(int(self.fault_model)).u8(int(self.consensus_kind))
        w.count(len(self.members))
        for m in self.members:
            m.write(w)

    @classmethod
    def read(cls, r: Reader) -> "EpochConfig":
        epoch, f = r.u64(), r.u64()
        fm = FaultModel(r.u8())
        ck = ConsensusKind(r.u8())
        members = tuple(ReplicaId.read(r) for _ in range(r.count()))
        return cls(epoch, members, f, fm, ck)

    def encode(self) -> bytes:
        w = Writer()
        self.write(w)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "EpochConfig":
        r = Reader(data)
        cfg = cls.read(r)
        r.expect_end()
        return cfg


def validate_epoch_config(cfg: EpochConfig) -> Optional[str]:
    """Return None if ``cfg`` is admissible, else a description of the violation."""
    n, f = cfg.n, cfg.f
    if cfg.epoch < 1:
        return f"epoch id {cfg.epoch} < 1"
    keys = [m.key for m in cfg.members]
    if len(set(keys)) != len(keys):
        return "members are not pairwise distinct"
    if any(m.epoch != cfg.epoch for m in cfg.members):
        return "member identity belongs to a different epoch"
    if cfg.fault_model == FaultModel.BYZANTINE:
        if n < 3 * f + 1:
            return f"{n} < 3f+1 (f={f})"
    elif n < 2 * f + 1:
        return f"{n} < 2f+1 (f={f})"
    if n == 0:
        return "empty membership"
    return None


GENESIS_DOMAIN = b"epochswitch/genesis/v1"


def genesis_hash(cfg: EpochConfig) -> bytes:
    return hash_bytes(GENESIS_DOMAIN + cfg.encode())


# --------------------------------------------------------------------------
# transactions and inner-log content


@dataclass(frozen=True)
class Transaction:
    payload: bytes
    submitter: str = ""
    id: bytes = field(default=b"", compare=False)

    def __post_init__(self) -> None:
        tid = hash_bytes(self.payload)
        if self.id and self.id != tid:
            raise ValueError("transaction id does not match payload")
        object.__setattr__(self, "id", tid)

    def write(self, w: Writer) -> None:
        w.u8(TAG_CLIENT).blob(self.payload).blob(self.submitter.encode())

    @property
    def ident(self) -> bytes:
        return self.id

    def __repr__(self) -> str:
        return f"Tx({self.payload[:24]!r})"


@dataclass(frozen=True)
class EpochChange:
    from_epoch: int
    next: EpochConfig

    def write(self, w: Writer) -> None:
        w.u8(TAG_EPOCH_CHANGE).u64(self.from_epoch)
        self.next.write(w)

    @property
    def ident(self) -> bytes:
        return hash_bytes(encode_content(self))


@dataclass(frozen=True)
class Ready:
    from_epoch: int
    to_epoch: int
    ec_hash: bytes
    signer: ReplicaId
    sig: bytes = b""

    def signed_bytes(self) -> bytes:
        w = Writer().raw(b"READY").u64(self.from_epoch).u64(self.to_epoch).blob(self.ec_hash)
        self.signer.write(w)
        return w.getvalue()

    def sig_ok(self) -> bool:
        return verify(self.signed_bytes(), self.sig, self.signer.public_key)

    def write(self, w: Writer) -> None:
        w.u8(TAG_READY).u64(self.from_epoch).u64(self.to_epoch).blob(self.ec_hash)
        self.signer.write(w)
        w.blob(self.sig)

    @property
    def ident(self) -> bytes:
        return hash_bytes(encode_content(self))


@dataclass(frozen=True)
class HandoverCertificate:
    old_epoch: int
    next_config: EpochConfig
    h: int
    prev_cert_hash: bytes

    def write(self, w: Writer) -> None:
        w.u64(self.old_epoch)
        self.next_config.write(w)
        w.u64(self.h).blob(self.prev_cert_hash)

    @classmethod
    def read(cls, r: Reader) -> "HandoverCertificate":
        old = r.u64()
        cfg = EpochConfig.read(r)
        return cls(old, cfg, r.u64(), r.blob())

    def encode(self) -> bytes:
        w = Writer()
        self.write(w)
        return w.getvalue()

    @property
    def digest(self) -> bytes:
        return hash_bytes(self.encode())

    @classmethod
    def decode(cls, data: bytes) -> "HandoverCertificate":
        r = Reader(data)
        cert = cls.read(r)
        r.expect_end()
        return cert


@dataclass(frozen=True)
class Done:
    cert: HandoverCertificate
    signer: ReplicaId
    sig: bytes = b""

    def signed_bytes(self) -> bytes:
        return b"DONE" + self.cert.encode()

    def sig_ok(self) -> bool:
        return verify(self.signed_bytes(), self.sig, self.signer.public_key)

    def write(self, w: Writer) -> None:
        w.u8(TAG_DONE)
        self.cert.write(w)
        self.signer.write(w)
        w.blob(self.sig)

    @property
    def ident(self) -> bytes:
        return hash_bytes(encode_content(self))


@dataclass(frozen=True)
class Noop:
    """Filler occupying an inner position; invisible to the sanitizer."""

    reason: str = "noop"

    def write(self, w: Writer) -> None:
        w.u8(TAG_NOOP).blob(self.reason.encode())

    @property
    def ident(self) -> bytes:
        return hash_bytes(encode_content(self))


SystemTx = Union[EpochChange, Ready, Done]
Content = Union[Transaction, EpochChange, Ready, Done, Noop]


def encode_content(c: Content) -> bytes:
    w = Writer()
    c.write(w)
    return w.getvalue()


def decode_content(data: bytes) -> Content:
    r = Reader(data)
    tag = r.u8()
    if tag == TAG_CLIENT:
        payload = r.blob()
        out: Content = Transaction(payload, r.blob().decode())
    elif tag == TAG_EPOCH_CHANGE:
        frm = r.u64()
        out = EpochChange(frm, EpochConfig.read(r))
    elif tag == TAG_READY:
        frm, to, ech = r.u64(), r.u64(), r.blob()
        signer = ReplicaId.read(r)
        out = Ready(frm, to, ech, signer, r.blob())
    elif tag == TAG_DONE:
        cert = HandoverCertificate.read(r)
        signer = ReplicaId.read(r)
        out = Done(cert, signer, r.blob())
    elif tag == TAG_NOOP:
        out = Noop(r.blob().decode())
    else:
        raise CodecError(f"unknown content tag {tag}")
    r.expect_end()
    return out


def is_system(c: Content) -> bool:
    return isinstance(c, (EpochChange, Ready, Done))


def make_ready(from_epoch: int, to_epoch: int, ec_hash: bytes, signer: ReplicaId,
               key: SigningKey) -> Ready:
    unsigned = Ready(from_epoch, to_epoch, ec_hash, signer)
    return Ready(from_epoch, to_epoch, ec_hash, signer, key.sign(unsigned.signed_bytes()))


def make_done(cert: HandoverCertificate, signer: ReplicaId, key: SigningKey) -> Done:
    return Done(cert, signer, key.sign(b"DONE" + cert.encode()))


@dataclass(frozen=True)
class InnerLogEntry:
    epoch: int
    position: int
    content: Content

    @property
    def is_client(self) -> bool:
        return isinstance(self.content, Transaction)


@dataclass(frozen=True)
class OuterEntry:
    outer_position: int
    tx: Transaction
    source: tuple[int, int]

    def export_line(self) -> str:
        return f"{self.outer_position} {self.tx.id.hex()} {self.source[0]} {self.source[1]}"
