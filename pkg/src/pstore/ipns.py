"""Peer identities and signed, sequenced name records.

Identity keys are Ed25519. A peer id is SHA-256 of the raw public key, and
the name a peer publishes under is the base58 multihash of that same digest,
so each key pair owns exactly one name.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

from cryptography.exceptions import InvalidSignature as _BadSig
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

from .cid import Cid, cid_from_bytes, cid_parse
from .errors import CidError, InvalidPath

_RAW = dict(encoding=serialization.Encoding.Raw, format=serialization.PublicFormat.Raw)


class KeyPair:
    def __init__(self, private: Ed25519PrivateKey):
        self.private = private
        self.public_bytes = private.public_key().public_bytes(**_RAW)

    @classmethod
    def from_seed(cls, seed: bytes) -> "KeyPair":
        if len(seed) != 32:
            raise ValueError("Ed25519 seeds are 32 bytes")
        return cls(Ed25519PrivateKey.from_private_bytes(seed))

    @classmethod
    def generate(cls) -> "KeyPair":
        return cls(Ed25519PrivateKey.generate())

    def seed_bytes(self) -> bytes:
        return self.private.private_bytes(
            serialization.Encoding.Raw, serialization.PrivateFormat.Raw, serialization.NoEncryption()
        )

    @property
    def name(self) -> Cid:
        return name_for_public_key(self.public_bytes)

    def sign(self, payload: bytes) -> bytes:
        return self.private.sign(payload)


def name_for_public_key(public_key: bytes) -> Cid:
    return cid_from_bytes(public_key)


def parse_name(text: str) -> Cid:
    try:
        return cid_parse(text)
    except CidError as exc:
        raise InvalidPath(f"bad name {text!r}: {exc}") from None


@dataclass(frozen=True)
class IpnsRecord:
    name: str
    value: str
    sequence: int
    public_key: bytes
    signature: bytes
    expires_at: float

    @staticmethod
    def signing_payload(value: str, sequence: int) -> bytes:
        return b"pstore-ipns\x00" + value.encode("utf-8") + b"\x00" + struct.pack(">Q", sequence)

    @classmethod
    def create(cls, keys: KeyPair, value: str, sequence: int, expires_at: float) -> "IpnsRecord":
        sig = keys.sign(cls.signing_payload(value, sequence))
        return cls(keys.name.text, value, sequence, keys.public_bytes, sig, expires_at)

    def verify(self) -> bool:
        """Signature checks out and the key actually owns ``name``."""
        try:
            if name_for_public_key(self.public_key).text != self.name:
                return False
            Ed25519PublicKey.from_public_bytes(self.public_key).verify(
                self.signature, self.signing_payload(self.value, self.sequence)
            )
            return True
        except (_BadSig, ValueError):
            return False


def better_record(new: IpnsRecord, old: Optional[IpnsRecord], now: float) -> bool:
    """Store-side acceptance: valid, unexpired and strictly newer than what is held."""
    if not isinstance(new, IpnsRecord) or new.expires_at <= now or not new.verify():
        return False
    if old is None or old.expires_at <= now:
        return True
    if new.sequence != old.sequence:
        return new.sequence > old.sequence
    return new.expires_at > old.expires_at
