"""Self-describing content identifiers.

A multihash is ``varint(code) ++ varint(len(digest)) ++ digest``; the textual
identifier is the base58 (Bitcoin alphabet) rendering of those bytes with no
prefix. With SHA-256 (code ``0x12``, 32-byte digest) every identifier starts
with ``"Qm"``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable

from .errors import CidError

SHA2_256 = 0x12

BASE58_ALPHABET = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz"
_B58_INDEX = {c: i for i, c in enumerate(BASE58_ALPHABET)}


@dataclass(frozen=True)
class HashFunction:
    code: int
    name: str
    digest_size: int
    fn: Callable[[bytes], bytes] = field(compare=False, repr=False)


_REGISTRY: dict[int, HashFunction] = {}


def register_hash(code: int, name: str, digest_size: int, fn: Callable[[bytes], bytes]) -> HashFunction:
    """Make another hash function available to the codec under ``code``."""
    if code < 0:
        raise ValueError("hash code must be non-negative")
    hf = HashFunction(code, name, digest_size, fn)
    _REGISTRY[code] = hf
    return hf


def unregister_hash(code: int) -> None:
    if code == SHA2_256:
        raise ValueError("SHA-256 cannot be unregistered")
    _REGISTRY.pop(code, None)


def hash_function(code: int) -> HashFunction:
    try:
        return _REGISTRY[code]
    except KeyError:
        raise CidError(f"unknown hash code 0x{code:x}", kind="unknown-code") from None


register_hash(SHA2_256, "sha2-256", 32, lambda b: hashlib.sha256(b).digest())


# -- varint -----------------------------------------------------------------

def varint_encode(n: int) -> bytes:
    """Unsigned LEB128."""
    if n < 0:
        raise ValueError("varint must be non-negative")
    out = bytearray()
    while True:
        byte = n & 0x7F
        n >>= 7
        if n:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def varint_decode(buf: bytes, offset: int = 0) -> tuple[int, int]:
    """Decode one varint at ``offset``; returns ``(value, next_offset)``."""
    value = 0
    shift = 0
    pos = offset
    while True:
        if pos >= len(buf):
            raise CidError("truncated varint", kind="truncated-multihash")
        byte = buf[pos]
        pos += 1
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            # reject non-minimal encodings so every value has one byte form
            if byte == 0 and pos - offset > 1:
                raise CidError("non-minimal varint", kind="truncated-multihash")
            return value, pos
        shift += 7
        if shift > 63:
            raise CidError("varint too long", kind="truncated-multihash")


# -- base58 -----------------------------------------------------------------

def base58_encode(data: bytes) -> str:
    zeros = len(data) - len(data.lstrip(b"\x00"))
    n = int.from_bytes(data, "big")
    chars = []
    while n:
        n, rem = divmod(n, 58)
        chars.append(BASE58_ALPHABET[rem])
    return "1" * zeros + "".join(reversed(chars))


def base58_decode(text: str) -> bytes:
    n = 0
    for ch in text:
        try:
            n = n * 58 + _B58_INDEX[ch]
        except KeyError:
            raise CidError(f"invalid base58 character {ch!r}", kind="invalid-character") from None
    zeros = len(text) - len(text.lstrip("1"))
    body = n.to_bytes((n.bit_length() + 7) // 8, "big") if n else b""
    return b"\x00" * zeros + body


# -- multihash --------------------------------------------------------------

def multihash_encode(code: int, digest: bytes) -> bytes:
    hf = hash_function(code)
    if len(digest) != hf.digest_size:
        raise CidError(
            f"{hf.name} digest must be {hf.digest_size} bytes, got {len(digest)}",
            kind="length-mismatch",
        )
    return varint_encode(code) + varint_encode(len(digest)) + digest


def multihash_decode(buf: bytes) -> tuple[int, int, bytes]:
    """Parse multihash bytes into ``(code, length, digest)``."""
    if not buf:
        raise CidError("empty multihash", kind="truncated-multihash")
    code, pos = varint_decode(buf)
    length, pos = varint_decode(buf, pos)
    hf = hash_function(code)
    digest = buf[pos:]
    if len(digest) < length:
        raise CidError("multihash digest truncated", kind="truncated-multihash")
    if len(digest) > length:
        raise CidError("trailing bytes after multihash digest", kind="length-mismatch")
    if length != hf.digest_size:
        raise CidError(f"{hf.name} digest must be {hf.digest_size} bytes", kind="length-mismatch")
    return code, length, bytes(digest)


@dataclass(frozen=True, order=True)
class Cid:
    """Content identifier wrapping validated multihash bytes."""

    multihash: bytes

    def __post_init__(self):
        multihash_decode(self.multihash)

    @property
    def code(self) -> int:
        return varint_decode(self.multihash)[0]

    @property
    def digest(self) -> bytes:
        return multihash_decode(self.multihash)[2]

    @property
    def text(self) -> str:
        return base58_encode(self.multihash)

    def __str__(self) -> str:
        return self.text

    def __repr__(self) -> str:
        return f"Cid({self.text})"


def cid_from_bytes(data: bytes, code: int = SHA2_256) -> Cid:
    hf = hash_function(code)
    return Cid(multihash_encode(code, hf.fn(bytes(data))))


def cid_parse(text: str) -> Cid:
    if not isinstance(text, str):
        raise CidError("identifier text must be a string")
    return Cid(base58_decode(text))


def cid_verify(data: bytes, cid: Cid) -> bool:
    try:
        return cid_from_bytes(data, cid.code) == cid
    except CidError:
        return False
