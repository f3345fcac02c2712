"""Lamport one-time signatures and a pre-provisioned key pool.

A key signs the SHA-256 digest of the message: bit ``i`` of the digest
selects which of the two secret preimages at position ``i`` is revealed.
The pool publishes a hash list of its public keys; verifiers pin that list
(the trust anchor) and accept a signer key only if it is on it.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass

from .primitives import CryptoError, expand, frame

DIGEST_BITS = 256
PREIMAGE_LEN = 32
SIGNATURE_LEN = DIGEST_BITS * PREIMAGE_LEN
PUBLIC_LEN = 2 * DIGEST_BITS * PREIMAGE_LEN


class OtsError(CryptoError):
    pass


class KeyReuseError(OtsError):
    """A one-time key was asked to sign a second message."""


class PoolExhausted(OtsError):
    pass


def _h(x: bytes) -> bytes:
    return hashlib.sha256(x).digest()


def _message_bits(message: bytes) -> list[int]:
    d = _h(message)
    return [(d[i // 8] >> (7 - i % 8)) & 1 for i in range(DIGEST_BITS)]


@dataclass(frozen=True)
class OtsPublicKey:
    hashes: tuple[tuple[bytes, ...], tuple[bytes, ...]]

    def __post_init__(self):
        if any(len(row) != DIGEST_BITS for row in self.hashes):
            raise OtsError("public key must commit to 512 hash values")

    def to_bytes(self) -> bytes:
        return b"".join(self.hashes[0]) + b"".join(self.hashes[1])

    @classmethod
    def from_bytes(cls, data: bytes) -> "OtsPublicKey":
        if len(data) != PUBLIC_LEN:
            raise OtsError("public key has wrong length")
        chunks = [data[i:i + PREIMAGE_LEN] for i in range(0, PUBLIC_LEN, PREIMAGE_LEN)]
        return cls((tuple(chunks[:DIGEST_BITS]), tuple(chunks[DIGEST_BITS:])))

    def digest(self) -> bytes:
        return _h(self.to_bytes())


@dataclass(frozen=True)
class OtsSignature:
    preimages: tuple[bytes, ...]

    def to_bytes(self) -> bytes:
        return b"".join(self.preimages)

    @classmethod
    def from_bytes(cls, data: bytes) -> "OtsSignature":
        if len(data) != SIGNATURE_LEN:
            raise OtsError(f"signature must be {SIGNATURE_LEN} bytes, got {len(data)}")
        return cls(tuple(data[i:i + PREIMAGE_LEN] for i in range(0, SIGNATURE_LEN, PREIMAGE_LEN)))


class OtsKeyPair:
    """Secret preimages plus their public hashes; signs exactly once."""

    def __init__(self, secret: tuple[tuple[bytes, ...], tuple[bytes, ...]]):
        self._secret = secret
        self.public = OtsPublicKey(tuple(tuple(_h(x) for x in row) for row in secret))
        self._used = False
        self._lock = threading.Lock()

    @classmethod
    def generate(cls, seed: bytes) -> "OtsKeyPair":
        raw = expand(seed, "ots/secret", PUBLIC_LEN)
        chunks = [raw[i:i + PREIMAGE_LEN] for i in range(0, PUBLIC_LEN, PREIMAGE_LEN)]
        return cls((tuple(chunks[:DIGEST_BITS]), tuple(chunks[DIGEST_BITS:])))

    @property
    def used(self) -> bool:
        return self._used

    def __repr__(self) -> str:
        return f"OtsKeyPair(public={self.public.digest().hex()[:12]}, used={self._used})"


def ots_sign(key: OtsKeyPair, message: bytes) -> OtsSignature:
    with key._lock:
        if key._used:
            raise KeyReuseError("one-time key already used")
        key._used = True
    bits = _message_bits(message)
    return OtsSignature(tuple(key._secret[b][i] for i, b in enumerate(bits)))


def ots_verify(public: OtsPublicKey, message: bytes, sig: OtsSignature) -> bool:
    if len(sig.preimages) != DIGEST_BITS or any(len(p) != PREIMAGE_LEN for p in sig.preimages):
        raise OtsError("signature length mismatch")
    bits = _message_bits(message)
    return all(_h(sig.preimages[i]) == public.hashes[b][i] for i, b in enumerate(bits))


@dataclass(frozen=True)
class TrustAnchor:
    """Pinned hash list of a signer pool's public keys."""

    digests: tuple[bytes, ...]

    @property
    def commitment(self) -> bytes:
        return _h(frame(self.digests))

    def admits(self, index: int, public: OtsPublicKey) -> bool:
        return 0 <= index < len(self.digests) and self.digests[index] == public.digest()


class OtsKeyPool:
    """Deterministic pool of one-time keys handed out in index order."""

    def __init__(self, seed: bytes, size: int):
        if size < 1:
            raise ValueError("pool size must be positive")
        self._keys = [OtsKeyPair.generate(expand(seed, f"ots/pool/{i}", 32)) for i in range(size)]
        self._next = 0
        self._lock = threading.Lock()
        self.anchor = TrustAnchor(tuple(k.public.digest() for k in self._keys))

    def __len__(self) -> int:
        return len(self._keys)

    @property
    def remaining(self) -> int:
        return len(self._keys) - self._next

    def take(self) -> tuple[int, OtsKeyPair]:
        with self._lock:
            if self._next >= len(self._keys):
                raise PoolExhausted("signer key pool exhausted")
            index = self._next
            self._next += 1
        return index, self._keys[index]
