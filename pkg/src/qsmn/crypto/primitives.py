"""Symmetric building blocks: seed expansion, KDF, AEAD and the hybrid combiner.

All randomness in the library flows from caller-supplied seeds through
:func:`expand`; nothing here touches OS entropy.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

KEY_LEN = 32
NONCE_LEN = 12
TAG_LEN = 16

_KDF_DOMAIN = b"qsmn/kdf/v1"
_XOF_DOMAIN = b"qsmn/xof/v1"


class CryptoError(Exception):
    """Base class for crypto-suite failures."""


class AeadError(CryptoError):
    """Authentication failed while opening an envelope."""


def frame(items: Iterable[bytes]) -> bytes:
    """Unambiguous encoding of a byte-string list: count, then (len, data) pairs."""
    items = [bytes(x) for x in items]
    out = [struct.pack(">I", len(items))]
    for item in items:
        out.append(struct.pack(">Q", len(item)))
        out.append(item)
    return b"".join(out)


def expand(seed: bytes, label: str, length: int) -> bytes:
    """Deterministically stretch ``seed`` into ``length`` bytes under ``label``."""
    xof = hashlib.shake_256(_XOF_DOMAIN + frame([label.encode(), seed]))
    return xof.digest(length)


def child_seed(seed: bytes, *path: object) -> bytes:
    """Derive an independent 32-byte seed for a named sub-purpose."""
    return expand(seed, "child:" + "/".join(str(p) for p in path), 32)


@dataclass(frozen=True)
class SymmetricKey:
    value: bytes

    def __post_init__(self):
        if len(self.value) != KEY_LEN:
            raise CryptoError(f"symmetric key must be {KEY_LEN} bytes, got {len(self.value)}")

    def __bytes__(self) -> bytes:
        return self.value

    def __repr__(self) -> str:
        return f"SymmetricKey(<{hashlib.sha256(self.value).hexdigest()[:8]}>)"


def kdf(context_label: str, inputs: Sequence[bytes]) -> SymmetricKey:
    """Derive a 32-byte key from a label and an ordered list of inputs.

    Inputs are length-prefixed, so ``[x, y]`` and ``[x + y]`` never collide,
    and distinct labels give independent outputs.
    """
    if not context_label:
        raise ValueError("kdf label must be non-empty")
    material = _KDF_DOMAIN + frame([context_label.encode("utf-8"), frame(inputs)])
    return SymmetricKey(hashlib.sha3_256(material).digest())


@dataclass(frozen=True)
class AeadEnvelope:
    nonce: bytes
    ciphertext: bytes
    tag: bytes
    aad_digest: bytes

    def to_bytes(self) -> bytes:
        return frame([self.nonce, self.ciphertext, self.tag, self.aad_digest])

    @classmethod
    def from_bytes(cls, data: bytes) -> "AeadEnvelope":
        parts = unframe(data)
        if len(parts) != 4:
            raise CryptoError("envelope must have 4 parts")
        nonce, ct, tag, digest = parts
        if len(nonce) != NONCE_LEN or len(tag) != TAG_LEN or len(digest) != 32:
            raise CryptoError("malformed envelope")
        return cls(nonce, ct, tag, digest)


def unframe(data: bytes) -> list[bytes]:
    """Inverse of :func:`frame`; raises :class:`CryptoError` on malformed input."""
    try:
        (count,) = struct.unpack_from(">I", data, 0)
        pos = 4
        items = []
        for _ in range(count):
            (ln,) = struct.unpack_from(">Q", data, pos)
            pos += 8
            if pos + ln > len(data):
                raise CryptoError("truncated frame")
            items.append(bytes(data[pos:pos + ln]))
            pos += ln
    except struct.error as exc:
        raise CryptoError("truncated frame") from exc
    if pos != len(data):
        raise CryptoError("trailing bytes in frame")
    return items


def aead_seal(key: SymmetricKey, nonce: bytes, aad: bytes, plaintext: bytes) -> AeadEnvelope:
    if len(nonce) != NONCE_LEN:
        raise CryptoError(f"nonce must be {NONCE_LEN} bytes")
    sealed = AESGCM(key.value).encrypt(nonce, plaintext, aad)
    return AeadEnvelope(
        nonce=nonce,
        ciphertext=sealed[:-TAG_LEN],
        tag=sealed[-TAG_LEN:],
        aad_digest=hashlib.sha256(aad).digest(),
    )


def aead_open(key: SymmetricKey, env: AeadEnvelope, aad: bytes) -> bytes:
    if not hmac.compare_digest(hashlib.sha256(aad).digest(), env.aad_digest):
        raise AeadError("associated data does not match envelope")
    if len(env.nonce) != NONCE_LEN or len(env.tag) != TAG_LEN:
        raise AeadError("malformed envelope")
    try:
        return AESGCM(key.value).decrypt(env.nonce, env.ciphertext + env.tag, aad)
    except InvalidTag as exc:
        raise AeadError("tag mismatch") from exc


def hybrid_combine(classical_secret: bytes, pqc_secret: bytes) -> SymmetricKey:
    """Bind a classical and a post-quantum secret into one key (order matters)."""
    if len(classical_secret) != KEY_LEN or len(pqc_secret) != KEY_LEN:
        raise CryptoError("hybrid inputs must both be 32 bytes")
    return kdf("hybrid", [classical_secret, pqc_secret])


# INSECURE classical stub: hashed Diffie-Hellman in the multiplicative group
# mod the Mersenne prime 2^127 - 1. Simulation only; never use for real traffic.
STUB_DH_PRIME = (1 << 127) - 1
STUB_DH_GENERATOR = 3


def classical_stub_keypair(seed: bytes) -> tuple[int, int]:
    """Return ``(private, public)`` for the insecure classical DH stub."""
    priv = int.from_bytes(expand(seed, "stub-dh", 16), "big") % (STUB_DH_PRIME - 2) + 1
    return priv, pow(STUB_DH_GENERATOR, priv, STUB_DH_PRIME)


def classical_stub_shared(private: int, peer_public: int) -> bytes:
    if not 1 < peer_public < STUB_DH_PRIME - 1:
        raise CryptoError("stub DH public value out of range")
    shared = pow(peer_public, private, STUB_DH_PRIME)
    return hashlib.sha256(shared.to_bytes(16, "big")).digest()
