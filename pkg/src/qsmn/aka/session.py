"""Per-UE session keys and the AEAD channel they protect.

Each party holds its own :class:`SessionKeyContext`. Nonces are a 12-byte
big-endian send counter and the receiver keeps a strict high-water mark,
so any envelope at or below the last accepted counter is a replay.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

from ..crypto.primitives import (
    NONCE_LEN,
    AeadEnvelope,
    SymmetricKey,
    aead_open,
    aead_seal,
    frame,
    kdf,
)

DEFAULT_MAX_MESSAGES = 1 << 32


class SessionError(Exception):
    pass


class ReplayError(SessionError):
    pass


class RekeyRequired(SessionError):
    """Counter exhausted or context invalidated; run a fresh handshake."""


def subscriber_label(supi: bytes) -> str:
    """Pseudonymous per-subscriber label; the permanent id never goes on the wire."""
    return hashlib.sha256(b"qsmn/ue-label" + supi).hexdigest()[:12]


def session_key_id(key: SymmetricKey) -> str:
    return kdf("key-id", [key.value]).value[:8].hex()


@dataclass(eq=False)
class SessionKeyContext:
    session_key: SymmetricKey
    key_id: str
    ue_id: str
    serving_bs: Optional[str] = None
    established_at: int = 0
    max_messages: int = DEFAULT_MAX_MESSAGES
    send_counter: int = 0
    recv_high_water: int = -1
    valid: bool = True
    derivation: tuple[str, ...] = field(default=(), repr=False)

    def __repr__(self) -> str:
        return (f"SessionKeyContext(key_id={self.key_id!r}, ue_id={self.ue_id!r}, "
                f"serving_bs={self.serving_bs!r}, valid={self.valid})")

    def same_key(self, other: "SessionKeyContext") -> bool:
        return (self.session_key == other.session_key and self.key_id == other.key_id
                and self.ue_id == other.ue_id)

    def peer_copy(self, serving_bs: Optional[str] = None) -> "SessionKeyContext":
        """Fresh counters over the same key, for the other end of the channel."""
        return SessionKeyContext(self.session_key, self.key_id, self.ue_id,
                                 serving_bs if serving_bs is not None else self.serving_bs,
                                 self.established_at, self.max_messages)

    def invalidate(self) -> None:
        self.valid = False

    @property
    def aad(self) -> bytes:
        return frame([b"aka/app", self.ue_id.encode(), self.key_id.encode()])


def encrypt_app_message(ctx: SessionKeyContext, payload: bytes) -> AeadEnvelope:
    if not ctx.valid:
        raise RekeyRequired("session context invalidated")
    if ctx.send_counter >= ctx.max_messages:
        raise RekeyRequired("nonce counter exhausted")
    nonce = ctx.send_counter.to_bytes(NONCE_LEN, "big")
    env = aead_seal(ctx.session_key, nonce, ctx.aad, payload)
    ctx.send_counter += 1
    return env


def decrypt_app_message(ctx: SessionKeyContext, env: AeadEnvelope) -> bytes:
    if not ctx.valid:
        raise RekeyRequired("session context invalidated")
    counter = int.from_bytes(env.nonce, "big")
    if counter <= ctx.recv_high_water:
        raise ReplayError(f"counter {counter} at or below high-water mark {ctx.recv_high_water}")
    payload = aead_open(ctx.session_key, env, ctx.aad)
    ctx.recv_high_water = counter
    return payload
