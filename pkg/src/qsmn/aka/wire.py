"""Tag-length-value codec for handshake, forwarding and application messages.

A message is one type byte followed by its fields in a fixed order, each
as a 2-byte big-endian length and the raw value. Optional fields are
present with length zero. Decoding is strict: wrong field count, short
buffers and trailing bytes are all errors.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Union

from ..crypto.primitives import frame

MAX_FIELD = 0xFFFF
NONCE_LEN = 16
RAND_LEN = 16
RES_LEN = 32

FLAG_CONCEALED = 0x01
FLAG_HYBRID = 0x02


class WireError(ValueError):
    pass


class MsgType(IntEnum):
    AUTH_REQUEST = 0x01
    AUTH_CHALLENGE = 0x02
    AUTH_RESPONSE = 0x03
    KEY_FORWARD = 0x04
    APP_DATA = 0x05
    AUTH_REJECT = 0x06


STEP_NAMES = {
    MsgType.AUTH_REQUEST: "AUTH Request",
    MsgType.AUTH_CHALLENGE: "Authentication Challenge",
    MsgType.AUTH_RESPONSE: "Authentication Response",
    MsgType.KEY_FORWARD: "Key Forward",
    MsgType.APP_DATA: "Application Data",
    MsgType.AUTH_REJECT: "Authentication Reject",
}


def encode_tlv(msg_type: MsgType, fields: list[bytes]) -> bytes:
    out = [bytes([int(msg_type)])]
    for f in fields:
        if len(f) > MAX_FIELD:
            raise WireError(f"field of {len(f)} bytes exceeds {MAX_FIELD}")
        out.append(struct.pack(">H", len(f)))
        out.append(bytes(f))
    return b"".join(out)


def decode_tlv(data: bytes) -> tuple[MsgType, list[bytes]]:
    if not data:
        raise WireError("empty message")
    try:
        msg_type = MsgType(data[0])
    except ValueError:
        raise WireError(f"unknown message type {data[0]:#04x}") from None
    fields, pos = [], 1
    while pos < len(data):
        if pos + 2 > len(data):
            raise WireError("truncated length prefix")
        (ln,) = struct.unpack_from(">H", data, pos)
        pos += 2
        if pos + ln > len(data):
            raise WireError("truncated field")
        fields.append(bytes(data[pos:pos + ln]))
        pos += ln
    return msg_type, fields


def _expect(fields: list[bytes], names: tuple[str, ...], what: str) -> None:
    if len(fields) != len(names):
        raise WireError(f"{what} needs {len(names)} fields, got {len(fields)}")


def _fixed(value: bytes, size: int, name: str) -> bytes:
    if len(value) != size:
        raise WireError(f"{name} must be {size} bytes")
    return value


@dataclass(frozen=True)
class ConcealedIdentity:
    """Permanent identifier sealed under a fresh encapsulation to the home key."""

    kem_ciphertext: bytes
    sealed_supi: bytes


@dataclass(frozen=True)
class AuthRequest:
    ue_nonce: bytes
    identity: Union[ConcealedIdentity, bytes]
    hybrid: bool = False

    FIELDS = ("flags", "ue_nonce", "identity_a", "identity_b")

    @property
    def concealed(self) -> bool:
        return isinstance(self.identity, ConcealedIdentity)

    def fields(self) -> list[bytes]:
        flags = (FLAG_CONCEALED if self.concealed else 0) | (FLAG_HYBRID if self.hybrid else 0)
        if self.concealed:
            ident = [self.identity.kem_ciphertext, self.identity.sealed_supi]
        else:
            ident = [self.identity, b""]
        return [bytes([flags]), self.ue_nonce, *ident]

    @classmethod
    def from_fields(cls, fields: list[bytes]) -> "AuthRequest":
        _expect(fields, cls.FIELDS, "AuthRequest")
        flags, nonce, a, b = fields
        if len(flags) != 1 or flags[0] & ~(FLAG_CONCEALED | FLAG_HYBRID):
            raise WireError("bad request flags")
        if flags[0] & FLAG_CONCEALED:
            identity: Union[ConcealedIdentity, bytes] = ConcealedIdentity(a, b)
        elif b:
            raise WireError("plain identity carries a second field")
        else:
            identity = a
        return cls(_fixed(nonce, NONCE_LEN, "ue_nonce"), identity, bool(flags[0] & FLAG_HYBRID))


@dataclass(frozen=True)
class AuthChallenge:
    rand: bytes
    ue_nonce: bytes
    kem_public_key: bytes
    ots_index: int
    ots_public: bytes
    signature: bytes
    classical_public: bytes = b""

    FIELDS = ("rand", "ue_nonce", "kem_public_key", "ots_index", "ots_public",
              "signature", "classical_public")

    def signed_payload(self) -> bytes:
        return frame([b"aka/challenge", self.rand, self.kem_public_key, self.ue_nonce,
                      self.classical_public, struct.pack(">I", self.ots_index)])

    def fields(self) -> list[bytes]:
        return [self.rand, self.ue_nonce, self.kem_public_key, struct.pack(">I", self.ots_index),
                self.ots_public, self.signature, self.classical_public]

    @classmethod
    def from_fields(cls, fields: list[bytes]) -> "AuthChallenge":
        _expect(fields, cls.FIELDS, "AuthChallenge")
        rand, nonce, pk, idx, ots_pub, sig, cpub = fields
        return cls(_fixed(rand, RAND_LEN, "rand"), _fixed(nonce, NONCE_LEN, "ue_nonce"), pk,
                   struct.unpack(">I", _fixed(idx, 4, "ots_index"))[0], ots_pub, sig, cpub)


@dataclass(frozen=True)
class AuthResponse:
    ue_nonce: bytes
    res: bytes
    kem_ciphertext: bytes
    classical_public: bytes = b""
    binding: bytes = b""

    FIELDS = ("ue_nonce", "res", "kem_ciphertext", "classical_public", "binding")

    def fields(self) -> list[bytes]:
        return [self.ue_nonce, self.res, self.kem_ciphertext, self.classical_public, self.binding]

    @classmethod
    def from_fields(cls, fields: list[bytes]) -> "AuthResponse":
        _expect(fields, cls.FIELDS, "AuthResponse")
        nonce, res, ct, cpub, binding = fields
        return cls(_fixed(nonce, NONCE_LEN, "ue_nonce"), _fixed(res, RES_LEN, "res"), ct, cpub,
                   _fixed(binding, RES_LEN, "binding"))


@dataclass(frozen=True)
class AuthReject:
    ue_nonce: bytes
    reason: str

    FIELDS = ("ue_nonce", "reason")

    def fields(self) -> list[bytes]:
        return [self.ue_nonce, self.reason.encode()]

    @classmethod
    def from_fields(cls, fields: list[bytes]) -> "AuthReject":
        _expect(fields, cls.FIELDS, "AuthReject")
        return cls(fields[0], fields[1].decode("utf-8", "replace"))


@dataclass(frozen=True)
class KeyForward:
    """Core to BS delivery of a session key.

    ``payload`` is an AEAD envelope under a QKD key when ``status`` is
    ``DELIVERED`` and the raw key on a link flagged ``UNPROTECTED``.
    """

    ue_id: str
    bs_id: str
    key_id: str
    status: str
    qkd_key_id: str
    payload: bytes

    FIELDS = ("ue_id", "bs_id", "key_id", "status", "qkd_key_id", "payload")

    def fields(self) -> list[bytes]:
        return [s.encode() for s in (self.ue_id, self.bs_id, self.key_id, self.status,
                                     self.qkd_key_id)] + [self.payload]

    @classmethod
    def from_fields(cls, fields: list[bytes]) -> "KeyForward":
        _expect(fields, cls.FIELDS, "KeyForward")
        text = [f.decode("utf-8", "replace") for f in fields[:5]]
        return cls(*text, fields[5])


@dataclass(frozen=True)
class AppData:
    segment: str
    key_id: str
    envelope: bytes

    FIELDS = ("segment", "key_id", "envelope")

    def fields(self) -> list[bytes]:
        return [self.segment.encode(), self.key_id.encode(), self.envelope]

    @classmethod
    def from_fields(cls, fields: list[bytes]) -> "AppData":
        _expect(fields, cls.FIELDS, "AppData")
        return cls(fields[0].decode("utf-8", "replace"), fields[1].decode("utf-8", "replace"),
                   fields[2])


Message = Union[AuthRequest, AuthChallenge, AuthResponse, AuthReject, KeyForward, AppData]

_TYPES: dict[type, MsgType] = {
    AuthRequest: MsgType.AUTH_REQUEST,
    AuthChallenge: MsgType.AUTH_CHALLENGE,
    AuthResponse: MsgType.AUTH_RESPONSE,
    KeyForward: MsgType.KEY_FORWARD,
    AppData: MsgType.APP_DATA,
    AuthReject: MsgType.AUTH_REJECT,
}
_CLASSES = {v: k for k, v in _TYPES.items()}


def message_type(msg: Message) -> MsgType:
    return _TYPES[type(msg)]


def encode_message(msg: Message) -> bytes:
    return encode_tlv(message_type(msg), msg.fields())


def decode_message(data: bytes) -> Message:
    msg_type, fields = decode_tlv(data)
    return _CLASSES[msg_type].from_fields(fields)


def flip_field_bit(raw: bytes, field_name: str) -> bytes:
    """Flip the low bit of the first byte of one bytes-valued field (tamper helper)."""
    msg = decode_message(raw)
    value = bytearray(getattr(msg, field_name))
    value[0] ^= 1
    return encode_message(replace(msg, **{field_name: bytes(value)}))


def describe(data: bytes) -> list[tuple[str, bytes]]:
    """Field names paired with raw values, for annotated traces."""
    msg_type, fields = decode_tlv(data)
    names = _CLASSES[msg_type].FIELDS
    _expect(fields, names, STEP_NAMES[msg_type])
    return list(zip(names, fields))
