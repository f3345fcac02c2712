"""Desk-scale lattice KEM over Z_q[x]/(x^n + 1).

Regev-style encryption of an n-bit message with one secret vector ``s``;
the public matrix ``A`` is the negacyclic matrix of a polynomial expanded
from a seed, so ``b = A.s + e`` holds as an ordinary matrix product. A
Fujisaki-Okamoto transform with implicit rejection turns the encryption
scheme into a KEM.

Byte layouts (all integers little-endian)::

    public key   params_id:u32 | rho[32] | b[n]:u16
    secret key   params_id:u32 | s[n]:u16 (s mod q) | z[32] | public key
    ciphertext   params_id:u32 | u[n]:u16 | v[n]:u16 (v holds v_bits-bit codes)
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from .primitives import CryptoError, expand, frame, kdf


class KemError(CryptoError):
    """Malformed keys, ciphertexts or seeds."""


class ParamsMismatch(KemError):
    """Ciphertext and key belong to different parameter sets."""


def _is_prime(x: int) -> bool:
    if x < 2:
        return False
    i = 2
    while i * i <= x:
        if x % i == 0:
            return False
        i += 1
    return True


@dataclass(frozen=True)
class LweParameters:
    name: str
    n: int
    q: int
    eta: int
    msg_bits: int
    seed_len: int = 32
    v_bits: int = 4
    params_id: int = field(init=False)

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("n must be positive")
        if self.q % 2 == 0 or not _is_prime(self.q):
            raise ValueError("q must be an odd prime")
        if self.q >= 1 << 16:
            raise ValueError("q must fit 16-bit serialization")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.msg_bits != self.n:
            raise ValueError("msg_bits must equal n (one bit per coefficient)")
        if not 1 <= self.v_bits <= 15:
            raise ValueError("v_bits out of range")
        ident = hashlib.sha256(
            struct.pack("<6I", self.n, self.q, self.eta, self.msg_bits, self.seed_len, self.v_bits)
        ).digest()
        object.__setattr__(self, "params_id", int.from_bytes(ident[:4], "little"))
        _REGISTRY.setdefault(self.params_id, self)

    @property
    def msg_bytes(self) -> int:
        return (self.msg_bits + 7) // 8


_REGISTRY: dict[int, LweParameters] = {}

LWE_256 = LweParameters("lwe-256", n=256, q=3329, eta=2, msg_bits=256)
TOY_4 = LweParameters("toy-4", n=4, q=17, eta=1, msg_bits=4)

PARAMETER_SETS = {p.name: p for p in (LWE_256, TOY_4)}


def params_by_id(params_id: int) -> LweParameters:
    try:
        return _REGISTRY[params_id]
    except KeyError:
        raise KemError(f"unknown params_id {params_id:#010x}") from None


# ---- sampling ---------------------------------------------------------------

def cbd(stream: bytes, eta: int, count: int) -> np.ndarray:
    """Centered binomial samples in [-eta, eta] from ``2*eta*count`` stream bits."""
    if eta == 0:
        return np.zeros(count, dtype=np.int64)
    need = (2 * eta * count + 7) // 8
    if len(stream) < need:
        raise KemError("noise stream too short")
    bits = np.unpackbits(np.frombuffer(stream[:need], dtype=np.uint8), bitorder="little")
    bits = bits[: 2 * eta * count].reshape(count, 2, eta).astype(np.int64)
    return bits[:, 0, :].sum(axis=1) - bits[:, 1, :].sum(axis=1)


def _noise(seed: bytes, label: str, params: LweParameters) -> np.ndarray:
    return cbd(expand(seed, label, (2 * params.eta * params.n + 7) // 8 or 1), params.eta, params.n)


def uniform_poly(rho: bytes, params: LweParameters) -> np.ndarray:
    """Rejection-sample ``n`` coefficients uniform in [0, q) from ``rho``."""
    mask = (1 << params.q.bit_length()) - 1
    out = np.empty(0, dtype=np.int64)
    chunk = 2 * params.n + 64
    block = 0
    while out.shape[0] < params.n:
        raw = expand(rho, f"matrix/{block}", chunk)
        cand = np.frombuffer(raw, dtype="<u2").astype(np.int64) & mask
        out = np.concatenate([out, cand[cand < params.q]])
        block += 1
    return out[: params.n]


def negacyclic_matrix(a: np.ndarray, q: int) -> np.ndarray:
    """Matrix M with ``M @ s == a * s`` in Z_q[x]/(x^n + 1)."""
    n = len(a)
    m = np.empty((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(n):
            m[i, j] = a[i - j] if i >= j else -a[n + i - j]
    return m % q


def expand_public_matrix(params: LweParameters, rho: bytes) -> np.ndarray:
    return negacyclic_matrix(uniform_poly(rho, params), params.q)


# ---- coefficient coding -----------------------------------------------------

def compress(x: np.ndarray, d: int, q: int) -> np.ndarray:
    """round(2^d * x / q) mod 2^d, exact integer arithmetic."""
    x = np.asarray(x, dtype=np.int64) % q
    return ((x << (d + 1)) + q) // (2 * q) % (1 << d)


def decompress(y: np.ndarray, d: int, q: int) -> np.ndarray:
    """round(q * y / 2^d)."""
    y = np.asarray(y, dtype=np.int64)
    return (2 * q * y + (1 << d)) >> (d + 1)


def bytes_to_bits(data: bytes, nbits: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")[:nbits].astype(np.int64)


def bits_to_bytes(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little").tobytes()


def _pack(coeffs) -> bytes:
    return np.asarray(coeffs, dtype="<u2").tobytes()


def _unpack(data: bytes, n: int) -> tuple[int, ...]:
    if len(data) != 2 * n:
        raise KemError("coefficient block has wrong length")
    return tuple(int(c) for c in np.frombuffer(data, dtype="<u2"))


# ---- key and ciphertext types ------------------------------------------------

@dataclass(frozen=True)
class KemPublicKey:
    params: LweParameters
    rho: bytes
    b: tuple[int, ...]

    def __post_init__(self):
        if len(self.rho) != 32 or len(self.b) != self.params.n:
            raise KemError("malformed public key")
        if any(not 0 <= c < self.params.q for c in self.b):
            raise KemError("public key coefficient out of range")

    def to_bytes(self) -> bytes:
        return struct.pack("<I", self.params.params_id) + self.rho + _pack(self.b)

    @classmethod
    def from_bytes(cls, data: bytes) -> "KemPublicKey":
        if len(data) < 36:
            raise KemError("public key too short")
        params = params_by_id(struct.unpack_from("<I", data)[0])
        return cls(params, bytes(data[4:36]), _unpack(data[36:], params.n))

    def digest(self) -> bytes:
        return hashlib.sha3_256(self.to_bytes()).digest()


@dataclass(frozen=True, repr=False)
class KemSecretKey:
    params: LweParameters
    s: tuple[int, ...]
    z: bytes
    public_key: KemPublicKey

    def __post_init__(self):
        if len(self.s) != self.params.n or len(self.z) != 32:
            raise KemError("malformed secret key")
        if any(abs(c) > self.params.eta for c in self.s):
            raise KemError("secret coefficient outside [-eta, eta]")

    def __repr__(self) -> str:
        return f"KemSecretKey(params={self.params.name}, <redacted>)"

    def to_bytes(self) -> bytes:
        q = self.params.q
        return (struct.pack("<I", self.params.params_id) + _pack([c % q for c in self.s])
                + self.z + self.public_key.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "KemSecretKey":
        if len(data) < 4:
            raise KemError("secret key too short")
        params = params_by_id(struct.unpack_from("<I", data)[0])
        n, q = params.n, params.q
        end_s = 4 + 2 * n
        raw = _unpack(data[4:end_s], n)
        s = tuple(c - q if c > q // 2 else c for c in raw)
        pk = KemPublicKey.from_bytes(data[end_s + 32:])
        if pk.params != params:
            raise ParamsMismatch("embedded public key uses other params")
        return cls(params, s, bytes(data[end_s:end_s + 32]), pk)


@dataclass(frozen=True)
class KemKeyPair:
    public_key: KemPublicKey
    secret_key: KemSecretKey

    @property
    def params(self) -> LweParameters:
        return self.public_key.params

    def to_bytes(self) -> bytes:
        return self.secret_key.to_bytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "KemKeyPair":
        sk = KemSecretKey.from_bytes(data)
        return cls(sk.public_key, sk)


@dataclass(frozen=True)
class KemCiphertext:
    params_id: int
    u: tuple[int, ...]
    v: tuple[int, ...]

    def to_bytes(self) -> bytes:
        return struct.pack("<I", self.params_id) + _pack(self.u) + _pack(self.v)

    @classmethod
    def from_bytes(cls, data: bytes) -> "KemCiphertext":
        if len(data) < 4:
            raise KemError("ciphertext too short")
        params = params_by_id(struct.unpack_from("<I", data)[0])
        n = params.n
        if len(data) != 4 + 4 * n:
            raise KemError("ciphertext has wrong length")
        u = _unpack(data[4:4 + 2 * n], n)
        v = _unpack(data[4 + 2 * n:], n)
        if any(c >= params.q for c in u) or any(c >= 1 << params.v_bits for c in v):
            raise KemError("ciphertext coefficient out of range")
        return cls(params.params_id, u, v)


@dataclass(frozen=True)
class SharedSecret:
    value: bytes

    def __post_init__(self):
        if len(self.value) != 32:
            raise KemError("shared secret must be 32 bytes")

    def __repr__(self) -> str:
        return f"SharedSecret(<{hashlib.sha256(self.value).hexdigest()[:8]}>)"


# ---- core scheme -------------------------------------------------------------

def kem_keygen(params: LweParameters, seed: bytes) -> KemKeyPair:
    if len(seed) != params.seed_len:
        raise KemError(f"seed must be {params.seed_len} bytes, got {len(seed)}")
    material = expand(seed, "kem/keygen", 96)
    rho, sigma, z = material[:32], material[32:64], material[64:]
    a = uniform_poly(rho, params)
    s = _noise(sigma, "kem/s", params)
    e = _noise(sigma, "kem/e", params)
    b = (kernels.negacyclic_mul(a, s, params.q) + e) % params.q
    pk = KemPublicKey(params, rho, tuple(int(c) for c in b))
    sk = KemSecretKey(params, tuple(int(c) for c in s), z, pk)
    return KemKeyPair(pk, sk)


def lwe_encrypt(pk: KemPublicKey, message_bits: np.ndarray, coins: bytes) -> KemCiphertext:
    """u = A.r + e1, v = compress(b.r + e2 + m * round(q/2))."""
    params = pk.params
    q = params.q
    a = uniform_poly(pk.rho, params)
    r = _noise(coins, "enc/r", params)
    e1 = _noise(coins, "enc/e1", params)
    e2 = _noise(coins, "enc/e2", params)
    b = np.asarray(pk.b, dtype=np.int64)
    u = (kernels.negacyclic_mul(a, r, q) + e1) % q
    half = (q + 1) // 2
    v_full = (kernels.negacyclic_mul(b, r, q) + e2 + np.asarray(message_bits, dtype=np.int64) * half) % q
    v = compress(v_full, params.v_bits, q)
    return KemCiphertext(params.params_id, tuple(int(c) for c in u), tuple(int(c) for c in v))


def lwe_decrypt(sk: KemSecretKey, ct: KemCiphertext) -> np.ndarray:
    params = sk.params
    q = params.q
    w = (decompress(np.asarray(ct.v), params.v_bits, q)
         - kernels.negacyclic_mul(np.asarray(sk.s), np.asarray(ct.u), q)) % q
    return compress(w, 1, q)


def _coins(message: bytes, pk: KemPublicKey) -> bytes:
    return hashlib.sha3_256(frame([b"kem/coins", message, pk.digest()])).digest()


def _ct_hash(ct: KemCiphertext) -> bytes:
    return hashlib.sha3_256(ct.to_bytes()).digest()


def kem_encapsulate(pk: KemPublicKey, seed: bytes) -> tuple[KemCiphertext, SharedSecret]:
    if not isinstance(pk, KemPublicKey):
        raise KemError("malformed public key")
    params = pk.params
    m_bits = bytes_to_bits(expand(seed, "kem/message", params.msg_bytes), params.msg_bits)
    m = bits_to_bytes(m_bits)
    ct = lwe_encrypt(pk, m_bits, _coins(m, pk))
    return ct, SharedSecret(kdf("kem/shared", [m, _ct_hash(ct)]).value)


def kem_decapsulate(sk: KemSecretKey, ct: KemCiphertext) -> SharedSecret:
    """Recover the shared secret; invalid ciphertexts get a pseudorandom one."""
    if ct.params_id != sk.params.params_id:
        raise ParamsMismatch(
            f"ciphertext params {ct.params_id:#010x} != key params {sk.params.params_id:#010x}")
    m_bits = lwe_decrypt(sk, ct)
    m = bits_to_bytes(m_bits)
    check = lwe_encrypt(sk.public_key, m_bits, _coins(m, sk.public_key))
    h = _ct_hash(ct)
    if check == ct:
        return SharedSecret(kdf("kem/shared", [m, h]).value)
    return SharedSecret(kdf("kem/reject", [sk.z, h]).value)
