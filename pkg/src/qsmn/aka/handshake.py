"""UE and core state machines for the PQC-augmented challenge-response handshake.

Flow: the UE sends an AuthRequest carrying its (optionally concealed)
identity and a fresh nonce. The core answers with a RAND, a fresh
ephemeral KEM public key and a one-time signature over both plus the UE
nonce. The UE checks the signer against its pinned trust anchor,
encapsulates to the ephemeral key and returns RES with the ciphertext.
Both ends then derive

    session = kdf("session", [K, RAND, ss])

where ``ss`` is the KEM secret, or ``hybrid_combine(dh, ss)`` in hybrid
mode. The UE side is a pure function of its state; the core keeps a
per-nonce table because it serves many subscribers at once.
"""

from __future__ import annotations

import hmac
import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Optional, Union

from ..crypto import lwe
from ..crypto.ots import (
    OtsError,
    OtsKeyPool,
    OtsPublicKey,
    OtsSignature,
    PoolExhausted,
    TrustAnchor,
    ots_sign,
    ots_verify,
)
from ..crypto.primitives import (
    AeadEnvelope,
    AeadError,
    CryptoError,
    SymmetricKey,
    aead_open,
    aead_seal,
    child_seed,
    classical_stub_keypair,
    classical_stub_shared,
    expand,
    frame,
    hybrid_combine,
    kdf,
)
from .session import SessionKeyContext, session_key_id, subscriber_label
from .wire import (
    NONCE_LEN,
    RAND_LEN,
    AuthChallenge,
    AuthReject,
    AuthRequest,
    AuthResponse,
    ConcealedIdentity,
    KeyForward,
    Message,
    WireError,
    decode_message,
    encode_message,
)

log = logging.getLogger(__name__)

_SUCI_AAD = b"aka/suci"
_ZERO_NONCE = bytes(12)


class HandshakeError(Exception):
    pass


class ProtocolStateError(HandshakeError):
    """Message arrived in a state that does not accept it."""


class ForwardingError(HandshakeError):
    pass


@dataclass(frozen=True, repr=False)
class UeIdentity:
    supi: bytes
    master_key: bytes

    def __post_init__(self):
        if len(self.master_key) != 32:
            raise ValueError("master key must be 32 bytes")

    @property
    def ue_id(self) -> str:
        return subscriber_label(self.supi)

    def __repr__(self) -> str:
        return f"UeIdentity(ue_id={self.ue_id!r})"


def _classical_bytes(public: int) -> bytes:
    return public.to_bytes(16, "big")


def _derive_session(master_key: bytes, rand: bytes, kem_secret: bytes,
                    classical_secret: Optional[bytes]) -> tuple[SymmetricKey, tuple[str, ...]]:
    if classical_secret is None:
        return (kdf("session", [master_key, rand, kem_secret]),
                ("ss = KEM shared secret", 'session = kdf("session", [K, RAND, ss])'))
    mixed = hybrid_combine(classical_secret, kem_secret).value
    return (kdf("session", [master_key, rand, mixed]),
            ("ss = KEM shared secret", "dh = classical stub DH secret",
             'hyb = hybrid_combine(dh, ss) = kdf("hybrid", [dh, ss])',
             'session = kdf("session", [K, RAND, hyb])'))


def compute_res(master_key: bytes, rand: bytes, ue_nonce: bytes) -> bytes:
    return kdf("res", [master_key, rand, ue_nonce]).value


def compute_binding(master_key: bytes, rand: bytes, ue_nonce: bytes, kem_ciphertext: bytes,
                    classical_public: bytes) -> bytes:
    """MAC under K over the response's key-exchange fields.

    RES alone does not cover the ciphertext, and implicit rejection would
    turn a tampered ciphertext into a silently different core key.
    """
    return kdf("response-binding", [master_key, rand, ue_nonce, kem_ciphertext,
                                    classical_public]).value


def _conceal_key(secret: bytes) -> SymmetricKey:
    return kdf("suci", [secret])


# ---- UE side -------------------------------------------------------------------

class UePhase(Enum):
    IDLE = "Idle"
    AWAIT_CHALLENGE = "AwaitChallenge"
    ESTABLISHED = "Established"
    FAILED = "Failed"


@dataclass(frozen=True)
class UeHandshake:
    phase: UePhase = UePhase.IDLE
    attempt: int = 0
    ue_nonce: bytes = b""
    hybrid: bool = False
    failure_reason: str = ""

    def next_attempt(self) -> "UeHandshake":
        """Back to Idle with the attempt counter advanced, so the next nonce is fresh."""
        return UeHandshake(attempt=self.attempt + 1)

    def _fail(self, reason: str) -> "UeHandshake":
        log.info("ue handshake failed: %s", reason)
        return replace(self, phase=UePhase.FAILED, failure_reason=reason)


def ue_nonce_for(seed: bytes, attempt: int) -> bytes:
    base = int.from_bytes(expand(seed, "ue/nonce", NONCE_LEN), "big")
    return (base ^ attempt).to_bytes(NONCE_LEN, "big")


def ue_initiate(identity: UeIdentity, seed: bytes, *, state: Optional[UeHandshake] = None,
                home_public_key: Optional[lwe.KemPublicKey] = None,
                hybrid: bool = False) -> tuple[AuthRequest, UeHandshake]:
    """Start a registration. Concealment is on when ``home_public_key`` is given."""
    state = state or UeHandshake()
    if state.phase is not UePhase.IDLE:
        raise ProtocolStateError(f"ue_initiate in state {state.phase.value}")
    nonce = ue_nonce_for(seed, state.attempt)
    if home_public_key is not None:
        attempt_seed = child_seed(seed, "attempt", state.attempt)
        ct, ss = lwe.kem_encapsulate(home_public_key, expand(attempt_seed, "suci/encap", 32))
        sealed = aead_seal(_conceal_key(ss.value), _ZERO_NONCE, _SUCI_AAD, identity.supi)
        ident: Union[ConcealedIdentity, bytes] = ConcealedIdentity(ct.to_bytes(), sealed.to_bytes())
    else:
        ident = identity.supi
    req = AuthRequest(nonce, ident, hybrid)
    return req, replace(state, phase=UePhase.AWAIT_CHALLENGE, ue_nonce=nonce, hybrid=hybrid)


def ue_handle_challenge(state: UeHandshake, identity: UeIdentity, challenge: AuthChallenge,
                        anchor: TrustAnchor, seed: bytes, *, now: int = 0
                        ) -> tuple[UeHandshake, Optional[AuthResponse], Optional[SessionKeyContext]]:
    """Verify the challenge and answer it. On any check failure no response is emitted."""
    if state.phase is not UePhase.AWAIT_CHALLENGE:
        raise ProtocolStateError(f"challenge received in state {state.phase.value}")
    if not hmac.compare_digest(challenge.ue_nonce, state.ue_nonce):
        return state._fail("stale nonce"), None, None
    try:
        ots_public = OtsPublicKey.from_bytes(challenge.ots_public)
        signature = OtsSignature.from_bytes(challenge.signature)
    except OtsError:
        return state._fail("malformed signature"), None, None
    if not anchor.admits(challenge.ots_index, ots_public):
        return state._fail("signer not in trust anchor"), None, None
    if not ots_verify(ots_public, challenge.signed_payload(), signature):
        return state._fail("bad signature"), None, None
    try:
        kem_pk = lwe.KemPublicKey.from_bytes(challenge.kem_public_key)
    except CryptoError:
        return state._fail("malformed KEM public key"), None, None
    if state.hybrid != bool(challenge.classical_public):
        return state._fail("hybrid mode mismatch"), None, None

    attempt_seed = child_seed(seed, "attempt", state.attempt)
    ct, ss = lwe.kem_encapsulate(kem_pk, expand(attempt_seed, "encap", 32))
    classical_secret, classical_pub = None, b""
    if state.hybrid:
        priv, pub = classical_stub_keypair(child_seed(attempt_seed, "classical"))
        try:
            classical_secret = classical_stub_shared(
                priv, int.from_bytes(challenge.classical_public, "big"))
        except CryptoError:
            return state._fail("bad classical public value"), None, None
        classical_pub = _classical_bytes(pub)

    key, derivation = _derive_session(identity.master_key, challenge.rand, ss.value,
                                      classical_secret)
    res = compute_res(identity.master_key, challenge.rand, state.ue_nonce)
    ctx = SessionKeyContext(key, session_key_id(key), identity.ue_id, established_at=now,
                            derivation=derivation)
    ct_bytes = ct.to_bytes()
    binding = compute_binding(identity.master_key, challenge.rand, state.ue_nonce, ct_bytes,
                              classical_pub)
    resp = AuthResponse(state.ue_nonce, res, ct_bytes, classical_pub, binding)
    return replace(state, phase=UePhase.ESTABLISHED), resp, ctx


def ue_handle_reject(state: UeHandshake, reject: AuthReject) -> UeHandshake:
    if state.phase is not UePhase.AWAIT_CHALLENGE:
        raise ProtocolStateError(f"reject received in state {state.phase.value}")
    if reject.ue_nonce != state.ue_nonce:
        raise ProtocolStateError("reject for another attempt")
    return state._fail(f"rejected: {reject.reason}")


# ---- core side -----------------------------------------------------------------

class CorePhase(Enum):
    AWAIT_RESPONSE = "AwaitResponse"
    ESTABLISHED = "Established"
    FAILED = "Failed"


@dataclass(frozen=True, repr=False)
class CoreSession:
    phase: CorePhase
    supi: bytes
    ue_nonce: bytes
    rand: Optional[bytes] = None
    ephemeral: Optional[lwe.KemSecretKey] = None
    classical_private: Optional[int] = None
    hybrid: bool = False
    failure_reason: str = ""
    context: Optional[SessionKeyContext] = None

    def __repr__(self) -> str:
        return f"CoreSession({self.phase.value}, ue={subscriber_label(self.supi)})"

    def failed(self, reason: str) -> "CoreSession":
        # pending secrets are dropped along with the transition
        return CoreSession(CorePhase.FAILED, self.supi, self.ue_nonce, hybrid=self.hybrid,
                           failure_reason=reason)


class CoreNetwork:
    """Home network: subscriber table, concealment key, challenge signer pool."""

    def __init__(self, seed: bytes, subscribers: dict[bytes, bytes], *,
                 params: lwe.LweParameters = lwe.LWE_256, signer_pool_size: int = 64):
        self.seed = seed
        self.params = params
        self._subscribers = dict(subscribers)
        self.home_kem = lwe.kem_keygen(params, expand(seed, "core/home-kem", params.seed_len))
        self._signers = OtsKeyPool(expand(seed, "core/ots-pool", 32), signer_pool_size)
        self.anchor: TrustAnchor = self._signers.anchor
        self._sessions: dict[bytes, CoreSession] = {}
        self._challenges = 0

    @property
    def home_public_key(self) -> lwe.KemPublicKey:
        return self.home_kem.public_key

    def session(self, ue_nonce: bytes) -> Optional[CoreSession]:
        return self._sessions.get(ue_nonce)

    def _resolve_identity(self, req: AuthRequest) -> Union[bytes, str]:
        if not req.concealed:
            return req.identity
        ident = req.identity
        try:
            ct = lwe.KemCiphertext.from_bytes(ident.kem_ciphertext)
            ss = lwe.kem_decapsulate(self.home_kem.secret_key, ct)
            env = AeadEnvelope.from_bytes(ident.sealed_supi)
            return aead_open(_conceal_key(ss.value), env, _SUCI_AAD)
        except (CryptoError, AeadError):
            return "malformed concealment"

    def handle_auth_request(self, req: AuthRequest) -> Union[AuthChallenge, AuthReject]:
        if req.ue_nonce in self._sessions:
            raise ProtocolStateError("request nonce already seen")
        supi = self._resolve_identity(req)
        if isinstance(supi, str):
            return AuthReject(req.ue_nonce, supi)
        if supi not in self._subscribers:
            return AuthReject(req.ue_nonce, "unknown subscriber")
        try:
            index, signer = self._signers.take()
        except PoolExhausted:
            return AuthReject(req.ue_nonce, "signer pool exhausted")

        cseed = child_seed(self.seed, "challenge", self._challenges)
        self._challenges += 1
        rand = expand(cseed, "rand", RAND_LEN)
        ephemeral = lwe.kem_keygen(self.params, expand(cseed, "ephemeral", self.params.seed_len))
        classical_private, classical_pub = None, b""
        if req.hybrid:
            classical_private, pub = classical_stub_keypair(child_seed(cseed, "classical"))
            classical_pub = _classical_bytes(pub)
        unsigned = AuthChallenge(rand, req.ue_nonce, ephemeral.public_key.to_bytes(), index,
                                 signer.public.to_bytes(), b"", classical_pub)
        sig = ots_sign(signer, unsigned.signed_payload())
        self._sessions[req.ue_nonce] = CoreSession(
            CorePhase.AWAIT_RESPONSE, supi, req.ue_nonce, rand, ephemeral.secret_key,
            classical_private, req.hybrid)
        return replace(unsigned, signature=sig.to_bytes())

    def verify_response(self, resp: AuthResponse, *, now: int = 0) -> Optional[SessionKeyContext]:
        """Check RES and derive the session key; ``None`` means the session failed."""
        sess = self._sessions.get(resp.ue_nonce)
        if sess is None or sess.phase is not CorePhase.AWAIT_RESPONSE:
            raise ProtocolStateError("no handshake awaiting this response")
        master_key = self._subscribers[sess.supi]
        expected = compute_res(master_key, sess.rand, sess.ue_nonce)
        if not hmac.compare_digest(expected, resp.res):
            return self._fail(sess, "res mismatch")
        binding = compute_binding(master_key, sess.rand, sess.ue_nonce, resp.kem_ciphertext,
                                  resp.classical_public)
        if not hmac.compare_digest(binding, resp.binding):
            return self._fail(sess, "response binding mismatch")
        try:
            ct = lwe.KemCiphertext.from_bytes(resp.kem_ciphertext)
            ss = lwe.kem_decapsulate(sess.ephemeral, ct)
        except CryptoError as exc:
            return self._fail(sess, f"bad encapsulation: {exc}")
        classical_secret = None
        if sess.hybrid:
            try:
                classical_secret = classical_stub_shared(
                    sess.classical_private, int.from_bytes(resp.classical_public, "big"))
            except CryptoError:
                return self._fail(sess, "bad classical public value")
        key, derivation = _derive_session(master_key, sess.rand, ss.value, classical_secret)
        ctx = SessionKeyContext(key, session_key_id(key), subscriber_label(sess.supi),
                                established_at=now, derivation=derivation)
        self._sessions[resp.ue_nonce] = CoreSession(CorePhase.ESTABLISHED, sess.supi,
                                                    sess.ue_nonce, hybrid=sess.hybrid,
                                                    context=ctx)
        return ctx

    def _fail(self, sess: CoreSession, reason: str) -> None:
        log.info("core handshake failed: %s", reason)
        self._sessions[sess.ue_nonce] = sess.failed(reason)
        return None


# ---- key forwarding to the serving base station --------------------------------

class ForwardStatus(Enum):
    DELIVERED = "DELIVERED"
    UNPROTECTED = "UNPROTECTED"
    BLOCKED = "BLOCKED"


@dataclass(frozen=True)
class KeyForwardRecord:
    status: ForwardStatus
    message: Optional[KeyForward] = None
    qkd_key_id: Optional[str] = None


def _forward_aad(ue_id: str, bs_id: str, key_id: str, qkd_key_id: str) -> bytes:
    return frame([b"aka/key-forward", ue_id.encode(), bs_id.encode(), key_id.encode(),
                  qkd_key_id.encode()])


def core_forward_session_key(ctx: SessionKeyContext, bs_id: Optional[str], *,
                             require_protection: bool,
                             backbone_key: Optional[tuple[str, bytes]] = None) -> KeyForwardRecord:
    """Send the session key to ``bs_id``.

    With ``require_protection`` the key travels only inside an envelope
    sealed by a one-time backbone key ``(key_id, bytes)``; no key means the
    forward is blocked. Without it the key crosses a plain link and the
    record is flagged UNPROTECTED.
    """
    if not bs_id:
        raise ForwardingError("no serving base station")
    if require_protection:
        if backbone_key is None:
            return KeyForwardRecord(ForwardStatus.BLOCKED)
        qkd_key_id, qkd_key = backbone_key
        env = aead_seal(SymmetricKey(qkd_key), _ZERO_NONCE,
                        _forward_aad(ctx.ue_id, bs_id, ctx.key_id, qkd_key_id),
                        ctx.session_key.value)
        msg = KeyForward(ctx.ue_id, bs_id, ctx.key_id, ForwardStatus.DELIVERED.value,
                         qkd_key_id, env.to_bytes())
        return KeyForwardRecord(ForwardStatus.DELIVERED, msg, qkd_key_id)
    msg = KeyForward(ctx.ue_id, bs_id, ctx.key_id, ForwardStatus.UNPROTECTED.value, "",
                     ctx.session_key.value)
    return KeyForwardRecord(ForwardStatus.UNPROTECTED, msg)


class BaseStation:
    def __init__(self, bs_id: str):
        self.bs_id = bs_id
        self.key_table: dict[str, SessionKeyContext] = {}

    def install_forward(self, msg: KeyForward, backbone_key: Optional[bytes] = None, *,
                        now: int = 0) -> SessionKeyContext:
        if msg.bs_id != self.bs_id:
            raise ForwardingError(f"forward addressed to {msg.bs_id}, not {self.bs_id}")
        if msg.status == ForwardStatus.DELIVERED.value:
            if backbone_key is None:
                raise ForwardingError("protected forward needs the backbone key")
            env = AeadEnvelope.from_bytes(msg.payload)
            raw = aead_open(SymmetricKey(backbone_key), env,
                            _forward_aad(msg.ue_id, msg.bs_id, msg.key_id, msg.qkd_key_id))
        elif msg.status == ForwardStatus.UNPROTECTED.value:
            raw = msg.payload
        else:
            raise ForwardingError(f"cannot install forward with status {msg.status}")
        key = SymmetricKey(raw)
        if session_key_id(key) != msg.key_id:
            raise ForwardingError("forwarded key does not match its key id")
        ctx = SessionKeyContext(key, msg.key_id, msg.ue_id, self.bs_id, now)
        self.key_table[msg.ue_id] = ctx
        return ctx

    def drop(self, ue_id: str) -> None:
        ctx = self.key_table.pop(ue_id, None)
        if ctx is not None:
            ctx.invalidate()


# ---- in-order driver -----------------------------------------------------------

Tamper = Callable[[str, bytes], bytes]


@dataclass
class HandshakeOutcome:
    ue_state: UeHandshake
    ue_context: Optional[SessionKeyContext]
    core_context: Optional[SessionKeyContext]
    wire: list[tuple[str, bytes]]

    @property
    def established(self) -> bool:
        return (self.ue_context is not None and self.core_context is not None
                and self.ue_state.phase is UePhase.ESTABLISHED)

    @property
    def failure_reason(self) -> str:
        return self.ue_state.failure_reason


def run_handshake(identity: UeIdentity, seed: bytes, core: CoreNetwork, *,
                  state: Optional[UeHandshake] = None, concealed: bool = False,
                  hybrid: bool = False, tamper: Optional[Tamper] = None,
                  now: int = 0) -> HandshakeOutcome:
    """Run request, challenge and response in order over a simulated air link.

    ``tamper(direction, wire_bytes)`` may rewrite any message in flight;
    directions are ``"ue->core"`` and ``"core->ue"``.
    """
    wire: list[tuple[str, bytes]] = []

    def send(direction: str, msg: Message) -> Optional[Message]:
        raw = encode_message(msg)
        if tamper is not None:
            raw = tamper(direction, raw)
        wire.append((direction, raw))
        try:
            return decode_message(raw)
        except WireError:
            return None

    home = core.home_public_key if concealed else None
    req, ue = ue_initiate(identity, seed, state=state, home_public_key=home, hybrid=hybrid)
    got = send("ue->core", req)
    if not isinstance(got, AuthRequest):
        return HandshakeOutcome(ue._fail("request lost"), None, None, wire)
    try:
        answer = core.handle_auth_request(got)
    except ProtocolStateError:
        return HandshakeOutcome(ue._fail("request refused"), None, None, wire)
    got = send("core->ue", answer)
    if isinstance(got, AuthReject):
        return HandshakeOutcome(ue._fail(f"rejected: {got.reason}"), None, None, wire)
    if not isinstance(got, AuthChallenge):
        return HandshakeOutcome(ue._fail("malformed challenge"), None, None, wire)
    ue, resp, ue_ctx = ue_handle_challenge(ue, identity, got, core.anchor, seed, now=now)
    if resp is None:
        return HandshakeOutcome(ue, None, None, wire)
    got = send("ue->core", resp)
    if not isinstance(got, AuthResponse):
        return HandshakeOutcome(ue._fail("response lost"), None, None, wire)
    try:
        core_ctx = core.verify_response(got, now=now)
    except ProtocolStateError:
        core_ctx = None
    if core_ctx is None:
        # implicit confirmation never happens; the UE's optimistic key is discarded
        return HandshakeOutcome(ue._fail("core rejected response"), None, None, wire)
    return HandshakeOutcome(ue, ue_ctx, core_ctx, wire)
