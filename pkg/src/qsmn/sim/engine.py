"""Deterministic discrete-event simulation of the mobile network.

Time is integer milliseconds. Events are ordered by ``(time, seq)`` where
``seq`` is the insertion counter, and handlers only ever schedule at or
after the current time. All randomness derives from the world seed via
:func:`child_seed`, so a config plus seed fixes the trace byte-for-byte.

Segments of an application message:

* UE to BS: AEAD under the session key when ``ue_bs_pqc``, else plaintext.
* BS to core and core to DN: AEAD under a KMS-granted QKD key when the
  corresponding QKD flag is on, else plaintext. With ``envelopes_per_key``
  above one a key serves several envelopes with counter nonces.

A registration handshake runs at every UE's first attachment under every
placement. Under ``ue_bs_pqc`` each handover invalidates the session and
runs a fresh handshake, unless ``keep_keys_on_handover`` is set.
"""

from __future__ import annotations

import heapq
import json
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

from ..aka import (
    AppData,
    AuthChallenge,
    AuthReject,
    BaseStation,
    ForwardStatus,
    ProtocolStateError,
    STEP_NAMES,
    SessionKeyContext,
    UeHandshake,
    UeIdentity,
    UePhase,
    core_forward_session_key,
    decode_message,
    decrypt_app_message,
    encode_message,
    encrypt_app_message,
    ue_handle_challenge,
    ue_initiate,
)
from ..aka.handshake import CoreNetwork
from ..aka.wire import KeyForward, decode_tlv, flip_field_bit
from ..crypto.primitives import (
    NONCE_LEN,
    AeadEnvelope,
    SymmetricKey,
    aead_open,
    aead_seal,
    child_seed,
    expand,
    frame,
)
from ..kms import KeyManagementService, KeyRequest, SdnController
from ..qkd import (
    Eavesdropper,
    InsufficientKeyMaterial,
    RoundStatus,
    distill_key_block,
    run_bb84_round,
)
from .config import ChallengeTamper, QkdEve, ResponseTamper, World
from .metrics import MetricsReport, NodeCounters

class EventKind(Enum):
    ATTACH = "Attach"
    HANDOVER = "Handover"
    SEND_APP_MSG = "SendAppMsg"
    QKD_ROUND_DUE = "QkdRoundDue"
    KMS_REFILL = "KmsRefill"
    HANDSHAKE_STEP = "HandshakeStep"


@dataclass(order=True)
class Event:
    time: int
    seq: int
    kind: EventKind = field(compare=False)
    payload: dict = field(compare=False, default_factory=dict)


@dataclass
class _Ue:
    ue_id: str
    identity: UeIdentity
    seed: bytes
    hs: UeHandshake = field(default_factory=UeHandshake)
    serving_bs: Optional[str] = None
    ctx: Optional[SessionKeyContext] = None
    core_ctx: Optional[SessionKeyContext] = None
    pending_ctx: Optional[SessionKeyContext] = None
    registered: bool = False
    bs_ready: bool = False
    in_flight: bool = False
    queued: deque = field(default_factory=deque)
    outbox: deque = field(default_factory=deque)

    @property
    def label(self) -> str:
        return self.identity.ue_id


@dataclass
class _ActiveKey:
    key_id: str
    key: bytes
    uses: int = 0


@dataclass
class _Link:
    link_id: str
    a: str
    b: str
    eve: Eavesdropper = field(default_factory=Eavesdropper)
    rounds: int = 0
    wanted: int = 0
    busy: bool = False
    consecutive_aborts: int = 0
    compromised: bool = False
    active: Optional[_ActiveKey] = None
    opened: dict = field(default_factory=dict)
    receiver_cache: dict = field(default_factory=dict)
    waiting: deque = field(default_factory=deque)


@dataclass
class SimulationResult:
    report: MetricsReport
    trace: list[str]
    audit: list[str]
    sensitive: dict[str, list[bytes]]
    world: World

    def trace_text(self) -> str:
        return "".join(line + "\n" for line in self.trace)

    def wire_bytes(self) -> list[bytes]:
        out = []
        for line in self.trace:
            rec = json.loads(line)
            if rec.get("event") == "wire":
                out.append(bytes.fromhex(rec["hex"]))
        return out


class Simulator:
    def __init__(self, world: World):
        self.world = world
        self.seed = world.seed.to_bytes(8, "big")
        topo = world.topology
        self.topo = topo
        self.lat = topo.latency
        self.pl = world.placements
        self._queue: list[Event] = []
        self._seq = 0
        self.now = 0
        self.trace: list[str] = []
        self.sensitive: dict[str, list[bytes]] = {"payloads": [], "master_keys": [],
                                                   "session_keys": []}

        self.ues: dict[str, _Ue] = {}
        subscribers = {}
        for spec in topo.ues:
            k = expand(self.seed, f"master-key/{spec.ue_id}", 32)
            subscribers[spec.supi] = k
            self.sensitive["master_keys"].append(k)
            self.ues[spec.ue_id] = _Ue(spec.ue_id, UeIdentity(spec.supi, k),
                                        child_seed(self.seed, "ue", spec.ue_id))
        attaches = sum(len(s) for s in world.mobility.values())
        self.core = CoreNetwork(child_seed(self.seed, "core"), subscribers,
                                params=world.crypto.params, signer_pool_size=attaches + 4)
        self.bss = {b: BaseStation(b) for b in topo.bs_ids}

        nodes = [(u, "ue") for u in topo.ue_ids] + [(b, "bs") for b in topo.bs_ids]
        nodes += [(topo.core, "core"), (topo.dn, "dn"), (topo.kms, "kms")]
        self.report = MetricsReport({n: NodeCounters(n, r) for n, r in nodes}, world.energy)
        self.report.established_by_ue = dict.fromkeys(topo.ue_ids, 0)

        self.kms = KeyManagementService(world.qkd.low_watermark)
        self.sdn = SdnController(self.kms, topo.kms)
        self.links: dict[str, _Link] = {}
        for link_id, (a, b) in topo.qkd_links.items():
            on = self.pl.core_dn_qkd if link_id == topo.core_dn_link else self.pl.bs_core_qkd
            if on:
                self.kms.register_link(link_id, a, b)
                self.links[link_id] = _Link(link_id, a, b)
                self.report.keys_consumed_by_link[link_id] = 0
        self.report.forwards = {s.value: 0 for s in ForwardStatus}

        self._challenge_tamper = set()
        self._response_tamper = set()
        for adv in world.adversaries:
            if isinstance(adv, QkdEve):
                if adv.link in self.links:
                    self.links[adv.link].eve = Eavesdropper.intercept_fraction(adv.fraction)
            elif isinstance(adv, ChallengeTamper):
                self._challenge_tamper.add(adv.ue_id)
            elif isinstance(adv, ResponseTamper):
                self._response_tamper.add(adv.ue_id)

    # ---- plumbing --------------------------------------------------------------

    def schedule(self, time: int, kind: EventKind, **payload) -> None:
        if time < self.now:
            raise RuntimeError("cannot schedule into the past")
        heapq.heappush(self._queue, Event(time, self._seq, kind, payload))
        self._seq += 1

    def _record(self, event: str, **fields) -> None:
        rec = {"t": self.now, "event": event, **fields}
        self.trace.append(json.dumps(rec, sort_keys=True, separators=(",", ":")))

    def _wire(self, src: str, dst: str, raw: bytes, **extra) -> None:
        msg_type, _ = decode_tlv(raw)
        self._record("wire", src=src, dst=dst, msg=STEP_NAMES[msg_type], hex=raw.hex(), **extra)

    def _charge(self, node: str, op: str, n: int = 1) -> None:
        self.report.nodes[node].ops[op] += n

    def _op_us(self, op: str, n: float = 1) -> float:
        return getattr(self.world.op_latency, op) * n

    # ---- run -------------------------------------------------------------------

    def run(self) -> SimulationResult:
        w = self.world
        for link in self.links.values():
            link.wanted = w.qkd.initial_blocks
            if link.wanted:
                link.busy = True
                self.schedule(0, EventKind.QKD_ROUND_DUE, link=link.link_id)
        for ue_id, sched in w.mobility.items():
            for i, (t, bs) in enumerate(sched):
                kind = EventKind.ATTACH if i == 0 else EventKind.HANDOVER
                self.schedule(t, kind, ue=ue_id, bs=bs)
        for flow in w.traffic:
            for j in range(flow.count):
                self.schedule(flow.start + j * flow.interval, EventKind.SEND_APP_MSG,
                              ue=flow.ue_id, stage="generate", size=flow.size)
        handlers = {
            EventKind.ATTACH: self._on_attach,
            EventKind.HANDOVER: self._on_handover,
            EventKind.SEND_APP_MSG: self._on_app,
            EventKind.QKD_ROUND_DUE: self._on_qkd_round,
            EventKind.KMS_REFILL: self._on_refill,
            EventKind.HANDSHAKE_STEP: self._on_handshake_step,
        }
        while self._queue:
            ev = heapq.heappop(self._queue)
            self.now = ev.time
            handlers[ev.kind](**ev.payload)

        r = self.report
        r.messages_held = sum(len(u.outbox) for u in self.ues.values())
        r.messages_held += sum(1 for l in self.links.values() for item in l.waiting
                               if item[0] == "segment")
        r.compromised_links = sorted(l.link_id for l in self.links.values() if l.compromised)
        self._record("end", held=r.messages_held, delivered=r.messages_delivered)
        return SimulationResult(r, self.trace, self.kms.audit_lines(), self.sensitive, self.world)

    # ---- mobility and handshakes -----------------------------------------------

    def _on_attach(self, ue: str, bs: str) -> None:
        u = self.ues[ue]
        u.serving_bs = bs
        self.report.initial_attaches += 1
        self._record("attach", ue=ue, bs=bs)
        u.queued.append("attach")
        self._next_handshake(u)

    def _on_handover(self, ue: str, bs: str) -> None:
        u = self.ues[ue]
        old, u.serving_bs = u.serving_bs, bs
        self.report.handovers += 1
        self._record("handover", ue=ue, src=old, dst=bs)
        if not self.pl.ue_bs_pqc:
            return
        self.bss[old].drop(u.label)
        u.bs_ready = False
        if self.world.keep_keys_on_handover and u.ctx is not None and u.core_ctx is not None:
            self._forward(u, u.core_ctx, completes=False)
            return
        for ctx in (u.ctx, u.core_ctx):
            if ctx is not None:
                ctx.invalidate()
        u.ctx = u.core_ctx = None
        u.queued.append("handover")
        self._next_handshake(u)

    def _next_handshake(self, u: _Ue) -> None:
        if u.in_flight or not u.queued:
            return
        reason = u.queued.popleft()
        state = u.hs if u.hs.phase is UePhase.IDLE else u.hs.next_attempt()
        home = self.core.home_public_key if self.world.crypto.concealment else None
        req, u.hs = ue_initiate(u.identity, u.seed, state=state, home_public_key=home,
                                hybrid=self.world.crypto.hybrid)
        u.in_flight = True
        node = self.report.nodes[u.ue_id]
        node.handshakes += 1
        if reason == "handover":
            node.rekeys += 1
        if home is not None:
            self._charge(u.ue_id, "kem_encap")
            self._charge(u.ue_id, "kdf")
            node.ctrl_aead_bytes += len(u.identity.supi)
        raw = encode_message(req)
        self._record("handshake_start", ue=u.ue_id, reason=reason, attempt=u.hs.attempt)
        self._wire(u.ue_id, self.topo.core, raw, via=u.serving_bs)
        self.schedule(self.now + self.lat.ue_bs + self.lat.bs_core, EventKind.HANDSHAKE_STEP,
                      ue=u.ue_id, stage="request", raw=raw)

    def _handshake_done(self, u: _Ue, ok: bool, reason: str = "") -> None:
        u.in_flight = False
        if not ok:
            self.report.nodes[u.ue_id].failed_handshakes += 1
            u.hs = replace(u.hs, phase=UePhase.FAILED, failure_reason=reason)
            u.pending_ctx = None
            self._record("handshake_failed", ue=u.ue_id, reason=reason)
        self._next_handshake(u)
        self._flush_outbox(u)

    def _on_handshake_step(self, ue: str, stage: str, raw: bytes, **extra) -> None:
        u = self.ues[ue]
        core = self.topo.core
        back = self.lat.ue_bs + self.lat.bs_core
        crypto = self.world.crypto

        if stage == "request":
            try:
                answer = self.core.handle_auth_request(decode_message(raw))
            except ProtocolStateError as exc:
                self._handshake_done(u, False, str(exc))
                return
            if isinstance(answer, AuthChallenge):
                if crypto.concealment:
                    self._charge(core, "kem_decap")
                    self._charge(core, "kdf")
                    self.report.nodes[core].ctrl_aead_bytes += len(u.identity.supi)
                self._charge(core, "kem_keygen")
                self._charge(core, "ots_sign")
                if crypto.hybrid:
                    self._charge(core, "classical_dh")
            out = encode_message(answer)
            if ue in self._challenge_tamper and isinstance(answer, AuthChallenge):
                out = flip_field_bit(out, "signature")
                self._record("tamper", ue=ue, target="challenge.signature")
            self._wire(core, ue, out, via=u.serving_bs)
            self.schedule(self.now + back, EventKind.HANDSHAKE_STEP, ue=ue, stage="challenge",
                          raw=out)

        elif stage == "challenge":
            msg = decode_message(raw)
            if isinstance(msg, AuthReject):
                self._handshake_done(u, False, f"rejected: {msg.reason}")
                return
            self._charge(ue, "ots_verify")
            u.hs, resp, ctx = ue_handle_challenge(u.hs, u.identity, msg, self.core.anchor,
                                                  u.seed, now=self.now)
            if resp is None:
                self._handshake_done(u, False, u.hs.failure_reason)
                return
            self._charge(ue, "kem_encap")
            self._charge(ue, "kdf", 5 if crypto.hybrid else 4)
            if crypto.hybrid:
                self._charge(ue, "classical_dh", 2)
            u.pending_ctx = ctx
            self.sensitive["session_keys"].append(ctx.session_key.value)
            out = encode_message(resp)
            if ue in self._response_tamper:
                out = flip_field_bit(out, "res")
                self._record("tamper", ue=ue, target="response.res")
            self._wire(ue, core, out, via=u.serving_bs)
            self.schedule(self.now + back, EventKind.HANDSHAKE_STEP, ue=ue, stage="response",
                          raw=out)

        elif stage == "response":
            self._charge(core, "kdf", 2)
            try:
                core_ctx = self.core.verify_response(decode_message(raw), now=self.now)
            except ProtocolStateError as exc:
                self._handshake_done(u, False, str(exc))
                return
            if core_ctx is None:
                reason = self.core.session(u.hs.ue_nonce).failure_reason
                self._handshake_done(u, False, f"core: {reason}")
                return
            self._charge(core, "kem_decap")
            self._charge(core, "kdf", 3 if crypto.hybrid else 2)
            if crypto.hybrid:
                self._charge(core, "classical_dh")
            if not u.pending_ctx.same_key(core_ctx):
                self.report.mismatched_sessions += 1
            u.ctx, u.pending_ctx, u.core_ctx = u.pending_ctx, None, core_ctx
            u.registered = True
            self.report.established_sessions += 1
            self.report.established_by_ue[ue] += 1
            self._record("session_established", ue=ue, key_id=core_ctx.key_id)
            if self.pl.ue_bs_pqc:
                self._forward(u, core_ctx, completes=True)
            else:
                self._handshake_done(u, True)

        elif stage == "key_forward":
            self._install_forward(u, raw, **extra)

    # ---- key forwarding --------------------------------------------------------

    def _forward(self, u: _Ue, ctx: SessionKeyContext, completes: bool) -> None:
        """Send the session key to the serving BS; ``completes`` ends the running handshake."""
        bs = u.serving_bs
        core = self.topo.core
        link_id = self.topo.backbone_link(bs)
        backbone = None
        if self.pl.bs_core_qkd:
            grant = self.sdn.route_key_request(KeyRequest(core, bs, "key-forward"), self.now)
            self._drain_refill_signals()
            if not grant.ok:
                self.report.blocked_forwarding += 1
                self.report.forwards[ForwardStatus.BLOCKED.value] += 1
                self._record("forward_blocked", ue=u.ue_id, bs=bs, link=link_id,
                             reason=grant.denial.value)
                self.links[link_id].waiting.append(("forward", u.ue_id, ctx, bs, completes))
                self._request_refill(link_id)
                return
            self.report.keys_granted += 1
            backbone = (grant.key_id, grant.key)
        rec = core_forward_session_key(ctx, bs, require_protection=self.pl.bs_core_qkd,
                                       backbone_key=backbone)
        self.report.forwards[rec.status.value] += 1
        if rec.status is ForwardStatus.DELIVERED:
            self.report.nodes[core].ctrl_aead_bytes += 32
        raw = encode_message(rec.message)
        self._wire(core, bs, raw, status=rec.status.value)
        self.schedule(self.now + self.lat.bs_core, EventKind.HANDSHAKE_STEP, ue=u.ue_id,
                      stage="key_forward", raw=raw, qkd_key_id=rec.qkd_key_id or "",
                      completes=completes)

    def _install_forward(self, u: _Ue, raw: bytes, qkd_key_id: str = "",
                         completes: bool = False) -> None:
        msg: KeyForward = decode_message(raw)
        bs = msg.bs_id
        backbone = None
        if qkd_key_id:
            grant = self.kms.fetch_key(qkd_key_id, bs, self.now)
            if not grant.ok:
                raise RuntimeError(f"{bs} cannot fetch {qkd_key_id}: {grant.denial.value}")
            self.report.keys_fetched += 1
            backbone = grant.key
            self.report.nodes[bs].ctrl_aead_bytes += 32
        ctx = self.bss[bs].install_forward(msg, backbone, now=self.now)
        self._charge(bs, "kdf")
        if qkd_key_id:
            self.kms.consume_key(qkd_key_id, self.now)
            self.report.nodes[bs].keys_consumed += 1
            self.report.keys_consumed_by_link[self.topo.backbone_link(bs)] += 1
        if u.core_ctx is not None and not ctx.same_key(u.core_ctx):
            self.report.mismatched_sessions += 1
        current = u.ctx is not None and u.ctx.valid and u.ctx.key_id == msg.key_id
        if bs == u.serving_bs and current:
            u.bs_ready = True
        else:
            self.bss[bs].drop(u.label)  # UE moved on while the key was in flight
        if completes:
            self._handshake_done(u, True)
        else:
            self._flush_outbox(u)

    # ---- application traffic ---------------------------------------------------

    def _ready(self, u: _Ue) -> bool:
        if self.pl.ue_bs_pqc:
            return u.bs_ready and u.ctx is not None and u.ctx.valid
        return u.registered

    def _flush_outbox(self, u: _Ue) -> None:
        while u.outbox and self._ready(u):
            self._send_ue_bs(u, u.outbox.popleft())

    def _on_app(self, ue: str, stage: str, **msg) -> None:
        u = self.ues[ue]
        if stage == "generate":
            seq = self.report.messages_sent
            self.report.messages_sent += 1
            payload = expand(child_seed(self.seed, "payload", ue), str(seq), msg["size"])
            self.sensitive["payloads"].append(payload)
            item = {"seq": seq, "payload": payload, "created": self.now, "crypto_us": 0.0}
            self._record("app_generate", ue=ue, seq=seq, size=msg["size"])
            if self._ready(u):
                self._send_ue_bs(u, item)
            else:
                u.outbox.append(item)
        elif stage == "at_bs":
            self._at_bs(u, **msg)
        elif stage == "at_core":
            self._at_receiver(u, self.topo.core, **msg)
        elif stage == "at_dn":
            self._at_receiver(u, self.topo.dn, **msg)

    def _send_ue_bs(self, u: _Ue, item: dict) -> None:
        bs = u.serving_bs
        size = len(item["payload"])
        if self.pl.ue_bs_pqc:
            env = encrypt_app_message(u.ctx, item["payload"])
            node = self.report.nodes[u.ue_id]
            node.bytes_encrypted += size
            node.app_aead_bytes += size
            item["crypto_us"] += self._op_us("aead_per_byte", size)
            msg = AppData("ue-bs", u.ctx.key_id, env.to_bytes())
        else:
            msg = AppData("ue-bs", "", item["payload"])
        raw = encode_message(msg)
        self._wire(u.ue_id, bs, raw, seq=item["seq"])
        self.schedule(self.now + self.lat.ue_bs, EventKind.SEND_APP_MSG, ue=u.ue_id,
                      stage="at_bs", bs=bs, raw=raw, item=item)

    def _at_bs(self, u: _Ue, bs: str, raw: bytes, item: dict) -> None:
        msg = decode_message(raw)
        if msg.key_id:
            ctx = self.bss[bs].key_table.get(u.label)
            if ctx is None or ctx.key_id != msg.key_id:
                self.report.messages_dropped += 1
                self._record("app_dropped", ue=u.ue_id, seq=item["seq"], at=bs,
                             reason="no session key at base station")
                return
            payload = decrypt_app_message(ctx, AeadEnvelope.from_bytes(msg.envelope))
            size = len(payload)
            self.report.nodes[bs].app_aead_bytes += size
            item["crypto_us"] += self._op_us("aead_per_byte", size)
        else:
            payload = msg.envelope
        if payload != item["payload"]:
            raise RuntimeError("payload corrupted on UE-BS segment")
        self._send_segment(u, item, bs, self.topo.core, self.topo.backbone_link(bs),
                           self.pl.bs_core_qkd, "bs-core", "at_core")

    def _send_segment(self, u: _Ue, item: dict, src: str, dst: str, link_id: str,
                      protected: bool, segment: str, next_stage: str) -> None:
        latency = self.lat.bs_core if segment == "bs-core" else self.lat.core_dn
        payload = item["payload"]
        if protected:
            key = self._segment_key(link_id, src, dst)
            if key is None:
                self.report.blocked_forwarding += 1
                self._record("segment_blocked", ue=u.ue_id, seq=item["seq"], link=link_id)
                self.links[link_id].waiting.append(("segment", u.ue_id, item, src, dst, segment,
                                                    next_stage))
                self._request_refill(link_id)
                return
            key_id, key_bytes, counter = key
            nonce = counter.to_bytes(NONCE_LEN, "big")
            env = aead_seal(SymmetricKey(key_bytes), nonce, _segment_aad(link_id, key_id), payload)
            node = self.report.nodes[src]
            node.bytes_encrypted += len(payload)
            node.app_aead_bytes += len(payload)
            item["crypto_us"] += self._op_us("aead_per_byte", len(payload))
            msg = AppData(segment, key_id, env.to_bytes())
        else:
            msg = AppData(segment, "", payload)
        raw = encode_message(msg)
        self._wire(src, dst, raw, seq=item["seq"])
        self.schedule(self.now + latency, EventKind.SEND_APP_MSG, ue=u.ue_id, stage=next_stage,
                      raw=raw, item=item, link=link_id)

    def _at_receiver(self, u: _Ue, node: str, raw: bytes, item: dict, link: str) -> None:
        msg = decode_message(raw)
        if msg.key_id:
            lk = self.links[link]
            key = lk.receiver_cache.get(msg.key_id)
            if key is None:
                grant = self.kms.fetch_key(msg.key_id, node, self.now)
                if not grant.ok:
                    raise RuntimeError(f"receiver cannot fetch {msg.key_id}: {grant.denial}")
                self.report.keys_fetched += 1
                key = lk.receiver_cache[msg.key_id] = grant.key
            payload = aead_open(SymmetricKey(key), AeadEnvelope.from_bytes(msg.envelope),
                                _segment_aad(link, msg.key_id))
            self.report.nodes[node].app_aead_bytes += len(payload)
            item["crypto_us"] += self._op_us("aead_per_byte", len(payload))
            lk.opened[msg.key_id] = lk.opened.get(msg.key_id, 0) + 1
            if lk.opened[msg.key_id] == self.world.crypto.envelopes_per_key:
                self.kms.consume_key(msg.key_id, self.now)
                del lk.receiver_cache[msg.key_id]
                self.report.nodes[node].keys_consumed += 1
                self.report.keys_consumed_by_link[link] += 1
        else:
            payload = msg.envelope
        if payload != item["payload"]:
            raise RuntimeError(f"payload corrupted before {node}")
        if node == self.topo.core:
            self._send_segment(u, item, self.topo.core, self.topo.dn, self.topo.core_dn_link,
                               self.pl.core_dn_qkd, "core-dn", "at_dn")
            return
        self.report.messages_delivered += 1
        latency = (self.now - item["created"]) * 1000 + item["crypto_us"]
        self.report.latencies_us.append(int(round(latency)))
        self._record("app_delivered", ue=u.ue_id, seq=item["seq"])

    def _segment_key(self, link_id: str, src: str, dst: str):
        lk = self.links[link_id]
        per_key = self.world.crypto.envelopes_per_key
        if lk.active is None or lk.active.uses >= per_key:
            grant = self.sdn.route_key_request(KeyRequest(src, dst, "segment"), self.now)
            self._drain_refill_signals()
            if not grant.ok:
                return None
            self.report.keys_granted += 1
            lk.active = _ActiveKey(grant.key_id, grant.key)
        act = lk.active
        counter = act.uses
        act.uses += 1
        return act.key_id, act.key, counter

    # ---- QKD and KMS -----------------------------------------------------------

    def _drain_refill_signals(self) -> None:
        for _, link_id in self.sdn.drain_refills():
            self._request_refill(link_id)

    def _request_refill(self, link_id: str) -> None:
        lk = self.links[link_id]
        if lk.busy or lk.compromised:
            return
        self.schedule(self.now, EventKind.KMS_REFILL, link=link_id)
        lk.busy = True

    def _on_refill(self, link: str) -> None:
        lk = self.links[link]
        lk.wanted += self.world.qkd.refill_batch
        self._record("kms_refill", link=link, depth=self.kms.pool_depth(link), wanted=lk.wanted)
        self.schedule(self.now + self.world.qkd.round_duration_ms, EventKind.QKD_ROUND_DUE,
                      link=link)

    def _on_qkd_round(self, link: str) -> None:
        lk = self.links[link]
        if lk.compromised:
            return
        q = self.world.qkd
        cfg = replace(q.link, eavesdropper=lk.eve)
        idx = lk.rounds
        lk.rounds += 1
        result = run_bb84_round(cfg, child_seed(self.seed, "qkd", link, idx), self.now)
        for node in (lk.a, lk.b):
            self.report.nodes[node].qkd_rounds += 1
        failed = result.status is RoundStatus.ABORTED
        block = None
        if not failed:
            try:
                block = distill_key_block(result, link, q.link.target_block_bits)
            except InsufficientKeyMaterial:
                failed = True
        self._record("qkd_round", link=link, round=idx, status=result.status.value,
                     qber=round(result.qber_estimate, 6), key_id=block.key_id if block else "")
        if failed:
            lk.consecutive_aborts += 1
            if result.status is RoundStatus.ABORTED:
                self.report.aborted_rounds += 1
                for node in (lk.a, lk.b):
                    self.report.nodes[node].qkd_aborted += 1
            if lk.consecutive_aborts >= q.max_consecutive_aborts:
                lk.compromised = True
                lk.busy = False
                self._record("link_compromised", link=link, aborts=lk.consecutive_aborts)
                return
        else:
            lk.consecutive_aborts = 0
            self.kms.ingest_key_block(block, self.now)
            self.report.keys_ingested += 1
            lk.wanted -= 1
            self._drain_waiting(lk)
        if lk.wanted > 0:
            self.schedule(self.now + q.round_duration_ms, EventKind.QKD_ROUND_DUE, link=link)
        else:
            lk.busy = False
            if lk.waiting:
                self._request_refill(link)

    def _drain_waiting(self, lk: _Link) -> None:
        while lk.waiting and self.kms.pool_depth(lk.link_id) > 0:
            item = lk.waiting.popleft()
            if item[0] == "forward":
                _, ue_id, ctx, bs, completes = item
                u = self.ues[ue_id]
                if ctx.valid and u.serving_bs == bs:
                    self._forward(u, ctx, completes)
                elif completes:
                    self._handshake_done(u, True)
            else:
                _, ue_id, it, src, dst, segment, next_stage = item
                self._send_segment(self.ues[ue_id], it, src, dst, lk.link_id, True, segment,
                                   next_stage)


def _segment_aad(link_id: str, key_id: str) -> bytes:
    return frame([b"segment", link_id.encode(), key_id.encode()])


def run(world: World) -> SimulationResult:
    return Simulator(world).run()
