"""Key management service for QKD-distilled key pools, plus the SDN role.

Keys move Available -> Assigned -> Consumed and never back. Every
transition is appended to an audit log whose timestamps strictly increase:
the log clock runs in microseconds of simulation time and is bumped by one
when several events share a millisecond.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .qkd import QkdKeyBlock, RoundStatus

log = logging.getLogger(__name__)

DEFAULT_LOW_WATERMARK = 4


class KmsError(Exception):
    pass


class KeyState(Enum):
    AVAILABLE = "Available"
    ASSIGNED = "Assigned"
    CONSUMED = "Consumed"


class Denial(Enum):
    EMPTY_POOL = "EmptyPool"
    UNKNOWN_PAIR = "UnknownPair"
    ALREADY_FETCHED = "AlreadyFetched"
    NOT_AN_ENDPOINT = "NotAnEndpoint"
    UNKNOWN_KEY = "UnknownKey"
    NOT_ASSIGNED = "NotAssigned"


@dataclass
class KeyPoolEntry:
    key_id: str
    key: bytearray
    link_id: str
    created_at: int
    state: KeyState = KeyState.AVAILABLE
    assigned_to: Optional[tuple[str, str]] = None
    fetched_by: set = field(default_factory=set)

    def __repr__(self) -> str:
        return f"KeyPoolEntry({self.key_id}, {self.link_id}, {self.state.value})"


@dataclass(frozen=True)
class KeyRequest:
    requester: str
    peer: str
    purpose: str = "traffic"
    requested_bits: int = 256


@dataclass(frozen=True)
class KeyGrant:
    key_id: Optional[str] = None
    key: Optional[bytes] = field(default=None, repr=False)
    link_id: Optional[str] = None
    denial: Optional[Denial] = None

    @property
    def ok(self) -> bool:
        return self.denial is None


@dataclass(frozen=True)
class AuditRecord:
    time_us: int
    event: str
    key_id: str
    link_id: str
    state_from: str
    state_to: str

    def line(self) -> str:
        return f"{self.time_us},{self.event},{self.key_id},{self.link_id},{self.state_from},{self.state_to}"


AUDIT_HEADER = "time,event,key_id,link_id,state_from,state_to"


class KeyManagementService:
    def __init__(self, low_watermark: int = DEFAULT_LOW_WATERMARK):
        self.low_watermark = low_watermark
        self._links: dict[str, frozenset] = {}
        self._pair_to_link: dict[frozenset, str] = {}
        self._pools: dict[str, deque] = {}
        self._entries: dict[str, KeyPoolEntry] = {}
        self.audit: list[AuditRecord] = []
        self._clock_us = -1
        self.ingested = 0

    # -- registry ---------------------------------------------------------

    def register_link(self, link_id: str, a: str, b: str) -> None:
        pair = frozenset((a, b))
        if link_id in self._links or pair in self._pair_to_link:
            raise KmsError(f"link {link_id} already registered")
        self._links[link_id] = pair
        self._pair_to_link[pair] = link_id
        self._pools[link_id] = deque()

    def link_for(self, a: str, b: str) -> Optional[str]:
        return self._pair_to_link.get(frozenset((a, b)))

    @property
    def links(self) -> tuple[str, ...]:
        return tuple(self._links)

    def pool_depth(self, link_id: str) -> int:
        return len(self._pools[link_id])

    def needs_refill(self, link_id: str) -> bool:
        return self.pool_depth(link_id) < self.low_watermark

    def entry(self, key_id: str) -> KeyPoolEntry:
        return self._entries[key_id]

    # -- audit ------------------------------------------------------------

    def _log(self, now_ms: int, event: str, e: KeyPoolEntry, before: str, after: str) -> None:
        self._clock_us = max(now_ms * 1000, self._clock_us + 1)
        rec = AuditRecord(self._clock_us, event, e.key_id, e.link_id, before, after)
        self.audit.append(rec)
        log.debug("kms %s", rec.line())

    def audit_lines(self) -> list[str]:
        return [AUDIT_HEADER] + [r.line() for r in self.audit]

    # -- operations -------------------------------------------------------

    def ingest_key_block(self, block: QkdKeyBlock, now: Optional[int] = None) -> str:
        if block.source_status is not RoundStatus.DISTILLED:
            raise KmsError("key block does not come from a distilled round")
        if block.link_id not in self._links:
            raise KmsError(f"unknown link {block.link_id}")
        if block.key_id in self._entries:
            raise KmsError(f"duplicate key_id {block.key_id}")
        now = block.created_at if now is None else now
        e = KeyPoolEntry(block.key_id, bytearray(block.key), block.link_id, now)
        self._entries[e.key_id] = e
        self._pools[e.link_id].append(e.key_id)
        self.ingested += 1
        self._log(now, "ingest", e, "-", KeyState.AVAILABLE.value)
        return e.key_id

    def request_key(self, req: KeyRequest, now: int = 0) -> KeyGrant:
        """Assign the oldest available key on the pair's link to the requester."""
        link_id = self.link_for(req.requester, req.peer)
        if link_id is None:
            return KeyGrant(denial=Denial.UNKNOWN_PAIR)
        pool = self._pools[link_id]
        if not pool:
            return KeyGrant(link_id=link_id, denial=Denial.EMPTY_POOL)
        e = self._entries[pool.popleft()]
        e.state = KeyState.ASSIGNED
        e.assigned_to = (req.requester, req.peer)
        e.fetched_by.add(req.requester)
        self._log(now, "assign", e, KeyState.AVAILABLE.value, KeyState.ASSIGNED.value)
        return KeyGrant(e.key_id, bytes(e.key), link_id)

    def fetch_key(self, key_id: str, node: str, now: int = 0) -> KeyGrant:
        """Peer-side retrieval of an assigned key; each endpoint gets it once."""
        e = self._entries.get(key_id)
        if e is None:
            return KeyGrant(denial=Denial.UNKNOWN_KEY)
        if e.state is not KeyState.ASSIGNED:
            return KeyGrant(key_id, link_id=e.link_id, denial=Denial.NOT_ASSIGNED)
        if node not in e.assigned_to:
            return KeyGrant(key_id, link_id=e.link_id, denial=Denial.NOT_AN_ENDPOINT)
        if node in e.fetched_by:
            return KeyGrant(key_id, link_id=e.link_id, denial=Denial.ALREADY_FETCHED)
        e.fetched_by.add(node)
        self._log(now, "fetch", e, KeyState.ASSIGNED.value, KeyState.ASSIGNED.value)
        return KeyGrant(key_id, bytes(e.key), e.link_id)

    def consume_key(self, key_id: str, now: int = 0) -> None:
        e = self._entries.get(key_id)
        if e is None:
            raise KmsError(f"unknown key_id {key_id}")
        if e.state is not KeyState.ASSIGNED:
            raise KmsError(f"key {key_id} is {e.state.value}, expected Assigned")
        e.state = KeyState.CONSUMED
        for i in range(len(e.key)):
            e.key[i] = 0
        self._log(now, "consume", e, KeyState.ASSIGNED.value, KeyState.CONSUMED.value)

    def counts(self) -> dict[str, int]:
        out = {s.value: 0 for s in KeyState}
        for e in self._entries.values():
            out[e.state.value] += 1
        out["ingested"] = self.ingested
        return out

    def check_conservation(self) -> bool:
        c = self.counts()
        return c["ingested"] - c["Available"] - c["Assigned"] - c["Consumed"] == 0


class SdnController:
    """Routes key requests to the KMS and raises refill signals per link."""

    def __init__(self, kms: KeyManagementService, node_id: str = "kms"):
        self.kms = kms
        self.node_id = node_id
        self.refill_requests: list[tuple[int, str]] = []

    def route_key_request(self, req: KeyRequest, now: int) -> KeyGrant:
        grant = self.kms.request_key(req, now)
        link_id = grant.link_id
        if link_id is not None and self.kms.needs_refill(link_id):
            self.refill_requests.append((now, link_id))
        return grant

    def drain_refills(self) -> list[tuple[int, str]]:
        out, self.refill_requests = self.refill_requests, []
        return out
