"""Monte-Carlo BB84 for the static backbone links.

A round prepares random bits in random bases, optionally lets an
intercept-resend eavesdropper measure and resend them, flips bits with the
channel error probability, and measures at Bob in random bases. Sifting
keeps matched-basis positions; a random sample of the sifted string is
disclosed to estimate the QBER and then discarded. Surviving bits are
reconciled by parity bisection (the simulator holds both strings, so it
knows when to stop) and privacy-amplified into a key block.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from . import kernels
from .crypto.primitives import expand, frame

DEFAULT_QBER_THRESHOLD = 0.11
MAX_RECONCILE_PASSES = 64


class QkdError(Exception):
    pass


class InsufficientKeyMaterial(QkdError):
    """Round produced fewer extractable bits than requested; re-run it."""


class EveModel(Enum):
    NONE = "none"
    INTERCEPT_RESEND_ALL = "intercept_resend_all"
    INTERCEPT_RESEND_FRACTION = "intercept_resend_fraction"


@dataclass(frozen=True)
class Eavesdropper:
    model: EveModel = EveModel.NONE
    fraction: float = 0.0

    def __post_init__(self):
        if self.model is EveModel.INTERCEPT_RESEND_FRACTION and not 0.0 <= self.fraction <= 1.0:
            raise ValueError("intercept fraction must be in [0, 1]")

    @classmethod
    def none(cls) -> "Eavesdropper":
        return cls()

    @classmethod
    def intercept_all(cls) -> "Eavesdropper":
        return cls(EveModel.INTERCEPT_RESEND_ALL, 1.0)

    @classmethod
    def intercept_fraction(cls, p: float) -> "Eavesdropper":
        return cls(EveModel.INTERCEPT_RESEND_FRACTION, float(p))

    @property
    def intercept_prob(self) -> float:
        if self.model is EveModel.NONE:
            return 0.0
        if self.model is EveModel.INTERCEPT_RESEND_ALL:
            return 1.0
        return self.fraction


@dataclass(frozen=True)
class QkdLinkConfig:
    pulses_per_round: int = 4096
    channel_flip_prob: float = 0.0
    eavesdropper: Eavesdropper = field(default_factory=Eavesdropper)
    qber_abort_threshold: float = DEFAULT_QBER_THRESHOLD
    sample_fraction: float = 0.1
    target_block_bits: int = 256

    def __post_init__(self):
        if not 0.0 <= self.channel_flip_prob < 0.5:
            raise ValueError("channel_flip_prob must be in [0, 0.5)")
        if not 0.0 < self.sample_fraction < 1.0:
            raise ValueError("sample_fraction must be in (0, 1)")
        if not 0.0 < self.qber_abort_threshold < 0.5:
            raise ValueError("qber_abort_threshold must be in (0, 0.5)")
        if self.target_block_bits <= 0 or self.target_block_bits % 8:
            raise ValueError("target_block_bits must be a positive multiple of 8")
        if self.pulses_per_round < 1:
            raise ValueError("pulses_per_round must be positive")


class RoundStatus(Enum):
    DISTILLED = "Distilled"
    ABORTED = "Aborted"


@dataclass(frozen=True)
class PulseTrace:
    alice_bits: bytes
    alice_bases: bytes
    eve_acted: bytes
    bob_bases: bytes
    bob_bits: bytes
    sifted: bytes
    disclosed: bytes


@dataclass(frozen=True)
class QkdRoundResult:
    """Outcome of one batch. Bit strings hold one 0/1 value per byte."""

    round_id: str
    sim_time: int
    sifted_bits_alice: bytes
    sifted_bits_bob: bytes
    sifted_fraction: float
    qber_estimate: float
    status: RoundStatus
    disclosed_bits: int
    reconciled_alice: bytes = b""
    reconciled_bob: bytes = b""
    leaked_parity_bits: int = 0
    trace: Optional[PulseTrace] = field(default=None, compare=False, repr=False)

    @property
    def extractable_bits(self) -> int:
        if self.status is not RoundStatus.DISTILLED:
            return 0
        return max(0, len(self.reconciled_alice) - self.leaked_parity_bits)


@dataclass(frozen=True)
class QkdKeyBlock:
    key_id: str
    key: bytes
    link_id: str
    created_at: int
    source_status: RoundStatus = RoundStatus.DISTILLED

    def __repr__(self) -> str:
        return f"QkdKeyBlock(key_id={self.key_id!r}, link_id={self.link_id!r}, bits={8 * len(self.key)})"


def _seed_bytes(seed) -> bytes:
    if isinstance(seed, int):
        return seed.to_bytes(16, "little", signed=False)
    return bytes(seed)


def _rng(seed: bytes, label: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int.from_bytes(expand(seed, label, 16), "little")))


def reconcile(alice: np.ndarray, bob: np.ndarray,
              rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Equalize ``bob`` to ``alice`` by repeated shuffled parity bisection.

    Returns the corrected copy of ``bob`` and the number of parity bits
    revealed. Ground truth only picks block sizes and decides when to stop;
    every correction still goes through disclosed parities.
    """
    bob = bob.copy()
    n = alice.shape[0]
    leaked = 0
    order = np.arange(n, dtype=np.int64)
    for _ in range(MAX_RECONCILE_PASSES):
        remaining = int(np.count_nonzero(alice != bob))
        if remaining == 0:
            return bob, leaked
        # ~0.73 expected errors per block maximizes odd-parity blocks.
        block = min(n, max(2, int(0.73 * n / remaining)))
        _, pass_leaked = kernels.parity_bisect_pass(alice, bob, order, block)
        leaked += pass_leaked
        order = rng.permutation(n).astype(np.int64)
    if not np.array_equal(alice, bob):
        raise QkdError("reconciliation did not converge")
    return bob, leaked


def run_bb84_round(config: QkdLinkConfig, seed, sim_time: int = 0, *,
                   keep_trace: bool = False) -> QkdRoundResult:
    if config.pulses_per_round < 1000:
        raise ValueError("pulses_per_round must be >= 1000 for a meaningful QBER estimate")
    seed = _seed_bytes(seed)
    n = config.pulses_per_round
    rng = _rng(seed, "qkd/pulses")

    def bits():
        return rng.integers(0, 2, n, dtype=np.uint8)

    alice_bits = bits()
    alice_bases = bits()
    eve_mask = (rng.random(n) < config.eavesdropper.intercept_prob).astype(np.uint8)
    eve_bases = bits()
    eve_rand = bits()
    flip_mask = (rng.random(n) < config.channel_flip_prob).astype(np.uint8)
    bob_bases = bits()
    bob_rand = bits()

    bob_bits = kernels.bb84_channel(alice_bits, alice_bases, eve_mask, eve_bases, eve_rand,
                                    flip_mask, bob_bases, bob_rand)

    sifted_idx = np.flatnonzero(alice_bases == bob_bases)
    sa = alice_bits[sifted_idx]
    sb = bob_bits[sifted_idx]
    k = sifted_idx.shape[0]

    sample_size = min(k, max(1, round(config.sample_fraction * k)))
    sample_rng = _rng(seed, "qkd/sample")
    sample = np.sort(sample_rng.choice(k, sample_size, replace=False)) if k else np.empty(0, np.int64)
    mismatches = int(np.count_nonzero(sa[sample] != sb[sample]))
    qber = mismatches / sample_size if sample_size else 1.0

    keep = np.ones(k, dtype=bool)
    keep[sample] = False
    status = RoundStatus.ABORTED if qber > config.qber_abort_threshold else RoundStatus.DISTILLED

    round_id = hashlib.sha256(frame([b"qkd/round", seed, str(sim_time).encode()])).hexdigest()[:16]

    rec_a = rec_b = b""
    leaked = 0
    if status is RoundStatus.DISTILLED:
        ra = sa[keep]
        rb, leaked = reconcile(ra, sb[keep], _rng(seed, "qkd/reconcile"))
        rec_a, rec_b = ra.tobytes(), rb.tobytes()

    trace = None
    if keep_trace:
        sifted_mask = np.zeros(n, dtype=np.uint8)
        sifted_mask[sifted_idx] = 1
        disclosed = np.zeros(n, dtype=np.uint8)
        disclosed[sifted_idx[sample]] = 1
        trace = PulseTrace(alice_bits.tobytes(), alice_bases.tobytes(), eve_mask.tobytes(),
                           bob_bases.tobytes(), bob_bits.tobytes(), sifted_mask.tobytes(),
                           disclosed.tobytes())

    return QkdRoundResult(
        round_id=round_id,
        sim_time=sim_time,
        sifted_bits_alice=sa.tobytes(),
        sifted_bits_bob=sb.tobytes(),
        sifted_fraction=k / n,
        qber_estimate=qber,
        status=status,
        disclosed_bits=sample_size,
        reconciled_alice=rec_a,
        reconciled_bob=rec_b,
        leaked_parity_bits=leaked,
        trace=trace,
    )


def detect_eavesdropper(result: QkdRoundResult, config: QkdLinkConfig) -> bool:
    return result.qber_estimate > config.qber_abort_threshold


def distill_key_block(result: QkdRoundResult, link_id: str, target_bits: int, *,
                      side: str = "alice") -> QkdKeyBlock:
    """Privacy-amplify one side's reconciled string into ``target_bits`` of key."""
    if result.status is not RoundStatus.DISTILLED:
        raise QkdError("cannot distill key from an aborted round")
    if target_bits <= 0 or target_bits % 8:
        raise ValueError("target_bits must be a positive multiple of 8")
    if target_bits > result.extractable_bits:
        raise InsufficientKeyMaterial(
            f"requested {target_bits} bits, only {result.extractable_bits} extractable")
    if side not in ("alice", "bob"):
        raise ValueError("side must be 'alice' or 'bob'")
    bits = result.reconciled_alice if side == "alice" else result.reconciled_bob
    packed = np.packbits(np.frombuffer(bits, dtype=np.uint8)).tobytes()
    key = expand(frame([packed, link_id.encode()]), "qkd/privacy-amplification", target_bits // 8)
    key_id = hashlib.sha256(frame([b"qkd/key-id", link_id.encode(), result.round_id.encode()])).hexdigest()[:16]
    return QkdKeyBlock(key_id=key_id, key=key, link_id=link_id, created_at=result.sim_time)


TRACE_COLUMNS = ("pulse_index", "alice_bit", "alice_basis", "eve_acted", "bob_basis",
                 "bob_bit", "sifted", "disclosed")


def round_trace_csv(result: QkdRoundResult) -> str:
    if result.trace is None:
        raise QkdError("round was run without keep_trace=True")
    t = result.trace
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    cols = (t.alice_bits, t.alice_bases, t.eve_acted, t.bob_bases, t.bob_bits, t.sifted, t.disclosed)
    for i, row in enumerate(zip(*cols)):
        w.writerow((i, *row))
    return buf.getvalue()


def binomial_bounds(n: int, p: float, sigmas: float = 3.0) -> tuple[float, float]:
    """p +/- sigmas * sqrt(p(1-p)/n)."""
    half = sigmas * math.sqrt(p * (1 - p) / n)
    return p - half, p + half
