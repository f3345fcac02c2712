"""Per-node counters, energy accounting and CSV export.

Energy is never accumulated during a run. It is computed at report time as
operation counts times the cost table, so it stays exactly linear in the
counts.
"""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass, field

from .config import EnergyCostTable

HANDSHAKE_OPS = ("kem_keygen", "kem_encap", "kem_decap", "ots_sign", "ots_verify", "kdf",
                 "classical_dh")


@dataclass
class NodeCounters:
    node: str
    role: str
    handshakes: int = 0
    rekeys: int = 0
    failed_handshakes: int = 0
    qkd_rounds: int = 0
    qkd_aborted: int = 0
    keys_consumed: int = 0
    bytes_encrypted: int = 0
    app_aead_bytes: int = 0
    ctrl_aead_bytes: int = 0
    ops: dict[str, int] = field(default_factory=lambda: dict.fromkeys(HANDSHAKE_OPS, 0))

    def energy(self, table: EnergyCostTable) -> dict[str, float]:
        handshake = sum(self.ops[op] * getattr(table, op) for op in HANDSHAKE_OPS)
        handshake += self.ctrl_aead_bytes * table.aead_per_byte
        app = self.app_aead_bytes * table.aead_per_byte
        qkd = self.qkd_rounds * table.qkd_round
        return {"handshake": handshake, "app_aead": app, "qkd": qkd,
                "total": handshake + app + qkd}


@dataclass
class MetricsReport:
    nodes: dict[str, NodeCounters]
    energy_table: EnergyCostTable
    latencies_us: list[int] = field(default_factory=list)
    handovers: int = 0
    initial_attaches: int = 0
    blocked_forwarding: int = 0
    aborted_rounds: int = 0
    compromised_links: list[str] = field(default_factory=list)
    established_sessions: int = 0
    established_by_ue: dict[str, int] = field(default_factory=dict)
    mismatched_sessions: int = 0
    messages_sent: int = 0
    messages_delivered: int = 0
    messages_dropped: int = 0
    messages_held: int = 0
    keys_consumed_by_link: dict[str, int] = field(default_factory=dict)
    keys_ingested: int = 0
    keys_granted: int = 0
    keys_fetched: int = 0
    forwards: dict[str, int] = field(default_factory=dict)

    def role_sum(self, role: str, attr: str) -> int:
        return sum(getattr(n, attr) for n in self.nodes.values() if n.role == role)

    @property
    def ue_handshakes(self) -> int:
        return self.role_sum("ue", "handshakes")

    @property
    def ue_rekeys(self) -> int:
        return self.role_sum("ue", "rekeys")

    @property
    def keys_consumed(self) -> int:
        return sum(n.keys_consumed for n in self.nodes.values())

    @property
    def qkd_rounds(self) -> int:
        # each round is counted at both endpoints
        return sum(n.qkd_rounds for n in self.nodes.values()) // 2

    def energy_totals(self) -> dict[str, float]:
        out = {"handshake": 0.0, "app_aead": 0.0, "qkd": 0.0, "total": 0.0}
        for n in self.nodes.values():
            for k, v in n.energy(self.energy_table).items():
                out[k] += v
        return out

    def latency_stats(self) -> dict[str, float]:
        xs = sorted(self.latencies_us)
        if not xs:
            return {"count": 0, "mean": 0.0, "p50": 0.0, "p95": 0.0, "max": 0.0}
        p95 = xs[min(len(xs) - 1, int(round(0.95 * (len(xs) - 1))))]
        return {"count": len(xs), "mean": statistics.fmean(xs), "p50": statistics.median(xs),
                "p95": float(p95), "max": float(xs[-1])}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for n in self.nodes.values():
            e = n.energy(self.energy_table)
            w.writerow([n.node, n.role, n.handshakes, n.rekeys, n.failed_handshakes, n.qkd_rounds,
                        n.qkd_aborted, n.keys_consumed, n.bytes_encrypted, n.app_aead_bytes,
                        n.ctrl_aead_bytes, *(n.ops[op] for op in HANDSHAKE_OPS),
                        _fmt(e["handshake"]), _fmt(e["app_aead"]), _fmt(e["qkd"]),
                        _fmt(e["total"]), "", "", "", "", "", "", ""])
        tot = self.energy_totals()
        lat = self.latency_stats()
        s = lambda attr: sum(getattr(n, attr) for n in self.nodes.values())  # noqa: E731
        w.writerow(["TOTAL", "network", s("handshakes"), s("rekeys"), s("failed_handshakes"),
                    self.qkd_rounds, self.aborted_rounds, s("keys_consumed"),
                    s("bytes_encrypted"), s("app_aead_bytes"), s("ctrl_aead_bytes"),
                    *(sum(n.ops[op] for n in self.nodes.values()) for op in HANDSHAKE_OPS),
                    _fmt(tot["handshake"]), _fmt(tot["app_aead"]), _fmt(tot["qkd"]),
                    _fmt(tot["total"]), self.messages_delivered, self.blocked_forwarding,
                    self.mismatched_sessions, lat["count"], _fmt(lat["mean"]), _fmt(lat["p95"]),
                    _fmt(lat["max"])])
        return buf.getvalue()


METRICS_COLUMNS = (
    "node", "role", "handshakes", "rekeys", "failed_handshakes", "qkd_rounds", "qkd_aborted",
    "keys_consumed", "bytes_encrypted", "app_aead_bytes", "ctrl_aead_bytes", *HANDSHAKE_OPS,
    "energy_handshake_j", "energy_app_aead_j", "energy_qkd_j", "energy_total_j",
    "messages_delivered", "blocked_forwarding", "mismatched_sessions", "latency_count",
    "latency_mean_us", "latency_p95_us", "latency_max_us",
)


def _fmt(x: float) -> str:
    return format(x, ".12g")
