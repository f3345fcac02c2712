"""Placement sweeps and adversary injection on top of the engine."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

from .config import ChallengeTamper, PlacementSet, QkdEve, ResponseTamper, World
from .engine import SimulationResult, run
from .metrics import _fmt

PLACEMENT_OPTIONS = ("1", "2", "3", "all")

COMPARISON_COLUMNS = (
    "placement", "handshakes", "rekeys", "handovers", "rekeys_per_handover",
    "key_establishment_ops", "qkd_rounds", "keys_consumed_bs_core", "keys_consumed_core_dn",
    "blocked_forwarding", "messages_delivered", "energy_handshake_j", "energy_app_aead_j",
    "energy_qkd_j", "energy_total_j", "latency_mean_us",
)


@dataclass(frozen=True)
class PlacementRow:
    placement: str
    handshakes: int
    rekeys: int
    handovers: int
    key_establishment_ops: int
    qkd_rounds: int
    keys_consumed_bs_core: int
    keys_consumed_core_dn: int
    blocked_forwarding: int
    messages_delivered: int
    energy: dict
    latency_mean_us: float

    @property
    def rekeys_per_handover(self) -> float:
        return self.rekeys / self.handovers if self.handovers else 0.0

    def values(self) -> list:
        e = self.energy
        return [self.placement, self.handshakes, self.rekeys, self.handovers,
                _fmt(self.rekeys_per_handover), self.key_establishment_ops, self.qkd_rounds,
                self.keys_consumed_bs_core, self.keys_consumed_core_dn, self.blocked_forwarding,
                self.messages_delivered, _fmt(e["handshake"]), _fmt(e["app_aead"]),
                _fmt(e["qkd"]), _fmt(e["total"]), _fmt(self.latency_mean_us)]


def summarize(option: str, result: SimulationResult) -> PlacementRow:
    r = result.report
    world = result.world
    core_dn = world.topology.core_dn_link
    bs_core = sum(v for k, v in r.keys_consumed_by_link.items() if k != core_dn)
    dn = r.keys_consumed_by_link.get(core_dn, 0)
    # handshakes only count as traffic-key establishment when they protect the air link
    traffic_handshakes = r.ue_handshakes if world.placements.ue_bs_pqc else 0
    return PlacementRow(option, r.ue_handshakes, r.ue_rekeys, r.handovers,
                        traffic_handshakes + bs_core + dn, r.qkd_rounds, bs_core, dn,
                        r.blocked_forwarding, r.messages_delivered, r.energy_totals(),
                        r.latency_stats()["mean"])


def compare_placements(world: World, options=PLACEMENT_OPTIONS) -> list[PlacementRow]:
    """Run the same world under each placement option; the insecure flag is implied."""
    rows = []
    for opt in options:
        w = replace(world, placements=PlacementSet.option(opt), insecure=True)
        rows.append(summarize(opt, run(w)))
    return rows


def comparison_csv(rows: list[PlacementRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARISON_COLUMNS)
    for row in rows:
        w.writerow(row.values())
    return buf.getvalue()


def inject_adversary(world: World, model: str, target: str = "") -> World:
    """Return a copy of ``world`` with one more adversary.

    ``model`` is ``qkd`` (full intercept-resend on a QKD link), ``signature``
    (flip a bit of every challenge signature sent to a UE) or ``response``
    (flip a bit of every RES sent by a UE). An empty target picks the first
    backbone link or the first UE.
    """
    topo = world.topology
    if model == "qkd":
        target = target or topo.backbone_link(topo.bs_ids[0])
        if target not in topo.qkd_links:
            raise ValueError(f"unknown QKD link {target!r}")
        adv = QkdEve(target, 1.0)
    elif model in ("signature", "response"):
        target = target or topo.ue_ids[0]
        if target not in topo.ue_ids:
            raise ValueError(f"unknown UE {target!r}")
        adv = ChallengeTamper(target) if model == "signature" else ResponseTamper(target)
    else:
        raise ValueError(f"unknown adversary model {model!r}")
    return replace(world, adversaries=world.adversaries + (adv,))
