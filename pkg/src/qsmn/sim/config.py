"""Scenario configuration: YAML loading, validation and world construction.

Validation errors carry the 1-based line of the offending node, found by
composing the YAML node tree alongside the plain load.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from ..crypto.lwe import PARAMETER_SETS, LweParameters
from ..qkd import Eavesdropper, QkdLinkConfig

CORE, DN, KMS = "core", "dn", "kms"
RESERVED_IDS = frozenset({CORE, DN, KMS})


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, source: str = "<config>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


# ---- world types -----------------------------------------------------------------

@dataclass(frozen=True)
class BaseStationSpec:
    bs_id: str
    position: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class UeSpec:
    ue_id: str
    supi: bytes


@dataclass(frozen=True)
class LinkLatency:
    ue_bs: int = 2
    bs_core: int = 5
    core_dn: int = 10


@dataclass(frozen=True)
class Topology:
    ues: tuple[UeSpec, ...]
    bss: tuple[BaseStationSpec, ...]
    latency: LinkLatency = LinkLatency()
    core: str = CORE
    dn: str = DN
    kms: str = KMS

    @property
    def bs_ids(self) -> tuple[str, ...]:
        return tuple(b.bs_id for b in self.bss)

    @property
    def ue_ids(self) -> tuple[str, ...]:
        return tuple(u.ue_id for u in self.ues)

    def backbone_link(self, bs_id: str) -> str:
        return f"{bs_id}~{self.core}"

    @property
    def core_dn_link(self) -> str:
        return f"{self.core}~{self.dn}"

    @property
    def qkd_links(self) -> dict[str, tuple[str, str]]:
        links = {self.backbone_link(b): (b, self.core) for b in self.bs_ids}
        links[self.core_dn_link] = (self.core, self.dn)
        return links


@dataclass(frozen=True)
class PlacementSet:
    ue_bs_pqc: bool = True
    bs_core_qkd: bool = True
    core_dn_qkd: bool = True

    @classmethod
    def option(cls, which: str) -> "PlacementSet":
        table = {
            "1": cls(True, False, False),
            "2": cls(False, True, False),
            "3": cls(False, False, True),
            "all": cls(True, True, True),
        }
        if which not in table:
            raise ValueError(f"placement must be one of {sorted(table)}")
        return table[which]

    @property
    def label(self) -> str:
        names = [n for n, on in (("1", self.ue_bs_pqc), ("2", self.bs_core_qkd),
                                 ("3", self.core_dn_qkd)) if on]
        if len(names) == 3:
            return "all"
        return "+".join(names) or "none"

    @property
    def any(self) -> bool:
        return self.ue_bs_pqc or self.bs_core_qkd or self.core_dn_qkd


@dataclass(frozen=True)
class TrafficFlow:
    ue_id: str
    start: int
    interval: int
    count: int
    size: int


@dataclass(frozen=True)
class EnergyCostTable:
    """Joules per operation. Defaults are order-of-magnitude placeholders, not measurements."""

    kem_keygen: float = 2.0e-4
    kem_encap: float = 2.5e-4
    kem_decap: float = 3.0e-4
    ots_sign: float = 5.0e-5
    ots_verify: float = 8.0e-5
    aead_per_byte: float = 2.0e-9
    qkd_round: float = 5.0e-2
    kdf: float = 1.0e-6
    classical_dh: float = 1.5e-4

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise ValueError(f"energy cost {f.name} must be a finite non-negative number")


@dataclass(frozen=True)
class OpLatencyTable:
    """Microseconds per operation, added to per-message latency. Placeholders."""

    kem_keygen: float = 40.0
    kem_encap: float = 50.0
    kem_decap: float = 60.0
    ots_sign: float = 15.0
    ots_verify: float = 30.0
    aead_per_byte: float = 0.004
    kdf: float = 1.0
    classical_dh: float = 30.0


@dataclass(frozen=True)
class CryptoSettings:
    params: LweParameters
    concealment: bool = True
    hybrid: bool = False
    envelopes_per_key: int = 1


@dataclass(frozen=True)
class QkdSettings:
    link: QkdLinkConfig = QkdLinkConfig()
    initial_blocks: int = 8
    low_watermark: int = 4
    refill_batch: int = 4
    round_duration_ms: int = 5
    max_consecutive_aborts: int = 5


@dataclass(frozen=True)
class QkdEve:
    link: str
    fraction: float = 1.0


@dataclass(frozen=True)
class ChallengeTamper:
    ue_id: str


@dataclass(frozen=True)
class ResponseTamper:
    ue_id: str


Adversary = Any  # QkdEve | ChallengeTamper | ResponseTamper


@dataclass(frozen=True)
class World:
    topology: Topology
    mobility: dict[str, tuple[tuple[int, str], ...]]
    placements: PlacementSet
    energy: EnergyCostTable
    seed: int
    traffic: tuple[TrafficFlow, ...] = ()
    crypto: CryptoSettings = field(default_factory=lambda: CryptoSettings(PARAMETER_SETS["lwe-256"]))
    qkd: QkdSettings = QkdSettings()
    op_latency: OpLatencyTable = OpLatencyTable()
    keep_keys_on_handover: bool = False
    insecure: bool = False
    adversaries: tuple[Adversary, ...] = ()
    name: str = "scenario"

    def handover_count(self, ue_id: Optional[str] = None) -> int:
        ues = [ue_id] if ue_id else list(self.mobility)
        return sum(max(0, len(self.mobility[u]) - 1) for u in ues)


# ---- loading ------------------------------------------------------------------------

class _Doc:
    """Plain data plus a path -> line map for error reporting."""

    def __init__(self, text: str, source: str):
        self.source = source
        self.lines: dict[tuple, int] = {}
        try:
            node = yaml.compose(text, Loader=yaml.SafeLoader)
            self.data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                              mark.line + 1 if mark else None, source) from None
        if node is not None:
            self._walk(node, ())

    def _walk(self, node, path: tuple) -> None:
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            seen = set()
            for k, v in node.value:
                key = k.value
                if key in seen:
                    raise ConfigError(f"duplicate key {key!r}", k.start_mark.line + 1, self.source)
                seen.add(key)
                self._walk(v, path + (key,))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                self._walk(v, path + (i,))

    def line(self, path: tuple) -> Optional[int]:
        while path and path not in self.lines:
            path = path[:-1]
        return self.lines.get(path)

    def error(self, path: tuple, message: str) -> ConfigError:
        return ConfigError(message, self.line(path), self.source)


def _section(doc: _Doc, data: dict, key: str, allowed: set, required: bool = False) -> dict:
    if key not in data:
        if required:
            raise doc.error((), f"missing required section {key!r}")
        return {}
    sec = data[key]
    if sec is None:
        return {}
    if not isinstance(sec, dict):
        raise doc.error((key,), f"section {key!r} must be a mapping")
    for k in sec:
        if k not in allowed:
            raise doc.error((key, k), f"unknown key {k!r} in {key!r}")
    return sec


def _int(doc, path, value, minimum=0) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise doc.error(path, f"{'.'.join(map(str, path))} must be an integer >= {minimum}")
    return value


def _bool(doc, path, value) -> bool:
    if not isinstance(value, bool):
        raise doc.error(path, f"{'.'.join(map(str, path))} must be true or false")
    return value


def _ident(doc, path, value) -> str:
    if not isinstance(value, str) or not value or "~" in value or "," in value:
        raise doc.error(path, "ids must be non-empty strings without '~' or ','")
    return value


TOP_KEYS = {"name", "seed", "network", "mobility", "traffic", "placements", "crypto", "qkd",
            "energy", "latency", "adversary"}


def parse_config(text: str, source: str = "<config>") -> World:
    doc = _Doc(text, source)
    data = doc.data
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping", 1, source)
    for k in data:
        if k not in TOP_KEYS:
            raise doc.error((k,), f"unknown top-level key {k!r}")
    if "seed" not in data:
        raise doc.error((), "missing required key 'seed'")
    seed = _int(doc, ("seed",), data["seed"])
    if seed >= 1 << 64:
        raise doc.error(("seed",), "seed must fit in 64 bits")

    net = _section(doc, data, "network", {"base_stations", "ues", "latency_ms"}, required=True)
    bss, ues, seen = [], [], set(RESERVED_IDS)
    for i, b in enumerate(net.get("base_stations") or []):
        p = ("network", "base_stations", i)
        if isinstance(b, str):
            b = {"id": b}
        if not isinstance(b, dict) or set(b) - {"id", "position"}:
            raise doc.error(p, "base station entries need 'id' and optional 'position'")
        bs_id = _ident(doc, p + ("id",), b.get("id"))
        if bs_id in seen:
            raise doc.error(p + ("id",), f"duplicate node id {bs_id!r}")
        seen.add(bs_id)
        pos = b.get("position", [0, 0])
        if (not isinstance(pos, list) or len(pos) != 2
                or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in pos)):
            raise doc.error(p + ("position",), "position must be [x, y]")
        bss.append(BaseStationSpec(bs_id, (float(pos[0]), float(pos[1]))))
    if not bss:
        raise doc.error(("network",), "at least one base station is required")
    for i, u in enumerate(net.get("ues") or []):
        p = ("network", "ues", i)
        if isinstance(u, str):
            u = {"id": u}
        if not isinstance(u, dict) or set(u) - {"id", "supi"}:
            raise doc.error(p, "UE entries need 'id' and optional 'supi'")
        ue_id = _ident(doc, p + ("id",), u.get("id"))
        if ue_id in seen:
            raise doc.error(p + ("id",), f"duplicate node id {ue_id!r}")
        seen.add(ue_id)
        supi = u.get("supi", f"imsi-00101{i + 1:010d}")
        if not isinstance(supi, str) or not supi:
            raise doc.error(p + ("supi",), "supi must be a non-empty string")
        ues.append(UeSpec(ue_id, supi.encode()))
    if not ues:
        raise doc.error(("network",), "at least one UE is required")
    if len({u.supi for u in ues}) != len(ues):
        raise doc.error(("network", "ues"), "duplicate supi")
    lat_raw = net.get("latency_ms") or {}
    if not isinstance(lat_raw, dict) or set(lat_raw) - {"ue_bs", "bs_core", "core_dn"}:
        raise doc.error(("network", "latency_ms"), "latency_ms keys are ue_bs, bs_core, core_dn")
    latency = LinkLatency(**{k: _int(doc, ("network", "latency_ms", k), v)
                             for k, v in lat_raw.items()})
    topo = Topology(tuple(ues), tuple(bss), latency)

    mob_raw = data.get("mobility")
    if not isinstance(mob_raw, dict):
        raise doc.error(("mobility",), "mobility must map each UE to a schedule")
    mobility = {}
    for ue_id, sched in mob_raw.items():
        p = ("mobility", ue_id)
        if ue_id not in topo.ue_ids:
            raise doc.error(p, f"mobility for unknown UE {ue_id!r}")
        if not isinstance(sched, list) or not sched:
            raise doc.error(p, "schedule must be a non-empty list of [time_ms, bs_id]")
        entries, last = [], -1
        for j, item in enumerate(sched):
            if not isinstance(item, list) or len(item) != 2:
                raise doc.error(p + (j,), "schedule entries are [time_ms, bs_id]")
            t = _int(doc, p + (j, 0), item[0])
            if t <= last:
                raise doc.error(p + (j,), "schedule times must be strictly increasing")
            if item[1] not in topo.bs_ids:
                raise doc.error(p + (j, 1), f"unknown base station {item[1]!r}")
            if entries and entries[-1][1] == item[1]:
                raise doc.error(p + (j, 1), "consecutive entries must change base station")
            entries.append((t, item[1]))
            last = t
        mobility[ue_id] = tuple(entries)
    for ue_id in topo.ue_ids:
        if ue_id not in mobility:
            raise doc.error(("mobility",), f"UE {ue_id!r} has no mobility schedule")

    traffic = []
    raw_traffic = data.get("traffic") or []
    if not isinstance(raw_traffic, list):
        raise doc.error(("traffic",), "traffic must be a list of flows")
    for i, f in enumerate(raw_traffic):
        p = ("traffic", i)
        keys = {"ue", "start", "interval", "count", "size"}
        if not isinstance(f, dict) or set(f) - keys or not {"ue", "start", "count"} <= set(f):
            raise doc.error(p, "flows need ue, start, count and optional interval, size")
        if f["ue"] not in topo.ue_ids:
            raise doc.error(p + ("ue",), f"traffic for unknown UE {f['ue']!r}")
        flow = TrafficFlow(f["ue"], _int(doc, p + ("start",), f["start"]),
                           _int(doc, p + ("interval",), f.get("interval", 100), 1),
                           _int(doc, p + ("count",), f["count"]),
                           _int(doc, p + ("size",), f.get("size", 64), 1))
        if flow.count and mobility[flow.ue_id][0][0] >= flow.start:
            raise doc.error(p + ("start",), "first attachment must precede first traffic event")
        traffic.append(flow)

    pl = _section(doc, data, "placements",
                  {"ue_bs_pqc", "bs_core_qkd", "core_dn_qkd", "insecure", "keep_keys_on_handover"})
    placements = PlacementSet(**{k: _bool(doc, ("placements", k), pl[k])
                                 for k in ("ue_bs_pqc", "bs_core_qkd", "core_dn_qkd") if k in pl})
    insecure = _bool(doc, ("placements", "insecure"), pl.get("insecure", False))
    keep_keys = _bool(doc, ("placements", "keep_keys_on_handover"),
                      pl.get("keep_keys_on_handover", False))
    if not placements.any and any(f.count for f in traffic) and not insecure:
        raise doc.error(("placements",),
                        "all placement flags are false with traffic present; set insecure: true")

    cr = _section(doc, data, "crypto", {"params", "concealment", "hybrid", "envelopes_per_key"})
    pname = cr.get("params", "lwe-256")
    if pname not in PARAMETER_SETS:
        raise doc.error(("crypto", "params"), f"unknown parameter set {pname!r}")
    crypto = CryptoSettings(
        PARAMETER_SETS[pname],
        _bool(doc, ("crypto", "concealment"), cr.get("concealment", True)),
        _bool(doc, ("crypto", "hybrid"), cr.get("hybrid", False)),
        _int(doc, ("crypto", "envelopes_per_key"), cr.get("envelopes_per_key", 1), 1),
    )

    link_keys = {"pulses_per_round", "channel_flip_prob", "qber_abort_threshold",
                 "sample_fraction", "target_block_bits"}
    sched_keys = {"initial_blocks", "low_watermark", "refill_batch", "round_duration_ms",
                  "max_consecutive_aborts"}
    qk = _section(doc, data, "qkd", link_keys | sched_keys)
    try:
        link_cfg = QkdLinkConfig(**{k: qk[k] for k in link_keys if k in qk})
    except (TypeError, ValueError) as exc:
        raise doc.error(("qkd",), f"invalid qkd settings: {exc}") from None
    if link_cfg.target_block_bits != 256:
        raise doc.error(("qkd", "target_block_bits"),
                        "target_block_bits must be 256; blocks are used as AEAD keys")
    if link_cfg.pulses_per_round < 1000:
        raise doc.error(("qkd", "pulses_per_round"), "pulses_per_round must be >= 1000")
    sched = {k: _int(doc, ("qkd", k), qk[k], 1 if k in ("round_duration_ms", "refill_batch",
                                                         "max_consecutive_aborts") else 0)
             for k in sched_keys if k in qk}
    qkd = QkdSettings(link_cfg, **sched)

    en = _section(doc, data, "energy", {f.name for f in fields(EnergyCostTable)})
    try:
        energy = EnergyCostTable(**en)
    except ValueError as exc:
        raise doc.error(("energy",), str(exc)) from None
    lt = _section(doc, data, "latency", {f.name for f in fields(OpLatencyTable)})
    for k, v in lt.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)) or v < 0:
            raise doc.error(("latency", k), f"latency.{k} must be a non-negative number")
    op_latency = OpLatencyTable(**lt)

    adversaries = []
    raw_adv = data.get("adversary") or []
    if not isinstance(raw_adv, list):
        raise doc.error(("adversary",), "adversary must be a list")
    for i, a in enumerate(raw_adv):
        try:
            adversaries.append(adversary_from_mapping(a, topo))
        except ValueError as exc:
            raise doc.error(("adversary", i), str(exc)) from None

    name = data.get("name", Path(source).stem if source != "<config>" else "scenario")
    return World(topo, mobility, placements, energy, seed, tuple(traffic), crypto, qkd,
                 op_latency, keep_keys, insecure, tuple(adversaries), str(name))


def adversary_from_mapping(a: Any, topo: Topology) -> Adversary:
    if not isinstance(a, dict) or "type" not in a:
        raise ValueError("adversary entries need a 'type'")
    kind = a["type"]
    if kind == "qkd_eve":
        link = a.get("link")
        if link not in topo.qkd_links:
            raise ValueError(f"unknown QKD link {link!r}")
        fraction = a.get("fraction", 1.0)
        Eavesdropper.intercept_fraction(fraction)  # range check
        return QkdEve(link, float(fraction))
    if kind in ("challenge_tamper", "response_tamper"):
        ue = a.get("ue")
        if ue not in topo.ue_ids:
            raise ValueError(f"unknown UE {ue!r}")
        return ChallengeTamper(ue) if kind == "challenge_tamper" else ResponseTamper(ue)
    raise ValueError(f"unknown adversary type {kind!r}")


def load_config(path) -> World:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError("config file not found", None, str(path)) from None
    return parse_config(text, str(path))


def build_scenario(config) -> tuple[Topology, dict, PlacementSet, EnergyCostTable, int]:
    """Return the world pieces from a path, YAML text or an already-built world."""
    if isinstance(config, World):
        world = config
    elif isinstance(config, Path) or (isinstance(config, str) and "\n" not in config):
        world = load_config(config)
    else:
        world = parse_config(config)
    return world.topology, world.mobility, world.placements, world.energy, world.seed
