"""Command-line interface.

Exit codes: 0 success, 1 the run finished but a check failed (a tampered
handshake, an aborted QKD demo), 2 configuration or usage error, 3 I/O
failure. Output files go to ``--out``, defaulting to ``$QSMN_OUT`` or
``./out``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

from .aka import (
    STEP_NAMES,
    BaseStation,
    UeIdentity,
    core_forward_session_key,
    describe,
    encode_message,
    run_handshake,
)
from .aka.handshake import CoreNetwork
from .aka.wire import decode_tlv, flip_field_bit
from .crypto.primitives import child_seed, expand
from .qkd import (
    Eavesdropper,
    QkdLinkConfig,
    RoundStatus,
    binomial_bounds,
    round_trace_csv,
    run_bb84_round,
)
from .sim import (
    ConfigError,
    PlacementSet,
    World,
    compare_placements,
    comparison_csv,
    inject_adversary,
    load_config,
    run,
)

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

DEFAULT_SUPI = b"imsi-001010000000001"
TEXT_FIELDS = frozenset({"ue_id", "bs_id", "key_id", "status", "qkd_key_id", "segment", "reason"})

class _IoFailure(Exception):
    pass


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get("QSMN_OUT") or "out")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise _IoFailure(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise _IoFailure(f"output directory {out} is not writable")
    return out


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise _IoFailure(f"cannot write {path}: {exc}") from None


def _world(args) -> World:
    if not args.config:
        raise ConfigError("--config is required for this command")
    world = load_config(args.config)
    if args.seed is not None:
        world = replace(world, seed=args.seed)
    if getattr(args, "placement", None):
        world = replace(world, placements=PlacementSet.option(args.placement), insecure=True)
    if getattr(args, "hybrid", False):
        world = replace(world, crypto=replace(world.crypto, hybrid=True))
    if getattr(args, "tamper", None):
        world = inject_adversary(world, args.tamper)
    return world


# ---- run ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    world = _world(args)
    out = _out_dir(args)
    result = run(world)
    r = result.report
    _write(out / "metrics.csv", r.to_csv())
    _write(out / "trace.jsonl", result.trace_text())
    _write(out / "audit.csv", "\n".join(result.audit) + "\n")
    e = r.energy_totals()
    lat = r.latency_stats()
    print(f"scenario {world.name} seed {world.seed} placement {world.placements.label}")
    print(f"  handshakes {r.ue_handshakes} (rekeys {r.ue_rekeys}, "
          f"failed {r.role_sum('ue', 'failed_handshakes')}) handovers {r.handovers}")
    print(f"  messages sent {r.messages_sent} delivered {r.messages_delivered} "
          f"dropped {r.messages_dropped} held {r.messages_held}")
    print(f"  qkd rounds {r.qkd_rounds} aborted {r.aborted_rounds} keys consumed {r.keys_consumed} "
          f"blocked forwarding {r.blocked_forwarding}")
    if r.compromised_links:
        print(f"  compromised links: {', '.join(r.compromised_links)}")
    print(f"  energy (cost table, J): handshake {e['handshake']:.6g} app {e['app_aead']:.6g} "
          f"qkd {e['qkd']:.6g} total {e['total']:.6g}")
    print(f"  latency us: mean {lat['mean']:.1f} p95 {lat['p95']:.1f} max {lat['max']:.1f}")
    print(f"  wrote {out / 'metrics.csv'}, {out / 'trace.jsonl'}, {out / 'audit.csv'}")
    return EXIT_OK


# ---- compare-placements -----------------------------------------------------------

def cmd_compare(args) -> int:
    world = _world(args)
    out = _out_dir(args)
    rows = compare_placements(world)
    _write(out / "comparison.csv", comparison_csv(rows))
    print(f"placement comparison for {world.name} (seed {world.seed}, "
          f"{world.handover_count()} handovers)")
    print("ranked by key-establishment operations (counts-based):")
    for i, row in enumerate(sorted(rows, key=lambda r: (r.key_establishment_ops, r.placement)), 1):
        print(f"  {i}. option {row.placement}: {row.key_establishment_ops} ops "
              f"({row.handshakes} handshakes, {row.rekeys} rekeys, "
              f"{row.keys_consumed_bs_core + row.keys_consumed_core_dn} QKD keys)")
    print("ranked by total energy (energy-table-based, placeholder costs):")
    for i, row in enumerate(sorted(rows, key=lambda r: (r.energy["total"], r.placement)), 1):
        print(f"  {i}. option {row.placement}: {row.energy['total']:.6g} J")
    for row in rows:
        if row.placement == "1":
            print(f"option 1 rekeys = {row.rekeys}, handovers = {row.handovers}"
                  f" ({'equal' if row.rekeys == row.handovers else 'NOT equal'})")
    print(f"wrote {out / 'comparison.csv'}")
    return EXIT_OK


# ---- qkd-demo ---------------------------------------------------------------------

def cmd_qkd_demo(args) -> int:
    if args.config:
        world = _world(args)
        link = world.qkd.link
        seed = world.seed
    else:
        link = QkdLinkConfig()
        seed = args.seed if args.seed is not None else 1
    if args.tamper == "qkd":
        link = replace(link, eavesdropper=Eavesdropper.intercept_all())
    elif args.tamper:
        raise ConfigError(f"--tamper {args.tamper} does not apply to qkd-demo")
    out = _out_dir(args)
    base = seed.to_bytes(8, "big")
    aborted = 0
    print(f"BB84 demo: {args.rounds} rounds x {link.pulses_per_round} pulses, "
          f"flip prob {link.channel_flip_prob}, eve {link.eavesdropper.model.value}, "
          f"threshold {link.qber_abort_threshold}")
    for i in range(args.rounds):
        res = run_bb84_round(link, child_seed(base, "qkd-demo", i), i, keep_trace=(i == 0))
        if i == 0:
            _write(out / "qkd_round0.csv", round_trace_csv(res))
        aborted += res.status is RoundStatus.ABORTED
        n_sample = max(1, res.disclosed_bits)
        lo, hi = binomial_bounds(n_sample, res.qber_estimate)
        lo = max(0.0, lo)
        print(f"  round {i}: sifted {len(res.sifted_bits_alice)} qber {res.qber_estimate:.4f} "
              f"[{lo:.4f}, {hi:.4f}] {res.status.value} extractable {res.extractable_bits}")
    print(f"aborted {aborted}/{args.rounds}; wrote {out / 'qkd_round0.csv'}")
    return EXIT_CHECK_FAILED if aborted and args.tamper != "qkd" else EXIT_OK


# ---- handshake-trace ----------------------------------------------------------------

def _tamper_fn(kind: Optional[str]):
    if kind is None:
        return None
    if kind == "qkd":
        raise ConfigError("--tamper qkd does not apply to handshake-trace")
    direction, field_name = ("core->ue", "signature") if kind == "signature" else ("ue->core", "res")

    def tamper(d: str, raw: bytes) -> bytes:
        if d != direction:
            return raw
        msg_type, _ = decode_tlv(raw)
        wanted = 0x02 if kind == "signature" else 0x03
        return flip_field_bit(raw, field_name) if msg_type == wanted else raw

    return tamper


def _print_message(direction: str, raw: bytes, verbose: bool) -> None:
    msg_type, _ = decode_tlv(raw)
    print(f"{STEP_NAMES[msg_type]}  [{direction}, {len(raw)} bytes]")
    print(f"  hex {raw.hex() if verbose else raw[:48].hex() + ('...' if len(raw) > 48 else '')}")
    for name, value in describe(raw):
        if name in TEXT_FIELDS:
            shown = repr(value.decode("ascii", "replace"))
        else:
            shown = value.hex() if len(value) <= 32 or verbose else value[:32].hex() + "..."
        print(f"    {name:<16} {len(value):>5}  {shown}")


def cmd_handshake_trace(args) -> int:
    if args.config:
        world = _world(args)
        spec = world.topology.ues[0]
        base = world.seed.to_bytes(8, "big")
        master = expand(base, f"master-key/{spec.ue_id}", 32)
        identity = UeIdentity(spec.supi, master)
        core = CoreNetwork(child_seed(base, "core"), {spec.supi: master},
                           params=world.crypto.params, signer_pool_size=2)
        ue_seed = child_seed(base, "ue", spec.ue_id)
        concealed = world.crypto.concealment
        hybrid = world.crypto.hybrid or args.hybrid
    elif args.seed is not None:
        base = args.seed.to_bytes(8, "big")
        master = expand(base, "master-key/ue", 32)
        identity = UeIdentity(DEFAULT_SUPI, master)
        core = CoreNetwork(child_seed(base, "core"), {DEFAULT_SUPI: master}, signer_pool_size=2)
        ue_seed = child_seed(base, "ue")
        concealed, hybrid = False, args.hybrid
    else:
        # the fixed inputs of the golden transcript
        identity = UeIdentity(DEFAULT_SUPI, bytes(range(32)))
        core = CoreNetwork(bytes(32), {DEFAULT_SUPI: identity.master_key}, signer_pool_size=2)
        ue_seed = bytes(range(32))
        concealed, hybrid = False, args.hybrid
    outcome = run_handshake(identity, ue_seed, core, concealed=concealed, hybrid=hybrid,
                            tamper=_tamper_fn(args.tamper))
    for direction, raw in outcome.wire:
        _print_message(direction, raw, args.verbose)
    if not outcome.established:
        print(f"result: Failed ({outcome.failure_reason})")
        return EXIT_CHECK_FAILED
    ctx = outcome.core_context
    print("key schedule:")
    for line in ctx.derivation:
        print(f"  {line}")
    backbone = ("demo-qkd-key", expand(ue_seed, "demo/backbone-key", 32))
    rec = core_forward_session_key(ctx, "bs1", require_protection=True, backbone_key=backbone)
    raw = encode_message(rec.message)
    _print_message("core->bs", raw, args.verbose)
    bs_ctx = BaseStation("bs1").install_forward(rec.message, backbone[1])
    agreed = outcome.ue_context.same_key(ctx) and bs_ctx.same_key(ctx)
    print(f"result: Established session_key_id {ctx.key_id} "
          f"forward {rec.status.value} agreement {'UE=core=BS' if agreed else 'MISMATCH'}")
    return EXIT_OK if agreed else EXIT_CHECK_FAILED


# ---- validate -----------------------------------------------------------------------

def cmd_validate(args) -> int:
    paths = list(args.paths) + ([args.config] if args.config else [])
    if not paths:
        raise ConfigError("nothing to validate; pass --config or config paths")
    for p in paths:
        w = load_config(p)
        print(f"ok {p}: {len(w.topology.ues)} UEs, {len(w.topology.bss)} BSs, "
              f"{w.handover_count()} handovers, placement {w.placements.label}")
    return EXIT_OK


# ---- entry ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="scenario YAML file")
    common.add_argument("--out", metavar="DIR", help="output directory (default $QSMN_OUT or ./out)")
    common.add_argument("--seed", type=_u64, metavar="U64", help="override the scenario seed")
    common.add_argument("--placement", choices=("1", "2", "3", "all"))
    common.add_argument("--tamper", choices=("signature", "response", "qkd"))
    common.add_argument("--hybrid", action="store_true", help="add the classical stub to the KEM")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="qsmn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="simulate a scenario").set_defaults(fn=cmd_run)
    sub.add_parser("compare-placements", parents=[common],
                   help="run every placement option and rank them").set_defaults(fn=cmd_compare)
    demo = sub.add_parser("qkd-demo", parents=[common], help="run standalone BB84 rounds")
    demo.add_argument("--rounds", type=int, default=5)
    demo.set_defaults(fn=cmd_qkd_demo)
    sub.add_parser("handshake-trace", parents=[common],
                   help="print one annotated handshake").set_defaults(fn=cmd_handshake_trace)
    val = sub.add_parser("validate", parents=[common], help="check configs without running")
    val.add_argument("paths", nargs="*")
    val.set_defaults(fn=cmd_validate)
    return parser


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _IoFailure as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
