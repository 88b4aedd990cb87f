"""Command-line entry point: ``macrerand run|wrap-table|link|vectors``."""

from __future__ import annotations

import argparse
import csv
import json
import random
import sys

from . import adversary as adv
from .core import NonceSpaceExhausted, OrderingError, ParameterError, Ptk, derive_rerand_mac
from .frames import MacAddress
from .mactable import TableError
from .sim import (DEFAULT_T_LADDER, ConfigError, emit_wrap_table, load_truth,
                  parse_config, run_scenario)

VECTOR_SEED = 20240601


def _run(args) -> int:
    with open(args.config) as f:
        config = parse_config(f.read())
    result = run_scenario(config, args.out)
    s = result.summary
    print(f"frames sent={s['frames_sent']} delivered={s['frames_delivered']} "
          f"dropped={s['frames_dropped']} rotations={s['rotations']} "
          f"nonce_reuse={s['nonce_reuse']}")
    for name, score in s["linkers"].items():
        print(f"linker {name}: accuracy={score['accuracy']:.4f} "
              f"stderr={score['stderr']:.4f} boundaries={score['boundaries']}")
    return 0


def _wrap_table(args) -> int:
    if args.t_values:
        ts = [int(x) for x in args.t_values.split(",")]
    else:
        ts = [t for t in DEFAULT_T_LADDER if args.t_min <= t <= args.t_max]
    sys.stdout.write(emit_wrap_table(args.frame_bits, int(args.bitrate), ts))
    return 0


_ATTACKS = {"timing": adv.link_timing, "sn": adv.link_sn, "pn": adv.link_pn}


def _link(args) -> int:
    with open(args.frame_log) as f:
        obs = adv.observations_from_log(f)
    with open(args.truth) as f:
        meta, truth = load_truth(f)
    if args.window is not None:
        window = int(args.window * 1_000_000)
    elif "window_s" in meta:
        window = int(meta["window_s"] * 1_000_000)
    else:
        window = int(meta.get("T", 2) * 1_000_000) // 2
    rng = random.Random(args.seed)
    sizes = None
    if args.attack == "nonce-prune":
        hyp = adv.link_pn(obs, window, rng)
        sizes = adv.nonce_collision_prune(obs, hyp, window).sizes
    else:
        hyp = _ATTACKS[args.attack](obs, window, rng)
    score = adv.score_linkage(truth, hyp)
    reports = adv.anonymity_reports(truth, obs, window, sizes)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["boundary", "anonymity_set", "accuracy"])
        for rep in reports:
            w.writerow([rep.boundary, rep.min_size, f"{score.per_boundary.get(rep.boundary, 0.0):.4f}"])
    finally:
        if args.out:
            out.close()
    print(f"attack={args.attack} accuracy={score.accuracy:.4f} stderr={score.stderr:.4f} "
          f"boundaries={score.boundaries}", file=sys.stderr)
    return 0


def vector_lines(n: int = 16, seed: int = VECTOR_SEED) -> list[str]:
    rng = random.Random(seed)
    lines = []
    for _ in range(n):
        base = MacAddress.random(rng)
        ptk = Ptk.random(rng)
        u = rng.getrandbits(64)
        mac = derive_rerand_mac(base, ptk, u)
        lines.append(f"{base.hex()} {ptk.secret.hex()} {u} {mac.hex()}")
    return lines


def _vectors(args) -> int:
    if args.emit:
        print("\n".join(vector_lines(args.count)))
        return 0
    bad = 0
    total = 0
    with open(args.check) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            total += 1
            base, ptk, u, want = line.split()
            got = derive_rerand_mac(MacAddress(bytes.fromhex(base)),
                                    Ptk(bytes.fromhex(ptk)), int(u))
            if got.hex() != want.lower():
                bad += 1
                print(f"line {lineno}: expected {want} got {got.hex()}", file=sys.stderr)
    print(f"{total - bad}/{total} vectors match")
    return 1 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="macrerand",
                                description="Runtime MAC re-randomization simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario file")
    r.add_argument("config")
    r.add_argument("--out", help="directory for frame log, truth, metrics and summary")
    r.set_defaults(fn=_run)

    w = sub.add_parser("wrap-table", help="PN split and wrap interval per T")
    w.add_argument("--frame-bits", type=int, required=True)
    w.add_argument("--bitrate", type=float, required=True)
    w.add_argument("--t-min", type=int, default=1)
    w.add_argument("--t-max", type=int, default=86400)
    w.add_argument("--t-values", help="comma-separated T list (overrides the ladder)")
    w.set_defaults(fn=_wrap_table)

    k = sub.add_parser("link", help="run a linker over a recorded frame log")
    k.add_argument("frame_log")
    k.add_argument("--attack", choices=["timing", "sn", "pn", "nonce-prune"], required=True)
    k.add_argument("--truth", required=True)
    k.add_argument("--window", type=float, help="seconds; default T/2")
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--out", help="CSV path (default stdout)")
    k.set_defaults(fn=_link)

    v = sub.add_parser("vectors", help="emit or check derivation test vectors")
    g = v.add_mutually_exclusive_group(required=True)
    g.add_argument("--emit", action="store_true")
    g.add_argument("--check", metavar="FILE")
    v.add_argument("--count", type=int, default=16)
    v.set_defaults(fn=_vectors)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ParameterError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NonceSpaceExhausted, OrderingError, TableError) as exc:
        print(f"aborted: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
