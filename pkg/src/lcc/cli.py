"""Command-line surface: encode, recover, stats, sim.

Exit codes: 0 success, 1 I/O failure, 2 invalid flags or unknown
experiment, 3 corrupt input / missing step, 4 checksum failure during
recovery. The LCC_LOG environment variable (error|warn|info|debug) sets
the log level. A --config file holds flat key=value lines whose keys match
long flag names; explicit flags win.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import struct
import sys
from dataclasses import replace
from pathlib import Path
from typing import BinaryIO, Iterator, Optional

import numpy as np

from . import lab
from .errors import (
    ChainError,
    CorruptionError,
    DomainError,
    EncodingError,
    LccError,
    PipelineError,
    ShapeError,
    StorageError,
)
from .pipeline import CheckpointEncoder, PipelineBudget
from .rd import RDConfig
from .state import ModelState
from .store import ChainStore, parse_record, serialize_state

log = logging.getLogger("lcc")

_LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def _configure_logging() -> None:
    level = os.environ.get("LCC_LOG", "warn").lower()
    if level not in _LOG_LEVELS:
        level = "warn"
    logging.basicConfig(
        level=_LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s"
    )


# -- input framing -----------------------------------------------------------


def read_state_file(path: Path) -> Iterator[ModelState]:
    """Concatenated full-state records (the recover output format)."""
    data = path.read_bytes()
    pos = 0
    while pos < len(data):
        record, used = parse_record(data[pos:], origin=f"{path}@{pos}: ")
        if record.kind != "state":
            raise CorruptionError(f"{path}: expected full-state records")
        yield record.state
        pos += used


def read_state_stream(stream: BinaryIO) -> Iterator[ModelState]:
    """Length-prefixed full-state frames (u64 LE + record) on a pipe."""
    while True:
        prefix = stream.read(8)
        if not prefix:
            return
        if len(prefix) != 8:
            raise CorruptionError("truncated frame length prefix")
        (length,) = struct.unpack("<Q", prefix)
        frame = stream.read(length)
        if len(frame) != length:
            raise CorruptionError("truncated state frame")
        record, _ = parse_record(frame, origin="stdin: ")
        if record.kind != "state":
            raise CorruptionError("expected full-state records on stdin")
        yield record.state


def _iter_states(spec: str) -> Iterator[ModelState]:
    if spec == "-":
        return read_state_stream(sys.stdin.buffer)
    return read_state_file(Path(spec))


# -- subcommands -------------------------------------------------------------


def cmd_encode(args: argparse.Namespace) -> int:
    if args.bits < 0:
        raise FlagError("--bits must be nonnegative")
    if args.every < 1:
        raise FlagError("--every must be at least 1")
    if args.async_depth < 0:
        raise FlagError("--async-depth must be nonnegative")

    states = _iter_states(args.input)
    try:
        first = next(states)
    except StopIteration:
        raise CorruptionError("input holds no states") from None

    store = ChainStore(args.out, create=True)
    budget = (
        PipelineBudget(max_inflight=args.async_depth, queue_depth=args.async_depth)
        if args.async_depth > 0
        else None
    )
    rd_config = (
        RDConfig(
            k_max=args.kmax,
            lam=args.lam,
            sample_cap=args.sample_cap,
            seed=args.seed,
        )
        if args.quantizer == "rd"
        else None
    )
    tickets = []
    with CheckpointEncoder(
        store,
        first,
        start_step=0,
        quantizer=args.quantizer,
        promotion_bits=args.bits,
        rd_config=rd_config,
        budget=budget,
        merge_every=args.merge_every,
    ) as enc:
        for index, state in enumerate(states, start=1):
            if index % args.every != 0:
                continue
            tickets.append(enc.submit(state, index))
        enc.flush()
    raw_bytes = 0
    delta_bytes = 0
    n = len(first)
    for t in tickets:
        if t.status != "committed":
            continue
        raw_bytes += 4 * n
        delta_bytes += t.bytes_written
        print(
            f"step {t.step}: {t.bytes_written} bytes, "
            f"cumulative ratio {delta_bytes / raw_bytes:.4f}",
            file=sys.stderr,
        )
    return 0


def cmd_recover(args: argparse.Namespace) -> int:
    store = ChainStore(args.chain)
    state = store.recover(args.step)
    blob = serialize_state(state, args.step)
    if args.out == "-":
        sys.stdout.buffer.write(blob)
    else:
        Path(args.out).write_bytes(blob)
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    store = ChainStore(args.chain)
    rows = store.chunk_stats()
    header = (
        f"{'step':>6} {'kind':<6} {'k_pre':>5} {'k':>4} {'x':>2} "
        f"{'H(bits)':>8} {'E(B)':>10} {'E+P(B)':>10} {'E+P+H(B)':>10}"
    )
    print(header)
    total = 0
    for r in rows:
        total += r.file_bytes
        if r.kind != "delta":
            print(f"{r.step:>6} {r.kind:<6} {'-':>5} {'-':>4} {'-':>2} "
                  f"{'-':>8} {'-':>10} {'-':>10} {r.file_bytes:>10}")
            continue
        print(
            f"{r.step:>6} {r.kind:<6} {r.k_pre:>5} {r.k:>4} {r.promotion_bits:>2} "
            f"{r.entropy:>8.3f} {r.bits_e / 8:>10.1f} {r.bits_ep / 8:>10.1f} "
            f"{r.file_bytes:>10}"
        )
    print(f"total bytes: {total}")
    return 0


def cmd_sim(args: argparse.Namespace) -> int:
    cfg = lab.SimConfig(
        dim=args.dim,
        eta=args.eta,
        steps=args.steps,
        noise=lab.NoiseModel(scale=args.noise),
        seed=args.seed,
    )
    rows: list[dict] = []
    if args.experiment == "rework":
        failure = max(1, int(args.steps * 0.7))
        report = lab.rework_comparison(
            cfg,
            ("lc", "topn", "scar"),
            args.budget,
            failure,
            trials=args.trials,
        )
        for method, res in report.results.items():
            for trial, r in enumerate(res.rework):
                rows.append(
                    {
                        "method": method,
                        "budget": args.budget,
                        "trial": trial,
                        "rework_iters": int(r),
                        "bytes": res.bytes_per_step,
                        "final_distance": "",
                    }
                )
        fieldnames = ["method", "budget", "trial", "rework_iters", "bytes", "final_distance"]
    elif args.experiment == "convergence":
        for trial in range(args.trials):
            traj = lab.simulate(replace(cfg, seed=cfg.seed + trial))
            for step, d in enumerate(traj.distances):
                rows.append({"trial": trial, "step": step, "distance": repr(float(d))})
        fieldnames = ["trial", "step", "distance"]
    elif args.experiment == "ablation":
        for trial in range(args.trials):
            pairs = lab.priority_ablation(
                replace(cfg, seed=cfg.seed + trial), args.theta, args.m
            )
            for exponent, err in pairs:
                rows.append(
                    {
                        "trial": trial,
                        "m": args.m,
                        "exponent": exponent,
                        "relative_error": repr(float(err)),
                    }
                )
        fieldnames = ["trial", "m", "exponent", "relative_error"]
    else:  # coupling
        fractions = lab.coupling_report(cfg)
        for d, frac in fractions.items():
            rows.append({"dim": d, "dominance_fraction": repr(float(frac))})
        fieldnames = ["dim", "dominance_fraction"]

    out = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    try:
        writer = csv.DictWriter(out, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


# -- argument plumbing -------------------------------------------------------


class FlagError(LccError):
    """Flag validation failure surfaced with exit code 2."""


def _load_config(path: str) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FlagError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="lcc",
        description="Lossy delta-compressed checkpoint codec and simulation lab.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    enc = sub.add_parser("encode", help="compress a stream of states into a chain")
    enc.add_argument("--in", dest="input", required=True,
                     help="state file, or - for length-prefixed frames on stdin")
    enc.add_argument("--out", required=True, help="chain directory")
    enc.add_argument("--bits", type=int, default=2,
                     help="promotion bits x (0 disables promotion)")
    enc.add_argument("--quantizer", choices=("exp", "rd"), default="exp")
    enc.add_argument("--lambda", dest="lam", type=float, default=0.1,
                     help="entropy weight for the rd quantizer")
    enc.add_argument("--kmax", type=int, default=8,
                     help="interval budget for the rd quantizer")
    enc.add_argument("--sample-cap", type=int, default=4096,
                     help="rd quantizer sampling threshold")
    enc.add_argument("--seed", type=int, default=0, help="rd sampling seed")
    enc.add_argument("--every", type=int, default=1,
                     help="checkpoint every N-th state")
    enc.add_argument("--merge-every", type=int, default=0,
                     help="write a merged super-step after every M deltas")
    enc.add_argument("--async-depth", type=int, default=0,
                     help="encode pipeline depth (0 = synchronous)")
    enc.add_argument("--config", help="key=value defaults file")
    enc.set_defaults(func=cmd_encode)

    rec = sub.add_parser("recover", help="rebuild the state at a step")
    rec.add_argument("chain", help="chain directory")
    rec.add_argument("--step", type=int, required=True)
    rec.add_argument("--out", required=True, help="output state file, or -")
    rec.add_argument("--config", help="key=value defaults file")
    rec.set_defaults(func=cmd_recover)

    sta = sub.add_parser("stats", help="per-chunk compression breakdown")
    sta.add_argument("chain", help="chain directory")
    sta.add_argument("--config", help="key=value defaults file")
    sta.set_defaults(func=cmd_stats)

    sim = sub.add_parser("sim", help="run a lab experiment, emit CSV")
    sim.add_argument(
        "experiment", choices=("rework", "ablation", "convergence", "coupling")
    )
    sim.add_argument("--out", default="-", help="CSV path, or - for stdout")
    sim.add_argument("--budget", type=float, default=0.05)
    sim.add_argument("--trials", type=int, default=50)
    sim.add_argument("--eta", type=float, default=0.95)
    sim.add_argument("--noise", type=float, default=0.3)
    sim.add_argument("--dim", type=int, default=1024)
    sim.add_argument("--steps", type=int, default=200)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--m", type=int, default=10, help="ablation iteration gap")
    sim.add_argument("--theta", type=int, default=20,
                     help="ablation start step")
    sim.add_argument("--config", help="key=value defaults file")
    sim.set_defaults(func=cmd_sim)
    return parser, {"encode": enc, "recover": rec, "stats": sta, "sim": sim}


def main(argv: Optional[list[str]] = None) -> int:
    _configure_logging()
    parser, subcommands = build_parser()
    if argv is None:
        argv = sys.argv[1:]
    try:
        # first pass picks up --config so its values become flag defaults
        pre, _ = parser.parse_known_args(argv)
        if getattr(pre, "config", None):
            overrides = _load_config(pre.config)
            sub = subcommands[pre.command]
            known = {a.dest for a in sub._actions}
            unknown = set(overrides) - known
            if unknown:
                raise FlagError(f"unknown config keys: {sorted(unknown)}")
            for action in sub._actions:
                if action.dest in overrides:
                    raw = overrides[action.dest]
                    value = action.type(raw) if action.type else raw
                    sub.set_defaults(**{action.dest: value})
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on bad usage, 0 on --help
        return int(exc.code or 0)
    except FlagError as exc:
        print(f"lcc: {exc}", file=sys.stderr)
        return 2

    command = args.command
    try:
        return args.func(args)
    except FlagError as exc:
        print(f"lcc: {exc}", file=sys.stderr)
        return 2
    except CorruptionError as exc:
        print(f"lcc: {exc}", file=sys.stderr)
        return 4 if command in ("recover", "stats") else 3
    except ChainError as exc:
        print(f"lcc: {exc}", file=sys.stderr)
        return 3
    except (DomainError, ShapeError, EncodingError, PipelineError) as exc:
        print(f"lcc: {exc}", file=sys.stderr)
        return 3
    except StorageError as exc:
        print(f"lcc: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"lcc: {exc}", file=sys.stderr)
        return 1


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
