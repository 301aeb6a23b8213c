"""Command-line front end.

Subcommands::

    driftcp generate --config FILE --out DIR      write a synthetic stream
    driftcp run --config FILE [--out FILE]        run an experiment
    driftcp report RESULTS.json --format csv      re-render a saved report
    driftcp match-debug OLD NEW [--threshold F]   similarity of two factor files

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .harness import ConfigError, MethodSpec, build_config, emit_report, load_config, load_report, run_experiment
from .matching import MatchOptions, best_assignment, find_concept_overlap, similarity_matrix
from .seekdestroy import load_checkpoint
from .streamgen import generate_stream, save_stream
from .tensor import TensorError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", metavar="PATH", help="key = value config file")
    p.add_argument("--seed", type=int, metavar="U64", help="root seed")
    p.add_argument("--out", metavar="PATH", help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="driftcp", description="Streaming CP decomposition with concept drift detection.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic stream to a directory")
    _add_common(g)
    g.add_argument("--dims", type=int, nargs=3, metavar=("I", "J", "K"))
    g.add_argument("--initial-rank", type=int)
    g.add_argument("--full-rank", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--noise", type=float, dest="noise_sigma")
    g.add_argument("--schedule", help="comma-separated batch ranks or ';'-separated active sets")

    r = sub.add_parser("run", help="run an experiment and emit a report")
    _add_common(r)
    r.add_argument("--stream", metavar="PATH", help="saved stream directory")
    r.add_argument("--threshold", type=float, help="matching threshold for every seek-and-destroy method")
    r.add_argument("--method", action="append", help="method tag, repeatable (e.g. baseline@full-rank)")
    r.add_argument("--trials", type=int)
    r.add_argument("--jobs", type=int)
    r.add_argument("--format", choices=("csv", "json"))
    r.add_argument("--oracle-ranks", action="store_true", default=None, help="use ground-truth batch ranks")

    rep = sub.add_parser("report", help="re-render a saved JSON report")
    rep.add_argument("input", metavar="REPORT")
    rep.add_argument("--format", choices=("csv", "json"), default="csv")
    rep.add_argument("--out", metavar="PATH")

    m = sub.add_parser("match-debug", help="print the similarity matrix between two factor files")
    m.add_argument("old", metavar="OLD", help="text matrix or checkpoint holding the old A factor")
    m.add_argument("new", metavar="NEW", help="text matrix or checkpoint holding the batch A factor")
    m.add_argument("--threshold", type=float, default=0.6)
    m.add_argument("--out", metavar="PATH")
    return parser


def _raw_config(args) -> dict:
    raw = load_config(args.config) if args.config else {}
    if args.seed is not None:
        raw["seed"] = args.seed
    return raw


def _emit(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_generate(args) -> int:
    raw = _raw_config(args)
    for key in ("initial_rank", "full_rank", "batch_size", "noise_sigma", "schedule"):
        v = getattr(args, key)
        if v is not None:
            raw[key] = v
    if args.dims is not None:
        raw["dims"] = tuple(args.dims)
    if "dims" not in raw:
        raise ConfigError("generate needs dims (flag or config)")
    if not raw.get("stream") and not args.out and not raw.get("out"):
        raise ConfigError("generate needs --out DIR")
    cfg = build_config(raw)
    out = args.out or raw.get("out") or raw.get("stream")
    save_stream(generate_stream(cfg.spec), out)
    print(f"wrote {cfg.spec.n_batches} batches to {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    raw = _raw_config(args)
    if args.stream is not None:
        raw["stream"] = args.stream
        raw.pop("dims", None)
    for key in ("trials", "jobs", "format", "oracle_ranks"):
        v = getattr(args, key)
        if v is not None:
            raw[key] = v
    if args.method:
        raw["methods"] = tuple(MethodSpec.parse(t) for t in args.method)
    cfg = build_config(raw)
    if args.threshold is not None:
        if not 0 < args.threshold < 1:
            raise ConfigError("threshold must lie in (0, 1)")
        methods = tuple(replace(m, threshold=args.threshold) if m.name == "seek-and-destroy" else m for m in cfg.methods)
        cfg = replace(cfg, methods=methods)
    report = run_experiment(cfg)
    _emit(emit_report(report, cfg.format), args.out or cfg.out)
    return EXIT_OK


def cmd_report(args) -> int:
    report = load_report(args.input)
    _emit(emit_report(report, args.format), args.out)
    return EXIT_OK


def _load_factor(path) -> np.ndarray:
    p = Path(path)
    try:
        with open(p, "rb") as fh:
            head = fh.read(7)
    except OSError as exc:
        raise ConfigError(f"{p}: cannot read factor file ({exc.strerror or exc})") from None
    if head == b"SADST1\0":
        return np.asarray(load_checkpoint(p).A)
    try:
        m = np.loadtxt(p, ndmin=2)
    except ValueError as exc:
        raise ConfigError(f"{p}: not a numeric matrix ({exc})") from None
    norms = np.linalg.norm(m, axis=0)
    if np.any(norms == 0):
        raise ArithmeticError(f"{p}: factor has an all-zero column")
    return m / norms


def cmd_match_debug(args) -> int:
    old, new = _load_factor(args.old), _load_factor(args.new)
    if old.shape[0] != new.shape[0]:
        raise ConfigError(f"factor row counts differ: {old.shape[0]} vs {new.shape[0]}")
    sim = similarity_matrix(old, new, use_absolute=True)
    res = find_concept_overlap(old, new, MatchOptions(threshold=args.threshold))
    lines = ["# similarity (rows: old columns, cols: batch columns)"]
    lines += [" ".join(f"{v:.6f}" for v in row) for row in sim]
    lines.append("# assignment old -> batch")
    lines += [f"{i} -> {j} {sim[i, j]:.6f}" for i, j in best_assignment(sim)]
    lines.append(f"# overlap batch = {list(res.overlap_batch)}")
    lines.append(f"# overlap old = {list(res.overlap_old)}")
    lines.append(f"# new = {list(res.new_concepts)}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "report": cmd_report, "match-debug": cmd_match_debug}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"driftcp: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, TensorError, OSError, ValueError) as exc:
        print(f"driftcp: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
