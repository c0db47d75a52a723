"""Command-line front end.

Exit codes: 0 success, 1 invalid arguments or configuration, 2 I/O or file
format problems. Diagnostics go to stderr; results go to files or stdout.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys

from . import synth
from .core import PruneConfig, PrunerError
from .iaf import iaf_filter
from .pipeline import compare_methods, prune_volume, run_ablation, tau_sweep
from .tensor_io import (
    fmt_number,
    read_attention,
    read_volume,
    write_attention,
    write_result_json,
    write_volume,
)

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class InputFileError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _float_list(text: str):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    d = PruneConfig()
    p.add_argument("--volume", required=True, help="MPRV volume file")
    p.add_argument("--attention", help="MPRA attention file (default: toy encoder)")
    p.add_argument("--gamma", type=float, default=d.gamma)
    p.add_argument("--tau", type=float, default=d.tau)
    p.add_argument("--temperature", type=float, default=d.temperature)
    p.add_argument("--contextual-ratio", type=float, default=d.contextual_ratio)
    p.add_argument("--patch-size", type=int, default=d.patch_size)
    p.add_argument("--embed-dim", type=int, default=None, help="default: patch_size**2")
    p.add_argument("--heads", type=int, default=d.num_heads)
    p.add_argument("--head-dim", type=int, default=d.head_dim)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="volprune", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prune", help="run the full pipeline")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="result JSON path")
    p.add_argument("--timings", action="store_true",
                   help="record stage wall-clock times (output is then not reproducible)")

    p = sub.add_parser("slices", help="slice filtering only")
    p.add_argument("--volume", required=True)
    p.add_argument("--gamma", type=float, required=True)

    p = sub.add_parser("ablate", help="ablation variant table")
    _add_config_flags(p)

    p = sub.add_parser("sweep", help="tau sweep as CSV")
    _add_config_flags(p)
    p.add_argument("--taus", type=_float_list, required=True)

    p = sub.add_parser("compare", help="compare against fixed-ratio and uniform-slice baselines")
    _add_config_flags(p)
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--stride", type=int, default=None)

    p = sub.add_parser("synth", help="write synthetic inputs")
    gen = p.add_subparsers(dest="kind", required=True, parser_class=_Parser)
    g = gen.add_parser("step")
    g.add_argument("--depth", type=int, default=100)
    g.add_argument("--height", type=int, default=256)
    g.add_argument("--width", type=int, default=256)
    g.add_argument("--block", type=int, default=10)
    g.add_argument("--delta", type=float, default=0.1)
    g.add_argument("--out", required=True)
    g = gen.add_parser("lesion")
    g.add_argument("--depth", type=int, default=64)
    g.add_argument("--height", type=int, default=256)
    g.add_argument("--width", type=int, default=256)
    g.add_argument("--center", type=float, default=32.0)
    g.add_argument("--radius", type=float, default=20.0)
    g.add_argument("--amplitude", type=float, default=0.8)
    g.add_argument("--out", required=True)
    g = gen.add_parser("skewed-attn")
    g.add_argument("--slices", type=int, default=100)
    g.add_argument("--tokens", type=int, default=256)
    g.add_argument("--head-dim", type=int, default=16)
    g.add_argument("--dominant", type=int, default=0)
    g.add_argument("--gap", type=float, default=20.0)
    g.add_argument("--out", required=True)
    return parser


def _config(args) -> PruneConfig:
    return PruneConfig(
        gamma=args.gamma,
        tau=args.tau,
        temperature=args.temperature,
        contextual_ratio=args.contextual_ratio,
        patch_size=args.patch_size,
        embed_dim=args.embed_dim,
        num_heads=args.heads,
        head_dim=args.head_dim,
    )


def _load(args):
    try:
        vol = read_volume(args.volume)
        attention = read_attention(args.attention) if getattr(args, "attention", None) else None
    except (OSError, PrunerError) as exc:
        raise InputFileError(str(exc)) from exc
    return vol, attention


def _rounded(rows):
    return [{k: fmt_number(v) if isinstance(v, float) else v for k, v in row.items()} for row in rows]


def _dump_json(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2) + "\n")


def _run(args) -> None:
    if args.command == "synth":
        if args.kind == "step":
            write_volume(synth.make_step_volume(args.depth, args.height, args.width,
                                                args.block, args.delta), args.out)
        elif args.kind == "lesion":
            write_volume(synth.make_lesion_volume(args.depth, args.height, args.width,
                                                  args.center, args.radius, args.amplitude), args.out)
        else:
            stack = synth.make_skewed_headstack(args.tokens, args.head_dim, args.dominant, args.gap)
            write_attention([stack] * args.slices, args.out)
        return

    if args.command == "slices":
        vol, _ = _load(args)
        sys.stdout.write(json.dumps(list(iaf_filter(vol, args.gamma).retained)) + "\n")
        return

    vol, attention = _load(args)
    cfg = _config(args)
    if args.command == "prune":
        res = prune_volume(vol, cfg, attention)
        write_result_json(res, args.out, include_timings=args.timings)
    elif args.command == "ablate":
        _dump_json({"original_tokens": vol.depth * (vol.height // cfg.patch_size)
                    * (vol.width // cfg.patch_size),
                    "variants": _rounded(run_ablation(vol, cfg, attention))})
    elif args.command == "sweep":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["tau", "r_rate", "mean_mass"])
        for row in tau_sweep(vol, cfg, args.taus, attention):
            writer.writerow([repr(fmt_number(row[k])) for k in ("tau", "r_rate", "mean_mass")])
        sys.stdout.write(buf.getvalue())
    elif args.command == "compare":
        _dump_json({"ratio": fmt_number(args.ratio),
                    "methods": _rounded(compare_methods(vol, cfg, args.ratio, attention, args.stride))})


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _run(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except InputFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (PrunerError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
