"""Command-line benchmark and verification runner."""

from __future__ import annotations

import argparse
import sys

from . import bench
from .mma import PROFILES


def _dims(text: str) -> tuple[int, ...]:
    """``16`` or ``16x16x16`` or ``16,16,16``."""
    parts = text.replace(",", "x").split("x")
    try:
        dims = tuple(int(p) for p in parts if p)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid size {text!r}") from None
    if not 1 <= len(dims) <= 3:
        raise argparse.ArgumentTypeError("grid must have 1 to 3 axes")
    return dims


def _int_list(text: str) -> list[int]:
    try:
        return [int(p) for p in text.split(",") if p]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None


def _dims_list(text: str) -> list[tuple[int, ...]]:
    return [_dims(p) for p in text.split(",") if p]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pic-mma",
        description="Time tiled against naive mass-matrix assembly and verify the result.")
    p.add_argument("--dims", type=_dims, default=(16, 16, 16),
                   help="cells per axis, e.g. 16x16x16 (default: %(default)s)")
    p.add_argument("--order", type=int, choices=(1, 2), default=1,
                   help="shape order: 1 = CIC, 2 = TSC")
    p.add_argument("--kind", choices=("scalar", "tensorial"), default="scalar")
    p.add_argument("--ppc", type=int, default=16, help="particles per cell")
    p.add_argument("--profile", choices=sorted(PROFILES), default=None,
                   help="tile profile (default: fp64-8x8x4 for order 1, tf32-16x16x8 for order 2)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=1, help="timing repetitions")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--distribution", choices=bench.DISTRIBUTIONS, default="uniform")
    sw = p.add_mutually_exclusive_group()
    sw.add_argument("--sweep-ppc", type=_int_list, metavar="LIST",
                    help="comma-separated ppc values, e.g. 1,13,64,128")
    sw.add_argument("--sweep-grid", type=_dims_list, metavar="LIST",
                    help="comma-separated grids, e.g. 8x8x8,16x16x16")
    p.add_argument("--out", default="results", help="output directory (default: %(default)s)")
    return p


def _fmt(x, spec: str) -> str:
    return "-" if x is None else format(x, spec)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        base = bench.RunConfig(dims=args.dims, order=args.order, kind=args.kind, ppc=args.ppc,
                               profile=args.profile, seed=args.seed, repeats=args.repeats,
                               threads=args.threads, distribution=args.distribution)
    except ValueError as exc:
        print(f"pic-mma: error: {exc}", file=sys.stderr)
        return 2

    if args.sweep_grid:
        axis, reports = "grid", bench.sweep(base, "grid", args.sweep_grid)
    elif args.sweep_ppc:
        axis, reports = "ppc", bench.sweep(base, "ppc", args.sweep_ppc)
    else:
        axis = "ppc"
        try:
            reports = [bench.run(base)]
        except ValueError as exc:
            print(f"pic-mma: error: {exc}", file=sys.stderr)
            return 2

    jpath, cpath = bench.write_outputs(reports, axis, args.out)
    print(f"{axis:>10} {'naive_ms':>10} {'tiled_ms':>10} {'speedup':>8} {'max_rel_err':>11}  checks")
    for r in reports:
        status = "ok" if r.checks_passed else (r.error or "FAILED " + ",".join(
            k for k, v in r.checks.items() if not v))
        print(f"{bench.axis_label(r, axis):>10} {_fmt(r.naive_median, '10.1f')} "
              f"{_fmt(r.tiled_median, '10.1f')} {_fmt(r.speedup, '8.2f')} "
              f"{_fmt(r.max_rel_err, '11.2e')}  {status}")
    print(f"wrote {jpath} and {cpath}")
    return 0 if all(r.checks_passed for r in reports) else 1


if __name__ == "__main__":
    sys.exit(main())
