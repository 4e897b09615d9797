"""Command-line harness: generate inputs, sort, verify, inspect parameters, bench.

Key files are raw little-endian unsigned 64-bit integers with no header.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import bench
from .kernels import available
from .params import MODES, ParamError, UnsupportedConfig, compute_auto_params, \
    compute_general_params, compute_simple_params, select_algorithm, validate_params


def read_keys(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) % 8:
        raise SystemExit(f"{path}: length {len(raw)} is not a multiple of 8 bytes")
    return np.frombuffer(raw, dtype="<u8").copy()


def write_keys(path: str, keys: np.ndarray) -> None:
    np.ascontiguousarray(keys, dtype=np.uint64).astype("<u8").tofile(path)


def cmd_gen(args) -> int:
    keys = bench.gen_keys(args.n, args.seed)
    write_keys(args.out, keys)
    print(f"wrote {args.n} keys (seed {args.seed}) to {args.out}")
    return 0


def cmd_sort(args) -> int:
    keys = read_keys(args.infile)
    sorted_items, row = bench.run_sort(args.M, args.B, args.D, keys,
                                       algo=args.algo, mode=args.mode,
                                       kernel=args.kernel)
    write_keys(args.out, sorted_items[:, 0])
    row["in"] = args.infile
    row["out"] = args.out
    text = json.dumps(row, indent=2, default=str)
    if args.stats:
        with open(args.stats, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def cmd_verify(args) -> int:
    inp = read_keys(args.infile)
    out = read_keys(args.out)
    sorted_ok = bool(np.all(out[:-1] <= out[1:])) if len(out) else True
    multiset_ok = len(inp) == len(out) and bool(np.array_equal(np.sort(inp), np.sort(out)))
    if sorted_ok and multiset_ok:
        print(f"PASS: {args.out} is a sorted permutation of {args.infile}")
        return 0
    if not sorted_ok:
        print(f"FAIL: {args.out} is not sorted")
    if not multiset_ok:
        print(f"FAIL: key multisets of {args.infile} and {args.out} differ")
    return 1


def cmd_params(args) -> int:
    m = args.M // args.B
    result: dict = {"M": args.M, "B": args.B, "D": args.D, "m": m, "mode": args.mode}
    try:
        if args.mode == "simple":
            p = compute_simple_params(m, args.B, args.D)
        elif args.mode == "general":
            p = compute_general_params(m, args.B, args.D)
        elif args.mode == "general-unchecked":
            p = compute_general_params(m, args.B, args.D, unchecked=True)
        elif args.mode == "auto":
            plan = select_algorithm(m, args.B, args.D, "auto")
            result["plan"] = plan.as_dict()
            p = plan.params
        else:
            p = compute_auto_params(m, args.B, args.D)
        if p is not None:
            result["params"] = p.as_dict()
            result["violations"] = validate_params(p, m, args.B, args.D)
    except (ParamError, UnsupportedConfig) as exc:
        result["error"] = str(exc)
        print(json.dumps(result, indent=2))
        return 1
    print(json.dumps(result, indent=2))
    return 0


def cmd_bench(args) -> int:
    rows = bench.parse_grid(args.grid or [])
    results = bench.run_grid(rows, verify=not args.no_verify)
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(bench.rows_to_csv(results))
        print(f"wrote {len(results)} rows to {args.csv}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2, default=str)
        print(f"wrote {len(results)} rows to {args.json}")
    if not args.csv and not args.json:
        print(bench.rows_to_csv(results), end="")
    failures = [r for r in results if "error" in r]
    if failures:
        print(f"{len(failures)} row(s) failed", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pdmsort",
                                 description="Parallel-disk-model sorting simulator")
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="generate a deterministic random key file")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen)

    s = sub.add_parser("sort", help="sort a key file on a simulated machine")
    s.add_argument("--in", dest="infile", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--M", type=int, required=True)
    s.add_argument("--B", type=int, required=True)
    s.add_argument("--D", type=int, required=True)
    s.add_argument("--algo", default="auto",
                   choices=["auto", "sequential", "striping", "guidesort"])
    s.add_argument("--mode", default="auto", choices=["auto", "simple", "general"])
    s.add_argument("--kernel", default="auto", choices=["auto", "compiled", "python"])
    s.add_argument("--stats", help="write the JSON stats report here instead of stdout")
    s.set_defaults(fn=cmd_sort)

    v = sub.add_parser("verify", help="check sortedness and multiset equality")
    v.add_argument("--in", dest="infile", required=True)
    v.add_argument("--out", required=True)
    v.set_defaults(fn=cmd_verify)

    p = sub.add_parser("params", help="print computed parameters as JSON")
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--B", type=int, required=True)
    p.add_argument("--D", type=int, required=True)
    p.add_argument("--mode", default="guidesort",
                   choices=["auto", "simple", "general", "general-unchecked", "guidesort"])
    p.set_defaults(fn=cmd_params)

    b = sub.add_parser("bench", help="run a grid of configurations")
    b.add_argument("--grid", action="append", required=True,
                   help='e.g. "M=16384 B=64 D=8 N=2097152 seeds=3 algo=guidesort"')
    b.add_argument("--csv")
    b.add_argument("--json")
    b.add_argument("--no-verify", action="store_true")
    b.set_defaults(fn=cmd_bench)

    k = sub.add_parser("kernels", help="show available kernel implementations")
    k.set_defaults(fn=lambda a: (print(json.dumps(available())), 0)[1])
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
