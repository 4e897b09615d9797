"""Benchmark harness: run configured sorts and report measured vs predicted I/O."""

from __future__ import annotations

import time
from fractions import Fraction

import numpy as np

from .analysis import leading_factor, predict_merge_costs, predicted_phase_ops, sort_unit
from .baselines import (naive_striping_sort, predicted_sequential_ios,
                        predicted_striping_ios, sequential_sort)
from .guidesort import SortReport, guidesort
from .kernels import get_kernels
from .machine import ITEM_DTYPE, Machine
from .params import select_algorithm


def gen_keys(n: int, seed: int) -> np.ndarray:
    if n < 1:
        raise ValueError("need at least one key")
    rng = np.random.default_rng(seed)
    return rng.integers(0, 2 ** 64, size=n, dtype=np.uint64)


def make_items(keys: np.ndarray) -> np.ndarray:
    items = np.empty((len(keys), 2), dtype=ITEM_DTYPE)
    items[:, 0] = keys
    items[:, 1] = np.arange(len(keys), dtype=np.uint64)
    return items


def resolve_plan(m: int, B: int, D: int, algo: str, mode: str):
    if algo == "auto":
        return select_algorithm(m, B, D, "auto")
    if algo == "sequential":
        return select_algorithm(m, B, D, "sequential")
    if algo == "striping":
        return select_algorithm(m, B, D, "striping")
    if algo == "guidesort":
        return select_algorithm(m, B, D, mode if mode != "auto" else "guidesort")
    raise ValueError(f"unknown algorithm {algo!r}")


def run_sort(M: int, B: int, D: int, keys: np.ndarray, algo: str = "auto",
             mode: str = "auto", kernel: str = "auto"):
    """Sort a key array on a fresh machine; returns (sorted keys, row dict)."""
    machine = Machine(M, B, D)
    K = get_kernels(kernel)
    N = len(keys)
    items = make_items(keys)
    run = machine.store_striped(items)
    plan = resolve_plan(machine.m, B, D, algo, mode)
    rep = SortReport()
    brep: dict = {}
    t0 = time.perf_counter()
    if plan.variant == "sequential":
        out = sequential_sort(machine, run, kernels=K, report=brep)
    elif plan.variant == "striping":
        out = naive_striping_sort(machine, run, plan.arity, kernels=K, report=brep)
    else:
        out = guidesort(machine, run, plan.params, report=rep, kernels=K)
    wall = time.perf_counter() - t0
    sorted_items = machine.load_striped(out)
    row = {
        "M": M, "B": B, "D": D, "N": N,
        "algo": plan.variant,
        "kernel": K.IMPL,
        "input_ops": machine.stats.input_ops,
        "output_ops": machine.stats.output_ops,
        "total_ops": machine.stats.total_ops,
        "phases": {k: v[0] + v[1] for k, v in machine.stats.by_step().items()},
        "wall_s": wall,
    }
    if N > M:
        su = sort_unit(N, M, B)
        row["sort_unit"] = su
        row["ratio"] = float(Fraction(machine.stats.total_ops * D, su))
    row["leading_factor"] = float(leading_factor(machine.m, B, D))
    if plan.variant == "guidesort":
        row["params"] = plan.params.as_dict()
        row["z"] = rep.z_blocks
        row["y"] = rep.y_blocks
        row["n_merges"] = rep.n_merges
        row["n_terminal"] = rep.n_terminal
        terms = predict_merge_costs(plan.params, rep.z_blocks, rep.y_blocks, rep.n_merges)
        row["predicted_terms"] = {k: float(v) for k, v in terms.items() if k != "slack_units"}
        row["predicted_phases"] = {
            k: float(v)
            for k, v in predicted_phase_ops(plan.params, rep.z_blocks, rep.y_blocks, D).items()
        }
    elif plan.variant == "striping":
        row["arity"] = plan.arity
        row["predicted_ops"] = predicted_striping_ios(-(-N // B), D, plan.arity)
        row["merge_nodes"] = brep.get("merge_nodes", 0)
    else:
        row["predicted_ops"] = predicted_sequential_ios(N, M, B)
        row["merge_nodes"] = brep.get("merge_nodes", 0)
    return sorted_items, row


def parse_grid(specs: list[str]) -> list[dict]:
    """Expand grid rows like "M=1024,4096 B=64 D=2,4 N=100000 seeds=3 algo=guidesort".

    Each space-separated token is key=value with comma-separated alternatives;
    one row expands to the cross product.  ``seeds=k`` means seeds 0..k-1.
    """
    rows = []
    for spec in specs:
        fields: dict[str, list[str]] = {}
        for token in spec.split():
            if "=" not in token:
                raise ValueError(f"bad grid token {token!r}")
            key, val = token.split("=", 1)
            fields[key] = val.split(",")
        base: list[dict] = [{}]
        for key, vals in fields.items():
            base = [dict(cfg, **{key: v}) for cfg in base for v in vals]
        for cfg in base:
            seeds = range(int(cfg.pop("seeds", "1")))
            for seed in seeds:
                rows.append({
                    "M": int(cfg["M"]), "B": int(cfg["B"]), "D": int(cfg["D"]),
                    "N": int(cfg["N"]), "seed": seed,
                    "algo": cfg.get("algo", "auto"),
                    "mode": cfg.get("mode", "auto"),
                    "kernel": cfg.get("kernel", "auto"),
                })
    return rows


def run_grid(rows: list[dict], verify: bool = True) -> list[dict]:
    out = []
    for cfg in rows:
        row = dict(cfg)
        try:
            keys = gen_keys(cfg["N"], cfg["seed"])
            sorted_items, result = run_sort(cfg["M"], cfg["B"], cfg["D"], keys,
                                            cfg["algo"], cfg["mode"], cfg["kernel"])
            row.update(result)
            if verify:
                ok = bool(np.array_equal(np.sort(keys), sorted_items[:, 0]))
                row["verified"] = ok
                if not ok:
                    row["error"] = "output does not match the sorted key multiset"
        except Exception as exc:  # report the row, keep the run going
            row["error"] = f"{type(exc).__name__}: {exc}"
        out.append(row)
    return out


CSV_FIXED = ["M", "B", "D", "N", "seed", "algo", "input_ops", "output_ops",
             "total_ops", "sort_unit", "ratio", "leading_factor"]


def rows_to_csv(rows: list[dict]) -> str:
    steps = sorted({s for r in rows for s in r.get("phases", {})})
    header = CSV_FIXED + [f"phase:{s}" for s in steps] + ["error"]
    lines = [",".join(header)]
    for r in rows:
        cells = [str(r.get(c, "")) for c in CSV_FIXED]
        cells += [str(r.get("phases", {}).get(s, "")) for s in steps]
        cells.append(str(r.get("error", "")))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
