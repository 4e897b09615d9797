"""Reference sorts: sequential multiway mergesort and naive lock-step striping.

Both use run formation followed by a merge tree.  The sequential sort keeps
single-disk semantics (one block per operation, output on disk 0 only); the
striping sort drives all D disks in lock-step, treating D corresponding
blocks as one superblock.  Source windows and the staged output block are
shadowed in plain arrays; the reservation ledger still charges the frames,
and every block movement happens through a counted I/O operation.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .analysis import ceil_log
from .blockio import alloc_striped, read_blocks, write_blocks
from .kernels import DONE, OUT_FULL, SRC_EMPTY, get_kernels
from .machine import ITEM_DTYPE, Machine, StripedRun


def predicted_striping_ios(n: int, D: int, arity: int) -> int:
    """2 * ceil(n/D) * ceil(log_arity(n/D)) — the naive-striping bound."""
    if arity < 2:
        raise ValueError("striping arity must be at least 2")
    nb = -(-n // D)
    return 2 * nb * ceil_log(arity, n, D)


def predicted_sequential_ios(N: int, M: int, B: int) -> int:
    """2n * (1 + ceil(log_m(N/M))): run formation plus the merge tree."""
    n = -(-N // B)
    m = M // B
    return 2 * n * (1 + ceil_log(m, N, M))


def sequential_sort(machine: Machine, run: StripedRun, arity: int | None = None, *,
                    kernels=None, report: dict | None = None) -> StripedRun:
    """Single-disk mergesort: one block per I/O, everything lands on disk 0."""
    if arity is None:
        arity = machine.m

    def alloc_linear(nb: int) -> StripedRun:
        return StripedRun((machine.alloc_region(0, nb),), (0,), 0, nb, nb * machine.B)

    out, nodes = _mergesort(machine, run, arity, 1, alloc_linear,
                            kernels or get_kernels(), "seq", report)
    return replace(out, num_items=run.num_items)


def naive_striping_sort(machine: Machine, run: StripedRun, arity: int, *,
                        kernels=None, report: dict | None = None) -> StripedRun:
    """Lock-step striping: D blocks per I/O, merging with the given arity."""
    if arity < 2:
        raise ValueError("striping arity must be at least 2")
    if arity * machine.D > machine.m:
        raise ValueError(
            f"striping needs arity*D <= m, got {arity}*{machine.D} > {machine.m}"
        )
    out, nodes = _mergesort(machine, run, arity, machine.D,
                            lambda nb: alloc_striped(machine, nb),
                            kernels or get_kernels(), "striping", report)
    return replace(out, num_items=run.num_items)


def _mergesort(machine, run, arity, width, alloc_out, K, prefix, report):
    runs = _form_runs(machine, run, width, alloc_out, f"{prefix}.form")
    nodes = 0
    level = 0
    while len(runs) > 1:
        level += 1
        nxt = []
        with machine.phase(f"{prefix}.merge@{level}"):
            for i in range(0, len(runs), arity):
                grp = runs[i:i + arity]
                if len(grp) == 1:
                    nxt.append(grp[0])
                    continue
                nxt.append(_merge_node(machine, grp, width, alloc_out, K))
                nodes += 1
        runs = nxt
    if report is not None:
        report["merge_nodes"] = nodes
        report["levels"] = level
    return runs[0], nodes


def _form_runs(machine, run, width, alloc_out, phase):
    B, m = machine.B, machine.m
    p = run.num_blocks
    runs = []
    with machine.phase(phase):
        buf = machine.reserve(m, contiguous=True)
        try:
            lo = buf.frames[0] * B
            for st in range(0, p, m):
                cnt = min(m, p - st)
                for j in range(0, cnt, width):
                    c = min(width, cnt - j)
                    read_blocks(machine, run, st + j, c, buf.frames[j:j + c])
                span = machine.mem[lo:lo + cnt * B]
                span[:] = span[np.lexsort((span[:, 1], span[:, 0]))]
                orun = alloc_out(cnt)
                for j in range(0, cnt, width):
                    c = min(width, cnt - j)
                    write_blocks(machine, orun, j, c, buf.frames[j:j + c])
                runs.append(orun)
        finally:
            machine.release(buf)
    return runs


def _merge_node(machine, grp, width, alloc_out, K):
    B = machine.B
    k = len(grp)
    W = width * B
    total = sum(r.num_blocks for r in grp)
    out = alloc_out(total)
    buf = machine.reserve(k * width)
    try:
        hm = K.HeapMerge(k, W)
        stage = np.empty((W, 2), dtype=ITEM_DTYPE)
        hm.set_out(stage)
        read_pos = [0] * k
        window = np.empty((W, 2), dtype=ITEM_DTYPE)

        def refill(i):
            done = read_pos[i]
            r = grp[i]
            if done >= r.num_blocks:
                return
            cnt = min(width, r.num_blocks - done)
            frames = buf.frames[i * width:i * width + cnt]
            read_blocks(machine, r, done, cnt, frames)
            for t, mf in enumerate(frames):
                window[t * B:(t + 1) * B] = machine.mem[mf * B:(mf + 1) * B]
            hm.set_source(i, window[:cnt * B])
            read_pos[i] = done + cnt

        for i in range(k):
            refill(i)
        out_written = 0
        while True:
            st, src = hm.run()
            if st == SRC_EMPTY:
                refill(src)
                continue
            nitems = hm.out_pos
            if nitems:
                if nitems % B:
                    raise RuntimeError("merge flush not block aligned")
                nb = nitems // B
                for t in range(nb):
                    mf = buf.frames[t]
                    machine.mem[mf * B:(mf + 1) * B] = stage[t * B:(t + 1) * B]
                write_blocks(machine, out, out_written, nb, buf.frames[:nb])
                out_written += nb
            hm.set_out(stage)
            if st == DONE:
                break
        if out_written != total:
            raise RuntimeError("merge node lost blocks")
    finally:
        machine.release(buf)
    return out
