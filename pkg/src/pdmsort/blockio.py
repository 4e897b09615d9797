"""Helpers for moving striped runs through reserved memory frames."""

from __future__ import annotations

import numpy as np

from .machine import ITEM_DTYPE, Machine, StripedRun, dummy_rows


def alloc_striped(machine: Machine, nblocks: int, num_items: int | None = None) -> StripedRun:
    """Allocate fresh per-disk regions for a run of ``nblocks`` striped blocks."""
    D = machine.D
    bases = tuple(
        machine.alloc_region(r, (nblocks - r + D - 1) // D if r < nblocks else 0)
        for r in range(D)
    )
    if num_items is None:
        num_items = nblocks * machine.B
    return StripedRun(bases, tuple(range(D)), 0, nblocks, num_items)


def read_blocks(machine: Machine, run: StripedRun, start: int, cnt: int, frames) -> None:
    """Input blocks [start, start+cnt) of a run into the given memory frames."""
    td, tf, tmf = machine._tr_d, machine._tr_f, machine._tr_mf
    bases, disks, w = run.bases, run.disks, len(run.disks)
    off = run.offset + start
    for t in range(cnt):
        i = off + t
        r = i % w
        td[t] = disks[r]
        tf[t] = bases[r] + i // w
        tmf[t] = frames[t]
    machine.io_input_at(cnt)


def write_blocks(machine: Machine, run: StripedRun, start: int, cnt: int, frames) -> None:
    """Output memory frames to blocks [start, start+cnt) of a run."""
    td, tf, tmf = machine._tr_d, machine._tr_f, machine._tr_mf
    bases, disks, w = run.bases, run.disks, len(run.disks)
    off = run.offset + start
    for t in range(cnt):
        i = off + t
        r = i % w
        td[t] = disks[r]
        tf[t] = bases[r] + i // w
        tmf[t] = frames[t]
    machine.io_output_at(cnt)


def fill_frames(machine: Machine, frames, items: np.ndarray, pad_to_blocks: int | None = None):
    """Scatter items into consecutive reserved frames, dummy-padding the tail block."""
    B = machine.B
    n = items.shape[0]
    nb = -(-n // B) if pad_to_blocks is None else pad_to_blocks
    padded = items
    if nb * B > n:
        padded = np.vstack([items, dummy_rows(nb * B - n)])
    for t in range(nb):
        mf = frames[t]
        machine.mem[mf * B:(mf + 1) * B] = padded[t * B:(t + 1) * B]
    return nb


def gather_frames(machine: Machine, frames, nitems: int) -> np.ndarray:
    """Collect the first ``nitems`` items stored across consecutive frames."""
    B = machine.B
    out = np.empty((nitems, 2), dtype=ITEM_DTYPE)
    done = 0
    t = 0
    while done < nitems:
        take = min(B, nitems - done)
        mf = frames[t]
        out[done:done + take] = machine.mem[mf * B:mf * B + take]
        done += take
        t += 1
    return out
