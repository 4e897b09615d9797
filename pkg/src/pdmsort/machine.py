"""Parallel-disk machine simulation with exact I/O accounting.

The machine has an internal memory of ``m = M // B`` block frames and ``D``
disks that grow on demand.  One I/O operation moves up to ``D`` blocks
between pairwise distinct memory frames and pairwise distinct disks; every
operation bumps the counters by exactly one.  A reservation ledger enforces
the memory budget: algorithms must reserve frames before using them, and a
reservation that would exceed ``m`` frames raises :class:`MemoryBudgetError`.

Items are ``(key, tiebreak)`` pairs of unsigned 64-bit integers stored as
rows of a ``(n, 2)`` uint64 array.  Dummy items are maximal in both fields
and therefore sort after every real item.

Disk frames live in one growable block pool indexed through per-disk slot
maps; the compiled extension, when present, performs the validate-and-copy
work of an I/O operation, with the Python implementation as the reference
path (always used while tracing).
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

try:
    from . import _ckernels
except ImportError:
    _ckernels = None

ITEM_DTYPE = np.uint64
DUMMY_VAL = 0xFFFF_FFFF_FFFF_FFFF


class PdmError(Exception):
    """Base class for simulation errors."""


class ConfigError(PdmError):
    """Invalid machine parameters."""


class TransferError(PdmError):
    """Malformed I/O operation (width, duplicate disk or frame, bad index)."""


class UnwrittenReadError(PdmError):
    """Input from a disk frame that was never written."""


class ReservationError(PdmError):
    """Misuse of the frame-reservation interface."""


class MemoryBudgetError(PdmError):
    """A reservation would exceed the m-frame memory budget."""


def is_dummy(items: np.ndarray) -> np.ndarray:
    return (items[:, 0] == DUMMY_VAL) & (items[:, 1] == DUMMY_VAL)


def dummy_rows(n: int) -> np.ndarray:
    return np.full((n, 2), DUMMY_VAL, dtype=ITEM_DTYPE)


class IoStats:
    """Operation and block counters with per-phase sub-counters.

    Phase labels may carry a ``@detail`` suffix (recursion level, merge
    ordinal); :meth:`by_step` collapses the suffix.
    """

    def __init__(self, machine: "Machine"):
        self._m = machine

    @property
    def input_ops(self) -> int:
        return int(self._m._tot[0])

    @property
    def output_ops(self) -> int:
        return int(self._m._tot[1])

    @property
    def blocks_in(self) -> int:
        return int(self._m._tot[2])

    @property
    def blocks_out(self) -> int:
        return int(self._m._tot[3])

    @property
    def total_ops(self) -> int:
        return self.input_ops + self.output_ops

    @property
    def phases(self) -> dict[str, list[int]]:
        rows = self._m._phase_counters
        return {label: rows[i].tolist() for label, i in self._m._phase_rows.items()}

    def by_step(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {}
        for label, row in self.phases.items():
            step = label.split("@", 1)[0]
            acc = out.setdefault(step, [0, 0, 0, 0])
            for i in range(4):
                acc[i] += row[i]
        return out

    def as_dict(self) -> dict:
        return {
            "input_ops": self.input_ops,
            "output_ops": self.output_ops,
            "total_ops": self.total_ops,
            "blocks_in": self.blocks_in,
            "blocks_out": self.blocks_out,
            "phases": {
                k: dict(zip(("input_ops", "output_ops", "blocks_in", "blocks_out"), v))
                for k, v in sorted(self.by_step().items())
            },
        }


@dataclass
class BufferHandle:
    """A reservation of memory frames.  ``frames`` lists distinct frame numbers."""

    frames: list[int]
    contiguous: bool
    active: bool = True

    @property
    def n(self) -> int:
        return len(self.frames)

    def span(self, B: int) -> tuple[int, int]:
        """Item-index span [lo, hi) in machine memory; contiguous handles only."""
        if not self.contiguous:
            raise ReservationError("span requested on a non-contiguous reservation")
        return self.frames[0] * B, (self.frames[-1] + 1) * B


@dataclass(frozen=True)
class StripedRun:
    """Descriptor of a block sequence laid out round-robin over disks.

    Block ``j`` of the sequence lives on ``disks[(offset + j) % w]`` at frame
    ``bases[(offset + j) % w] + (offset + j) // w`` where ``w = len(disks)``.
    A nonzero ``offset`` describes a contiguous sub-range of a parent run;
    freshly stored runs have ``offset == 0``, matching the striped format.
    """

    bases: tuple[int, ...]
    disks: tuple[int, ...]
    offset: int
    num_blocks: int
    num_items: int

    def block_loc(self, j: int) -> tuple[int, int]:
        i = self.offset + j
        w = len(self.disks)
        r = i % w
        return self.disks[r], self.bases[r] + i // w

    def subrange(self, start: int, nblocks: int, num_items: int) -> "StripedRun":
        if start < 0 or start + nblocks > self.num_blocks:
            raise ValueError("subrange outside run")
        return StripedRun(self.bases, self.disks, self.offset + start, nblocks, num_items)


class Machine:
    """A simulated PDM instance confined to a single thread of control."""

    def __init__(self, M: int, B: int, D: int):
        if M < 1 or B < 1 or D < 1:
            raise ConfigError("M, B and D must be positive")
        if 2 * B > M:
            raise ConfigError(f"need 2B <= M, got B={B}, M={M}")
        if M % B != 0:
            raise ConfigError(f"B must divide M, got B={B}, M={M}")
        if D > M // B:
            raise ConfigError(f"need D <= M/B, got D={D}, M/B={M // B}")
        self.M = M
        self.B = B
        self.D = D
        self.m = M // B
        self.mem = np.zeros((self.m * B, 2), dtype=ITEM_DTYPE)
        self._reserved = np.zeros(self.m, dtype=np.uint8)
        self._n_reserved = 0
        # block pool shared by all disks; per-disk slot maps resolve frames
        self._pool = np.zeros((64, B, 2), dtype=ITEM_DTYPE)
        self._written = np.zeros(64, dtype=np.uint8)
        self._pool_cursor = 0
        self._slots = np.zeros((D, 64), dtype=np.int64)
        self._cursors = np.zeros(D, dtype=np.int64)
        # counters: totals and per-phase rows
        self._tot = np.zeros(4, dtype=np.int64)
        self._phase_counters = np.zeros((16, 4), dtype=np.int64)
        self._phase_rows: dict[str, int] = {}
        self._phase = ""
        self._phase_row = self._phase_row_for("")
        self.stats = IoStats(self)
        self.trace: list | None = None
        # scratch transfer arrays for the fast path
        self._tr_d = np.zeros(D, dtype=np.int64)
        self._tr_f = np.zeros(D, dtype=np.int64)
        self._tr_mf = np.zeros(D, dtype=np.int64)
        if _ckernels is not None:
            self._core = _ckernels.MachineCore(self.mem, B, D, self._reserved,
                                               self._cursors, self._tot)
            self._core.set_pool(self._pool, self._written)
            self._core.set_slots(self._slots)
            self._core.set_counters(self._phase_counters)
        else:
            self._core = None

    # ------------------------------------------------------------------
    # phases

    def _phase_row_for(self, label: str) -> int:
        row = self._phase_rows.get(label)
        if row is None:
            row = len(self._phase_rows)
            if row >= self._phase_counters.shape[0]:
                grown = np.zeros((2 * self._phase_counters.shape[0], 4), dtype=np.int64)
                grown[:self._phase_counters.shape[0]] = self._phase_counters
                self._phase_counters = grown
                if getattr(self, "_core", None) is not None:
                    self._core.set_counters(grown)
            self._phase_rows[label] = row
        return row

    @contextmanager
    def phase(self, label: str):
        prev_label, prev_row = self._phase, self._phase_row
        self._phase = label
        self._phase_row = self._phase_row_for(label)
        if self._core is not None:
            self._core.phase_row = self._phase_row
        try:
            yield
        finally:
            self._phase = prev_label
            self._phase_row = prev_row
            if self._core is not None:
                self._core.phase_row = prev_row

    # ------------------------------------------------------------------
    # memory budget

    @property
    def frames_reserved(self) -> int:
        return self._n_reserved

    def reserve(self, n: int, contiguous: bool = False) -> BufferHandle:
        if n < 1:
            raise ReservationError(f"cannot reserve {n} frames")
        if self._n_reserved + n > self.m:
            raise MemoryBudgetError(
                f"memory budget exceeded: {self._n_reserved} frames reserved, "
                f"requested {n} more with only m={self.m}"
            )
        free = [i for i in range(self.m) if not self._reserved[i]]
        window = None
        run_start = 0
        for i in range(1, len(free) + 1):
            if i == len(free) or free[i] != free[i - 1] + 1:
                if i - run_start >= n:
                    window = free[run_start:run_start + n]
                    break
                run_start = i
        if window is not None:
            frames, is_contig = window, True
        elif contiguous:
            raise ReservationError(f"no contiguous window of {n} frames available")
        else:
            frames, is_contig = free[:n], False
        for f in frames:
            self._reserved[f] = 1
        self._n_reserved += n
        return BufferHandle(frames, is_contig)

    def release(self, handle: BufferHandle) -> None:
        if not handle.active:
            raise ReservationError("buffer released twice")
        handle.active = False
        for f in handle.frames:
            self._reserved[f] = 0
        self._n_reserved -= len(handle.frames)

    # ------------------------------------------------------------------
    # I/O operations

    def io_input(self, transfers) -> None:
        """One parallel input: ``transfers`` is a list of (disk, frame, memframe)."""
        n = len(transfers)
        if n < 1 or n > self.D:
            raise TransferError(f"an I/O moves between 1 and D={self.D} blocks, got {n}")
        B = self.B
        mem = self.mem
        seen_d = set()
        seen_m = set()
        for d, f, mf in transfers:
            if d < 0 or d >= self.D:
                raise TransferError(f"no such disk {d}")
            if d in seen_d:
                raise TransferError(f"disk {d} appears twice in one I/O")
            seen_d.add(d)
            if mf < 0 or mf >= self.m:
                raise TransferError(f"no such memory frame {mf}")
            if mf in seen_m:
                raise TransferError(f"memory frame {mf} appears twice in one I/O")
            seen_m.add(mf)
            if not self._reserved[mf]:
                raise ReservationError(f"transfer targets unreserved memory frame {mf}")
            if f < 0 or f >= self._cursors[d]:
                raise UnwrittenReadError(f"input of never-written frame {f} on disk {d}")
            slot = self._slots[d, f]
            if not self._written[slot]:
                raise UnwrittenReadError(f"input of never-written frame {f} on disk {d}")
        for d, f, mf in transfers:
            slot = self._slots[d, f]
            mem[mf * B:(mf + 1) * B] = self._pool[slot]
        self._tot[0] += 1
        self._tot[2] += n
        row = self._phase_counters[self._phase_row]
        row[0] += 1
        row[2] += n
        if self.trace is not None:
            self.trace.append((self._phase, "in", tuple((d, f) for d, f, _ in transfers)))

    def io_output(self, transfers) -> None:
        """One parallel output: ``transfers`` is a list of (memframe, disk, frame)."""
        n = len(transfers)
        if n < 1 or n > self.D:
            raise TransferError(f"an I/O moves between 1 and D={self.D} blocks, got {n}")
        B = self.B
        mem = self.mem
        seen_d = set()
        seen_m = set()
        for mf, d, f in transfers:
            if d < 0 or d >= self.D:
                raise TransferError(f"no such disk {d}")
            if d in seen_d:
                raise TransferError(f"disk {d} appears twice in one I/O")
            seen_d.add(d)
            if mf < 0 or mf >= self.m:
                raise TransferError(f"no such memory frame {mf}")
            if mf in seen_m:
                raise TransferError(f"memory frame {mf} appears twice in one I/O")
            seen_m.add(mf)
            if not self._reserved[mf]:
                raise ReservationError(f"transfer reads unreserved memory frame {mf}")
            if f < 0 or f >= self._cursors[d]:
                raise TransferError(f"output beyond allocated region: frame {f} on disk {d}")
        for mf, d, f in transfers:
            slot = self._slots[d, f]
            self._pool[slot] = mem[mf * B:(mf + 1) * B]
            self._written[slot] = 1
        self._tot[1] += 1
        self._tot[3] += n
        row = self._phase_counters[self._phase_row]
        row[1] += 1
        row[3] += n
        if self.trace is not None:
            self.trace.append((self._phase, "out", tuple((d, f) for _, d, f in transfers)))

    # fast paths: transfers packed in the machine's scratch arrays ----------

    def io_input_at(self, n: int) -> None:
        if self._core is not None and self.trace is None:
            rc = self._core.io_in(self._tr_d, self._tr_f, self._tr_mf, n)
            if rc == 0:
                return
        self.io_input([(int(self._tr_d[t]), int(self._tr_f[t]), int(self._tr_mf[t]))
                       for t in range(n)])

    def io_output_at(self, n: int) -> None:
        if self._core is not None and self.trace is None:
            rc = self._core.io_out(self._tr_mf, self._tr_d, self._tr_f, n)
            if rc == 0:
                return
        self.io_output([(int(self._tr_mf[t]), int(self._tr_d[t]), int(self._tr_f[t]))
                        for t in range(n)])

    # ------------------------------------------------------------------
    # disk space

    def alloc_region(self, disk: int, nframes: int) -> int:
        """Bump-allocate ``nframes`` contiguous frames on a disk; never reclaimed."""
        if nframes < 0:
            raise ValueError("negative region size")
        first = int(self._cursors[disk])
        end = first + nframes
        if end > self._slots.shape[1]:
            cap = max(2 * self._slots.shape[1], end)
            grown = np.zeros((self.D, cap), dtype=np.int64)
            grown[:, :self._slots.shape[1]] = self._slots
            self._slots = grown
            if self._core is not None:
                self._core.set_slots(grown)
        pstart = self._pool_cursor
        pend = pstart + nframes
        if pend > self._pool.shape[0]:
            cap = max(2 * self._pool.shape[0], pend)
            pool = np.zeros((cap, self.B, 2), dtype=ITEM_DTYPE)
            pool[:self._pool.shape[0]] = self._pool
            written = np.zeros(cap, dtype=np.uint8)
            written[:self._written.shape[0]] = self._written
            self._pool = pool
            self._written = written
            if self._core is not None:
                self._core.set_pool(pool, written)
        self._slots[disk, first:end] = np.arange(pstart, pend, dtype=np.int64)
        self._pool_cursor = pend
        self._cursors[disk] = end
        return first

    def disk_high_water(self) -> list[int]:
        return [int(c) for c in self._cursors]

    # ------------------------------------------------------------------
    # harness access (uncounted; for test setup and verification only)

    def poke_block(self, disk: int, frame: int, block: np.ndarray) -> None:
        if frame >= self._cursors[disk]:
            raise ValueError("poke outside allocated region")
        slot = self._slots[disk, frame]
        self._pool[slot] = block
        self._written[slot] = 1

    def peek_block(self, disk: int, frame: int) -> np.ndarray:
        if frame >= self._cursors[disk] or not self._written[self._slots[disk, frame]]:
            raise UnwrittenReadError(f"peek of never-written frame {frame} on disk {disk}")
        return self._pool[self._slots[disk, frame]]

    # ------------------------------------------------------------------
    # striped storage

    def store_striped(self, items, counted: bool = False) -> StripedRun:
        """Lay a sequence out in the striped format over all D disks.

        With ``counted=True`` the blocks travel through reserved memory via
        real output operations; the default harness mode writes directly and
        leaves the I/O counters untouched.
        """
        items = np.ascontiguousarray(items, dtype=ITEM_DTYPE)
        if items.ndim != 2 or items.shape[1] != 2:
            raise ValueError("items must be an (n, 2) array of (key, tiebreak)")
        n = items.shape[0]
        if n < 1:
            raise ValueError("cannot store an empty sequence")
        B, D = self.B, self.D
        nb = -(-n // B)
        pad = nb * B - n
        if pad:
            items = np.vstack([items, dummy_rows(pad)])
        bases = tuple(self.alloc_region(r, (nb - r + D - 1) // D if r < nb else 0)
                      for r in range(D))
        run = StripedRun(bases, tuple(range(D)), 0, nb, n)
        if not counted:
            for j in range(nb):
                d, f = run.block_loc(j)
                self.poke_block(d, f, items[j * B:(j + 1) * B])
            return run
        buf = self.reserve(min(D, nb))
        try:
            for start in range(0, nb, len(buf.frames)):
                cnt = min(len(buf.frames), nb - start)
                transfers = []
                for t in range(cnt):
                    mf = buf.frames[t]
                    self.mem[mf * B:(mf + 1) * B] = items[(start + t) * B:(start + t + 1) * B]
                    d, f = run.block_loc(start + t)
                    transfers.append((mf, d, f))
                self.io_output(transfers)
        finally:
            self.release(buf)
        return run

    def load_striped(self, run: StripedRun) -> np.ndarray:
        """Harness read-back of a run's real items (dummy padding stripped)."""
        B = self.B
        out = np.empty((run.num_blocks * B, 2), dtype=ITEM_DTYPE)
        for j in range(run.num_blocks):
            d, f = run.block_loc(j)
            out[j * B:(j + 1) * B] = self.peek_block(d, f)
        return out[:run.num_items]


def create_machine(M: int, B: int, D: int) -> Machine:
    return Machine(M, B, D)
