"""Pure-Python kernel implementations (numpy-assisted).

These mirror the compiled extension's interface and are selected at import
time when the extension is unavailable (or forced via PDMSORT_KERNELS=python).
They favour clarity; the compiled core exists because these inner loops
dominate the simulator's runtime.
"""

from __future__ import annotations

import heapq

import numpy as np

IMPL = "python"

NEED_BATCH = 0
OUT_FULL = 1
SAMPLE_FULL = 2
DRAINED = 3
SRC_EMPTY = 4
DONE = 5


class KernelScheduleError(RuntimeError):
    pass


def _upper_bound(keys: np.ndarray, ties: np.ndarray, lk: int, lt: int) -> int:
    """First index whose (key, tie) is >= (lk, lt) in a sorted span."""
    i1 = int(np.searchsorted(keys, np.uint64(lk), side="left"))
    i2 = int(np.searchsorted(keys, np.uint64(lk), side="right"))
    if i1 == i2:
        return i1
    return i1 + int(np.searchsorted(ties[i1:i2], np.uint64(lt), side="left"))


class GuidedMerge:
    """State machine for the guided multiway merge over machine memory.

    Per run it tracks the frames and cursor of the currently loaded segment;
    the pending batch holds up to ``g`` segments whose activation order is
    dictated by their leaders.  ``run`` consumes items into the output span
    until it needs the next batch, fills the output or sample span, or drains.
    """

    def __init__(self, mem: np.ndarray, B: int, k: int, s: int, g: int):
        self.mem = mem
        self.B = B
        self.s = s
        self.run_frames = np.zeros((k, s), dtype=np.int64)
        self.run_pos = np.zeros(k, dtype=np.int64)
        self.run_len = np.zeros(k, dtype=np.int64)
        self.batch_frames = np.zeros((g, s), dtype=np.int64)
        self.batch_run = np.zeros(g, dtype=np.int64)
        self.batch_len = np.zeros(g, dtype=np.int64)
        self.batch_count = 0
        self.batch_next = 0
        self.heap: list[tuple[int, int, int]] = []
        self.out_lo = self.out_hi = self.out_pos = 0
        self.sample_on = False
        self.sample_lo = self.sample_hi = self.sample_pos = 0
        self.period = 0
        self.countdown = 0

    def set_out(self, lo: int, hi: int) -> None:
        self.out_lo, self.out_hi, self.out_pos = lo, hi, lo

    def enable_sample(self, period: int) -> None:
        self.sample_on = True
        self.period = period
        self.countdown = 0

    def set_sample(self, lo: int, hi: int) -> None:
        self.sample_lo, self.sample_hi, self.sample_pos = lo, hi, lo

    def load_batch(self, count: int) -> None:
        if self.batch_next < self.batch_count:
            raise KernelScheduleError("batch loaded while previous batch still pending")
        self.batch_count = count
        self.batch_next = 0

    # ------------------------------------------------------------------

    def _leader(self, t: int) -> tuple[int, int]:
        f = int(self.batch_frames[t, 0])
        row = self.mem[f * self.B]
        return int(row[0]), int(row[1])

    def _item(self, r: int, pos: int) -> tuple[int, int]:
        B = self.B
        f = int(self.run_frames[r, pos // B])
        row = self.mem[f * B + pos % B]
        return int(row[0]), int(row[1])

    def _segment_upper(self, r: int, pos: int, end: int, lim) -> int:
        if lim is None:
            return end
        lk, lt = lim
        B = self.B
        mem = self.mem
        frames = self.run_frames[r]
        p = pos
        while p < end:
            fi = p // B
            a = p % B
            b = min(B, end - fi * B)
            base = int(frames[fi]) * B
            idx = _upper_bound(mem[base + a:base + b, 0], mem[base + a:base + b, 1], lk, lt)
            if idx < b - a:
                return fi * B + a + idx
            p = (fi + 1) * B
        return end

    def run(self, bound_key: int = 0, bound_tie: int = 0, has_bound: bool = False) -> int:
        mem = self.mem
        B = self.B
        heap = self.heap
        bound = (bound_key, bound_tie) if has_bound else None
        while True:
            if self.batch_next < self.batch_count:
                t = self.batch_next
                lead = self._leader(t)
                if not heap or lead < (heap[0][0], heap[0][1]):
                    r = int(self.batch_run[t])
                    if self.run_pos[r] < self.run_len[r]:
                        raise KernelScheduleError(
                            f"segment activated for run {r} before previous one was consumed"
                        )
                    tmp = self.run_frames[r].copy()
                    self.run_frames[r] = self.batch_frames[t]
                    self.batch_frames[t] = tmp
                    self.run_pos[r] = 0
                    self.run_len[r] = self.batch_len[t]
                    heapq.heappush(heap, (lead[0], lead[1], r))
                    self.batch_next += 1
                    continue
            if not heap:
                return NEED_BATCH if has_bound else DRAINED
            k0, t0, r = heap[0]
            if bound is not None and (k0, t0) >= bound:
                return NEED_BATCH
            if self.out_pos >= self.out_hi:
                return OUT_FULL
            lim = bound
            if len(heap) > 1:
                c = heap[1] if len(heap) < 3 else min(heap[1], heap[2])
                cc = (c[0], c[1])
                if lim is None or cc < lim:
                    lim = cc
            if self.batch_next < self.batch_count:
                lv = self._leader(self.batch_next)
                if lim is None or lv < lim:
                    lim = lv
            pos = int(self.run_pos[r])
            end = int(self.run_len[r])
            stop = self._segment_upper(r, pos, end, lim)
            n = min(stop - pos, self.out_hi - self.out_pos)
            frames = self.run_frames[r]
            opos = self.out_pos
            done = 0
            sample_full = False
            while done < n:
                if self.sample_on and self.countdown == 0:
                    if self.sample_pos >= self.sample_hi:
                        sample_full = True
                        break
                    p = pos + done
                    src = int(frames[p // B]) * B + p % B
                    mem[self.sample_pos] = mem[src]
                    self.sample_pos += 1
                    self.countdown = self.period
                step = n - done
                if self.sample_on:
                    step = min(step, self.countdown)
                p = pos + done
                rem = step
                while rem:
                    fi = p // B
                    off = p % B
                    take = min(rem, B - off)
                    base = int(frames[fi]) * B + off
                    mem[opos:opos + take] = mem[base:base + take]
                    opos += take
                    p += take
                    rem -= take
                done += step
                if self.sample_on:
                    self.countdown -= step
            newpos = pos + done
            self.run_pos[r] = newpos
            self.out_pos = opos
            if newpos >= end:
                heapq.heappop(heap)
            else:
                nk, nt = self._item(r, newpos)
                heapq.heapreplace(heap, (nk, nt, r))
            if sample_full:
                return SAMPLE_FULL


class HeapMerge:
    """Plain k-way merge over per-source windows, used by the baselines.

    Sources live in a private ``(k, W, 2)`` buffer; the driver refills a
    window whenever ``run`` reports it empty, or leaves it dead.  Output is
    produced into a caller-supplied array one chunk at a time.
    """

    def __init__(self, k: int, window_items: int):
        self.src = np.zeros((k, window_items, 2), dtype=np.uint64)
        self.pos = np.zeros(k, dtype=np.int64)
        self.len = np.zeros(k, dtype=np.int64)
        self.heap: list[tuple[int, int, int]] = []
        self.out: np.ndarray | None = None
        self.out_pos = 0

    def set_source(self, i: int, items: np.ndarray) -> None:
        n = items.shape[0]
        if n == 0:
            return
        self.src[i, :n] = items
        self.pos[i] = 0
        self.len[i] = n
        heapq.heappush(self.heap, (int(items[0, 0]), int(items[0, 1]), i))

    def set_out(self, out: np.ndarray) -> None:
        self.out = out
        self.out_pos = 0

    def run(self) -> tuple[int, int]:
        heap = self.heap
        out = self.out
        cap = out.shape[0]
        while True:
            if not heap:
                return DONE, -1
            if self.out_pos >= cap:
                return OUT_FULL, -1
            k0, t0, i = heap[0]
            lim = None
            if len(heap) > 1:
                c = heap[1] if len(heap) < 3 else min(heap[1], heap[2])
                lim = (c[0], c[1])
            pos = int(self.pos[i])
            end = int(self.len[i])
            if lim is None:
                stop = end
            else:
                stop = pos + _upper_bound(self.src[i, pos:end, 0], self.src[i, pos:end, 1],
                                          lim[0], lim[1])
            n = min(stop - pos, cap - self.out_pos)
            out[self.out_pos:self.out_pos + n] = self.src[i, pos:pos + n]
            self.out_pos += n
            pos += n
            self.pos[i] = pos
            if pos >= end:
                heapq.heappop(heap)
                return SRC_EMPTY, i
            row = self.src[i, pos]
            heapq.heapreplace(heap, (int(row[0]), int(row[1]), i))
