# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled merge kernels: the per-item inner loops of the simulator."""

from libc.stdint cimport int64_t, uint8_t, uint64_t
from libc.string cimport memcpy

import numpy as np

IMPL = "compiled"

NEED_BATCH = 0
OUT_FULL = 1
SAMPLE_FULL = 2
DRAINED = 3
SRC_EMPTY = 4
DONE = 5

DEF ST_NEED_BATCH = 0
DEF ST_OUT_FULL = 1
DEF ST_SAMPLE_FULL = 2
DEF ST_DRAINED = 3
DEF ST_SRC_EMPTY = 4
DEF ST_DONE = 5


class KernelScheduleError(RuntimeError):
    pass


cdef class GuidedMerge:
    """Guided multiway merge over machine memory (see kernels/py.py twin)."""

    cdef uint64_t[:, ::1] mem
    cdef int64_t B, s, g, nruns
    cdef int64_t[:, ::1] rf, bf
    cdef int64_t[::1] rpos, rlen, brun, blen, heap
    cdef int64_t heap_size
    cdef public int64_t batch_count, batch_next
    cdef public int64_t out_lo, out_hi, out_pos
    cdef public bint sample_on
    cdef public int64_t sample_lo, sample_hi, sample_pos, period, countdown
    cdef object _rf_arr, _bf_arr, _brun_arr, _blen_arr, _rpos_arr, _rlen_arr

    def __init__(self, mem, int64_t B, int64_t k, int64_t s, int64_t g):
        self.mem = mem
        self.B = B
        self.s = s
        self.g = g
        self.nruns = k
        self._rf_arr = np.zeros((k, s), dtype=np.int64)
        self._bf_arr = np.zeros((g, s), dtype=np.int64)
        self._brun_arr = np.zeros(g, dtype=np.int64)
        self._blen_arr = np.zeros(g, dtype=np.int64)
        self._rpos_arr = np.zeros(k, dtype=np.int64)
        self._rlen_arr = np.zeros(k, dtype=np.int64)
        self.rf = self._rf_arr
        self.bf = self._bf_arr
        self.brun = self._brun_arr
        self.blen = self._blen_arr
        self.rpos = self._rpos_arr
        self.rlen = self._rlen_arr
        self.heap = np.zeros(k, dtype=np.int64)
        self.heap_size = 0
        self.batch_count = 0
        self.batch_next = 0
        self.sample_on = False
        self.out_lo = self.out_hi = self.out_pos = 0
        self.sample_lo = self.sample_hi = self.sample_pos = 0
        self.period = 0
        self.countdown = 0

    @property
    def run_frames(self):
        return self._rf_arr

    @property
    def batch_frames(self):
        return self._bf_arr

    @property
    def batch_run(self):
        return self._brun_arr

    @property
    def batch_len(self):
        return self._blen_arr

    @property
    def run_pos(self):
        return self._rpos_arr

    @property
    def run_len(self):
        return self._rlen_arr

    def set_out(self, int64_t lo, int64_t hi):
        self.out_lo = lo
        self.out_hi = hi
        self.out_pos = lo

    def enable_sample(self, int64_t period):
        self.sample_on = True
        self.period = period
        self.countdown = 0

    def set_sample(self, int64_t lo, int64_t hi):
        self.sample_lo = lo
        self.sample_hi = hi
        self.sample_pos = lo

    def load_batch(self, int64_t count):
        if self.batch_next < self.batch_count:
            raise KernelScheduleError("batch loaded while previous batch still pending")
        self.batch_count = count
        self.batch_next = 0

    # ------------------------------------------------------------------

    cdef inline void _cur(self, int64_t r, uint64_t* ck, uint64_t* ct):
        cdef int64_t pos = self.rpos[r]
        cdef int64_t idx = self.rf[r, pos / self.B] * self.B + pos % self.B
        ck[0] = self.mem[idx, 0]
        ct[0] = self.mem[idx, 1]

    cdef inline bint _run_lt(self, int64_t a, int64_t b):
        cdef uint64_t ka, ta, kb, tb
        self._cur(a, &ka, &ta)
        self._cur(b, &kb, &tb)
        return ka < kb or (ka == kb and ta < tb)

    cdef void _push(self, int64_t r):
        cdef int64_t i = self.heap_size
        cdef int64_t p
        self.heap[i] = r
        self.heap_size += 1
        while i > 0:
            p = (i - 1) >> 1
            if self._run_lt(self.heap[i], self.heap[p]):
                self.heap[i], self.heap[p] = self.heap[p], self.heap[i]
                i = p
            else:
                break

    cdef void _sift_root(self):
        cdef int64_t i = 0, c, n = self.heap_size
        while True:
            c = 2 * i + 1
            if c >= n:
                break
            if c + 1 < n and self._run_lt(self.heap[c + 1], self.heap[c]):
                c += 1
            if self._run_lt(self.heap[c], self.heap[i]):
                self.heap[i], self.heap[c] = self.heap[c], self.heap[i]
                i = c
            else:
                break

    cdef void _pop_root(self):
        self.heap_size -= 1
        if self.heap_size > 0:
            self.heap[0] = self.heap[self.heap_size]
            self._sift_root()

    cdef int64_t _seg_upper(self, int64_t r, int64_t pos, int64_t end,
                            bint has_lim, uint64_t lk, uint64_t lt):
        if not has_lim:
            return end
        cdef int64_t B = self.B
        cdef int64_t p = pos, fi, a, b, base, lo, hi, mid
        cdef uint64_t mk, mt
        while p < end:
            fi = p / B
            a = p % B
            b = end - fi * B
            if b > B:
                b = B
            base = self.rf[r, fi] * B
            lo = a
            hi = b
            while lo < hi:
                mid = (lo + hi) >> 1
                mk = self.mem[base + mid, 0]
                mt = self.mem[base + mid, 1]
                if mk < lk or (mk == lk and mt < lt):
                    lo = mid + 1
                else:
                    hi = mid
            if lo < b:
                return fi * B + lo
            p = (fi + 1) * B
        return end

    def run(self, unsigned long long bound_key=0, unsigned long long bound_tie=0,
            bint has_bound=False):
        cdef int64_t B = self.B
        cdef int64_t t, r, j, tmp, pos, end, stop, n, done, step, take, p, fi, off
        cdef int64_t opos, src, second
        cdef uint64_t ck, ct, lk, lt, sk, st
        cdef bint activate, has_lim, sample_full
        while True:
            if self.batch_next < self.batch_count:
                t = self.batch_next
                src = self.bf[t, 0] * B
                lk = self.mem[src, 0]
                lt = self.mem[src, 1]
                activate = False
                if self.heap_size == 0:
                    activate = True
                else:
                    self._cur(self.heap[0], &ck, &ct)
                    if lk < ck or (lk == ck and lt < ct):
                        activate = True
                if activate:
                    r = self.brun[t]
                    if self.rpos[r] < self.rlen[r]:
                        raise KernelScheduleError(
                            "segment activated for run %d before previous one was consumed" % r
                        )
                    for j in range(self.s):
                        tmp = self.rf[r, j]
                        self.rf[r, j] = self.bf[t, j]
                        self.bf[t, j] = tmp
                    self.rpos[r] = 0
                    self.rlen[r] = self.blen[t]
                    self._push(r)
                    self.batch_next += 1
                    continue
            if self.heap_size == 0:
                if has_bound:
                    return ST_NEED_BATCH
                return ST_DRAINED
            r = self.heap[0]
            self._cur(r, &ck, &ct)
            if has_bound and (ck > bound_key or (ck == bound_key and ct >= bound_tie)):
                return ST_NEED_BATCH
            if self.out_pos >= self.out_hi:
                return ST_OUT_FULL
            has_lim = has_bound
            lk = bound_key
            lt = bound_tie
            if self.heap_size > 1:
                second = self.heap[1]
                if self.heap_size > 2 and self._run_lt(self.heap[2], second):
                    second = self.heap[2]
                self._cur(second, &sk, &st)
                if (not has_lim) or sk < lk or (sk == lk and st < lt):
                    lk = sk
                    lt = st
                    has_lim = True
            if self.batch_next < self.batch_count:
                src = self.bf[self.batch_next, 0] * B
                sk = self.mem[src, 0]
                st = self.mem[src, 1]
                if (not has_lim) or sk < lk or (sk == lk and st < lt):
                    lk = sk
                    lt = st
                    has_lim = True
            pos = self.rpos[r]
            end = self.rlen[r]
            stop = self._seg_upper(r, pos, end, has_lim, lk, lt)
            n = stop - pos
            if self.out_hi - self.out_pos < n:
                n = self.out_hi - self.out_pos
            opos = self.out_pos
            done = 0
            sample_full = False
            while done < n:
                if self.sample_on and self.countdown == 0:
                    if self.sample_pos >= self.sample_hi:
                        sample_full = True
                        break
                    p = pos + done
                    src = self.rf[r, p / B] * B + p % B
                    memcpy(&self.mem[self.sample_pos, 0], &self.mem[src, 0], 16)
                    self.sample_pos += 1
                    self.countdown = self.period
                step = n - done
                if self.sample_on and step > self.countdown:
                    step = self.countdown
                p = pos + done
                while step > 0:
                    fi = p / B
                    off = p % B
                    take = B - off
                    if take > step:
                        take = step
                    src = self.rf[r, fi] * B + off
                    memcpy(&self.mem[opos, 0], &self.mem[src, 0], take * 16)
                    opos += take
                    p += take
                    step -= take
                    done += take
                    if self.sample_on:
                        self.countdown -= take
            self.rpos[r] = pos + done
            self.out_pos = opos
            if pos + done >= end:
                self._pop_root()
            else:
                self._sift_root()
            if sample_full:
                return ST_SAMPLE_FULL


cdef class HeapMerge:
    """Plain k-way window merge used by the reference baselines."""

    cdef uint64_t[:, :, ::1] src
    cdef int64_t[::1] pos, len_, heap
    cdef int64_t heap_size, nsrc, window
    cdef uint64_t[:, ::1] out
    cdef public int64_t out_pos
    cdef int64_t out_cap
    cdef object _src_arr

    def __init__(self, int64_t k, int64_t window_items):
        self._src_arr = np.zeros((k, window_items, 2), dtype=np.uint64)
        self.src = self._src_arr
        self.pos = np.zeros(k, dtype=np.int64)
        self.len_ = np.zeros(k, dtype=np.int64)
        self.heap = np.zeros(k, dtype=np.int64)
        self.heap_size = 0
        self.nsrc = k
        self.window = window_items
        self.out_pos = 0
        self.out_cap = 0

    cdef inline bint _src_lt(self, int64_t a, int64_t b):
        cdef uint64_t ka = self.src[a, self.pos[a], 0]
        cdef uint64_t ta = self.src[a, self.pos[a], 1]
        cdef uint64_t kb = self.src[b, self.pos[b], 0]
        cdef uint64_t tb = self.src[b, self.pos[b], 1]
        return ka < kb or (ka == kb and ta < tb)

    cdef void _push(self, int64_t r):
        cdef int64_t i = self.heap_size
        cdef int64_t p
        self.heap[i] = r
        self.heap_size += 1
        while i > 0:
            p = (i - 1) >> 1
            if self._src_lt(self.heap[i], self.heap[p]):
                self.heap[i], self.heap[p] = self.heap[p], self.heap[i]
                i = p
            else:
                break

    cdef void _sift_root(self):
        cdef int64_t i = 0, c, n = self.heap_size
        while True:
            c = 2 * i + 1
            if c >= n:
                break
            if c + 1 < n and self._src_lt(self.heap[c + 1], self.heap[c]):
                c += 1
            if self._src_lt(self.heap[c], self.heap[i]):
                self.heap[i], self.heap[c] = self.heap[c], self.heap[i]
                i = c
            else:
                break

    cdef void _pop_root(self):
        self.heap_size -= 1
        if self.heap_size > 0:
            self.heap[0] = self.heap[self.heap_size]
            self._sift_root()

    def set_source(self, int64_t i, items):
        cdef int64_t n = items.shape[0]
        if n == 0:
            return
        self._src_arr[i, :n] = items
        self.pos[i] = 0
        self.len_[i] = n
        self._push(i)

    def set_out(self, out):
        self.out = out
        self.out_cap = out.shape[0]
        self.out_pos = 0

    def run(self):
        cdef int64_t i, pos, end, stop, n, lo, hi, mid, second
        cdef uint64_t lk, lt, mk, mt
        cdef bint has_lim
        while True:
            if self.heap_size == 0:
                return ST_DONE, -1
            if self.out_pos >= self.out_cap:
                return ST_OUT_FULL, -1
            i = self.heap[0]
            has_lim = False
            lk = 0
            lt = 0
            if self.heap_size > 1:
                second = self.heap[1]
                if self.heap_size > 2 and self._src_lt(self.heap[2], second):
                    second = self.heap[2]
                lk = self.src[second, self.pos[second], 0]
                lt = self.src[second, self.pos[second], 1]
                has_lim = True
            pos = self.pos[i]
            end = self.len_[i]
            if has_lim:
                lo = pos
                hi = end
                while lo < hi:
                    mid = (lo + hi) >> 1
                    mk = self.src[i, mid, 0]
                    mt = self.src[i, mid, 1]
                    if mk < lk or (mk == lk and mt < lt):
                        lo = mid + 1
                    else:
                        hi = mid
                stop = lo
            else:
                stop = end
            n = stop - pos
            if self.out_cap - self.out_pos < n:
                n = self.out_cap - self.out_pos
            memcpy(&self.out[self.out_pos, 0], &self.src[i, pos, 0], n * 16)
            self.out_pos += n
            pos += n
            self.pos[i] = pos
            if pos >= end:
                self._pop_root()
                return ST_SRC_EMPTY, i
            self._sift_root()


cdef class MachineCore:
    """Fast validate-and-copy path for the machine's I/O operations."""

    cdef uint64_t[:, ::1] mem
    cdef uint64_t[:, :, ::1] pool
    cdef uint8_t[::1] written, reserved
    cdef int64_t[:, ::1] slots, counters
    cdef int64_t[::1] cursors, tot
    cdef int64_t B, D, m
    cdef public int64_t phase_row

    def __init__(self, mem, int64_t B, int64_t D, reserved, cursors, tot):
        self.mem = mem
        self.B = B
        self.D = D
        self.m = mem.shape[0] // B
        self.reserved = reserved
        self.cursors = cursors
        self.tot = tot
        self.phase_row = 0

    def set_pool(self, pool, written):
        self.pool = pool
        self.written = written

    def set_slots(self, slots):
        self.slots = slots

    def set_counters(self, counters):
        self.counters = counters

    def io_in(self, int64_t[::1] d, int64_t[::1] f, int64_t[::1] mf, int64_t n):
        cdef int64_t i, j, slot
        if n < 1 or n > self.D:
            return 1
        for i in range(n):
            if d[i] < 0 or d[i] >= self.D:
                return 2
            if mf[i] < 0 or mf[i] >= self.m:
                return 3
            if not self.reserved[mf[i]]:
                return 4
            if f[i] < 0 or f[i] >= self.cursors[d[i]]:
                return 5
            if not self.written[self.slots[d[i], f[i]]]:
                return 5
            for j in range(i):
                if d[j] == d[i]:
                    return 6
                if mf[j] == mf[i]:
                    return 7
        for i in range(n):
            slot = self.slots[d[i], f[i]]
            memcpy(&self.mem[mf[i] * self.B, 0], &self.pool[slot, 0, 0], self.B * 16)
        self.tot[0] += 1
        self.tot[2] += n
        self.counters[self.phase_row, 0] += 1
        self.counters[self.phase_row, 2] += n
        return 0

    def io_out(self, int64_t[::1] mf, int64_t[::1] d, int64_t[::1] f, int64_t n):
        cdef int64_t i, j, slot
        if n < 1 or n > self.D:
            return 1
        for i in range(n):
            if d[i] < 0 or d[i] >= self.D:
                return 2
            if mf[i] < 0 or mf[i] >= self.m:
                return 3
            if not self.reserved[mf[i]]:
                return 4
            if f[i] < 0 or f[i] >= self.cursors[d[i]]:
                return 5
            for j in range(i):
                if d[j] == d[i]:
                    return 6
                if mf[j] == mf[i]:
                    return 7
        for i in range(n):
            slot = self.slots[d[i], f[i]]
            memcpy(&self.pool[slot, 0, 0], &self.mem[mf[i] * self.B, 0], self.B * 16)
            self.written[slot] = 1
        self.tot[1] += 1
        self.tot[3] += n
        self.counters[self.phase_row, 1] += 1
        self.counters[self.phase_row, 3] += n
        return 0
