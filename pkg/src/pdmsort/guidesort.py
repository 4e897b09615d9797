"""Guided multiway mergesort.

The sort recurses with an internal-memory base case; every nonterminal call
merges its recursively sorted runs in five phases:

1. merge the runs' samples (per-segment leaders) into the canonical sequence,
2. color the canonical sequence greedily to obtain the guide,
3. split the guide back into per-run colored samples,
4. redistribute each run's blocks to the disks named by its colored sample,
5. merge the runs, reading batches of blocks from the disks the guide names,
   emitting the sample for the next level on the way out.

Leaders travel through simulated I/O as ordinary items; their run ids,
segment ordinals, colors and indices ride along as uncharged bookkeeping
arrays aligned with item positions.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .blockio import alloc_striped, fill_frames, read_blocks, write_blocks
from .kernels import DRAINED, NEED_BATCH, OUT_FULL, SAMPLE_FULL, SRC_EMPTY, get_kernels
from .machine import ITEM_DTYPE, Machine, StripedRun
from .params import GuideParams, validate_params

RID, SEG, COL, IDX = 0, 1, 2, 3


class GuidesortError(RuntimeError):
    """Internal contradiction: a scheduling or coloring invariant failed."""


@dataclass
class LeaderSeq:
    """A striped sequence of leaders plus their bookkeeping tags.

    ``tags[i]`` belongs to the i-th leader of the sequence and holds
    (run id, segment ordinal, color base, color index).
    """

    run: StripedRun
    tags: np.ndarray

    @property
    def count(self) -> int:
        return self.run.num_items

    @property
    def nblocks(self) -> int:
        return self.run.num_blocks


@dataclass
class Placement:
    """Post-redistribution location map of one run's blocks."""

    bases: tuple[int, ...]  # per-disk region base, shared by the whole merge
    sample: LeaderSeq       # the run's colored sample
    num_blocks: int


@dataclass
class _Node:
    left: LeaderSeq
    right: LeaderSeq
    out: LeaderSeq
    sched: list  # ordered (side, block_start, nblocks); side 0=left read, 1=right read, 2=write
    left_ids: frozenset
    right_ids: frozenset


@dataclass
class MergeShape:
    """What Step 1 did, in enough detail for Step 3 to reverse it."""

    leaves: list  # (LeaderSeq, frozenset of run ids, is_bundle)
    nodes: list
    canonical: LeaderSeq


@dataclass
class GuideSnapshot:
    tags: np.ndarray
    d_bar: int
    s: int
    n_runs: int
    run_blocks: list


@dataclass
class SortReport:
    """Accumulated accounting over one complete sort."""

    z_blocks: int = 0      # total block length of all merged runs
    y_blocks: int = 0      # total block length of all samples produced
    n_merges: int = 0
    n_terminal: int = 0
    max_level: int = 0
    collect_guides: bool = False
    guides: list = field(default_factory=list)


def guidesort(machine: Machine, run: StripedRun, params: GuideParams, *,
              report: SortReport | None = None, kernels=None,
              validate: bool = True) -> StripedRun:
    """Sort a striped run; returns a fresh striped run with the same items."""
    if validate:
        bad = validate_params(params, machine.m, machine.B, machine.D)
        if bad:
            raise GuidesortError(f"parameters invalid for this machine: {bad}")
    if run.num_blocks < 1:
        raise ValueError("empty input")
    ctx = _Ctx(machine, params, report if report is not None else SortReport(),
               kernels if kernels is not None else get_kernels())
    out, _ = _sort(ctx, run, 0, False)
    return replace(out, num_items=run.num_items)


@dataclass
class _Ctx:
    machine: Machine
    p: GuideParams
    rep: SortReport
    K: object


def _sort(ctx, run, level, emit_sample):
    p = run.num_blocks
    k = min(-(-p // ctx.machine.m), ctx.p.r)
    if level > ctx.rep.max_level:
        ctx.rep.max_level = level
    if k == 1:
        return base_sort(ctx.machine, run, ctx.p, emit_sample, report=ctx.rep, level=level)
    base, extra = divmod(p, k)
    runs, samples = [], []
    off = 0
    for i in range(k):
        sz = base + (1 if i < extra else 0)
        child = run.subrange(off, sz, sz * ctx.machine.B)
        off += sz
        r_, s_ = _sort(ctx, child, level + 1, True)
        runs.append(r_)
        samples.append(s_)
    return _merge(ctx, runs, samples, level, emit_sample)


def _merge(ctx, runs, samples, level, emit_sample):
    machine, p, rep = ctx.machine, ctx.p, ctx.rep
    mseq = rep.n_merges
    rep.n_merges += 1
    run_blocks = [r.num_blocks for r in runs]
    rep.z_blocks += sum(run_blocks)
    for i, smp in enumerate(samples):
        smp.tags[:, RID] = i
    tag = f"{level}.{mseq}"
    canonical, shape = merge_samples(machine, samples, p, phase_tag=tag)
    guide, per_disk = color_canonical(machine, canonical, p, run_blocks, phase_tag=tag)
    colored = split_guide(machine, guide, shape, p, phase_tag=tag)
    bases = tuple(machine.alloc_region(d, int(per_disk[d])) for d in range(machine.D))
    placements = [
        redistribute_run(machine, runs[i], colored[i], p, bases, phase_tag=tag)
        for i in range(len(runs))
    ]
    out, sample = guided_merge(machine, placements, guide, p, emit_sample,
                               phase_tag=tag, report=rep, kernels=ctx.K)
    if rep.collect_guides:
        rep.guides.append(GuideSnapshot(guide.tags.copy(), p.d_bar, p.s,
                                        len(runs), run_blocks))
    return out, sample


# ----------------------------------------------------------------------
# base case

def base_sort(machine: Machine, run: StripedRun, params: GuideParams,
              emit_sample: bool = False, *, report: SortReport | None = None,
              level: int = 0):
    """Sort a run of at most m blocks internally; optionally emit its sample."""
    p = run.num_blocks
    if p > machine.m:
        raise GuidesortError(f"base case of {p} blocks exceeds memory of {machine.m}")
    B, D, s = machine.B, machine.D, params.s
    sample = None
    with machine.phase(f"base@{level}"):
        buf = machine.reserve(p, contiguous=True)
        try:
            for st in range(0, p, D):
                cnt = min(D, p - st)
                read_blocks(machine, run, st, cnt, buf.frames[st:st + cnt])
            lo, hi = buf.span(B)
            span = machine.mem[lo:hi]
            span[:] = span[np.lexsort((span[:, 1], span[:, 0]))]
            out = alloc_striped(machine, p, run.num_items)
            for st in range(0, p, D):
                cnt = min(D, p - st)
                write_blocks(machine, out, st, cnt, buf.frames[st:st + cnt])
            if emit_sample:
                L = -(-p // s)
                leaders = span[::s * B][:L].copy()
                nb = -(-L // B)
                # data already on disk, so the frames are reusable for the sample
                fill_frames(machine, buf.frames, leaders, nb)
                srun = alloc_striped(machine, nb, L)
                for st in range(0, nb, params.d_l):
                    cnt = min(params.d_l, nb - st)
                    write_blocks(machine, srun, st, cnt, buf.frames[st:st + cnt])
                tags = np.zeros((L, 4), dtype=np.int64)
                tags[:, SEG] = np.arange(L)
                sample = LeaderSeq(srun, tags)
                if report is not None:
                    report.y_blocks += nb
        finally:
            machine.release(buf)
    if report is not None:
        report.n_terminal += 1
    return out, sample


# ----------------------------------------------------------------------
# step 1: merge samples into the canonical sequence

def merge_samples(machine: Machine, samples: list, params: GuideParams, *,
                  phase_tag: str = ""):
    """Sort small samples bundle-wise, then merge pairwise over lock-step disks."""
    if len(samples) < 2:
        raise ValueError("a merge needs at least two samples")
    if len(samples) > params.r:
        raise ValueError("more samples than the merge arity allows")
    m = machine.m
    with machine.phase(f"step1@{phase_tag}"):
        lens = [smp.nblocks for smp in samples]
        leaves = []
        if min(lens) >= m:
            for smp in samples:
                ids = frozenset(np.unique(smp.tags[:, RID]).tolist())
                leaves.append((smp, ids, False))
        else:
            pending: list = []
            pending_blocks = 0

            def close_bundle():
                nonlocal pending, pending_blocks
                if not pending:
                    return
                merged = _sort_bundle(machine, pending)
                ids = frozenset(np.unique(merged.tags[:, RID]).tolist())
                leaves.append((merged, ids, True))
                pending, pending_blocks = [], 0

            for smp in samples:
                nb = smp.nblocks
                if nb >= m:
                    close_bundle()
                    ids = frozenset(np.unique(smp.tags[:, RID]).tolist())
                    leaves.append((smp, ids, False))
                    continue
                if pending and pending_blocks + nb > m:
                    close_bundle()
                pending.append(smp)
                pending_blocks += nb
            close_bundle()
        seqs = [(seq, ids) for seq, ids, _ in leaves]
        nodes = []
        while len(seqs) > 1:
            nxt = []
            for i in range(0, len(seqs) - 1, 2):
                node = _merge_pair(machine, params, seqs[i], seqs[i + 1])
                nodes.append(node)
                nxt.append((node.out, node.left_ids | node.right_ids))
            if len(seqs) % 2:
                nxt.append(seqs[-1])
            seqs = nxt
        canonical = seqs[0][0]
    return canonical, MergeShape(leaves, nodes, canonical)


def _sort_bundle(machine: Machine, group: list) -> LeaderSeq:
    B, D = machine.B, machine.D
    total = sum(smp.nblocks for smp in group)
    buf = machine.reserve(total, contiguous=True)
    try:
        f0 = buf.frames[0]
        pieces, tag_pieces = [], []
        off = 0
        for smp in group:
            nb = smp.nblocks
            for st in range(0, nb, D):
                cnt = min(D, nb - st)
                read_blocks(machine, smp.run, st, cnt, buf.frames[off + st:off + st + cnt])
            lo = (f0 + off) * B
            pieces.append(machine.mem[lo:lo + smp.count].copy())
            tag_pieces.append(smp.tags)
            off += nb
        items = np.vstack(pieces)
        tags = np.vstack(tag_pieces)
        order = np.lexsort((items[:, 1], items[:, 0]))
        items = items[order]
        tags = tags[order]
        cnt = items.shape[0]
        nb = -(-cnt // B)
        fill_frames(machine, buf.frames, items, nb)
        outrun = alloc_striped(machine, nb, cnt)
        for st in range(0, nb, D):
            c = min(D, nb - st)
            write_blocks(machine, outrun, st, c, buf.frames[st:st + c])
        return LeaderSeq(outrun, tags)
    finally:
        machine.release(buf)


def _lex_last(pool: np.ndarray) -> tuple[int, int]:
    row = pool[-1]
    return int(row[0]), int(row[1])


def _merge_pair(machine: Machine, params: GuideParams, left, right) -> _Node:
    """Two-way merge over d1 lock-step disks within 2*d1 block frames.

    Between I/O operations items are rearranged freely; the schedule keeps at
    most one superblock of remnant, so remnant plus the latest input always
    fit the reservation.  Every read decision is recorded for the reverse
    replay in Step 3.
    """
    a, aids = left
    b, bids = right
    B = machine.B
    d1 = params.d1
    cap = d1 * B
    la, lb = a.nblocks, b.nblocks
    ca, cb = a.count, b.count
    buf = machine.reserve(2 * d1, contiguous=True)
    halves = [buf.frames[:d1], buf.frames[d1:]]
    rh = wh = 0
    # partial tail blocks of the two inputs compact together in the output
    outrun = alloc_striped(machine, -(-(ca + cb) // B), ca + cb)
    sched: list = []
    out_tags = []
    pool = [np.empty((0, 2), dtype=ITEM_DTYPE), np.empty((0, 2), dtype=ITEM_DTYPE)]
    ptags = [np.empty((0, 4), dtype=np.int64), np.empty((0, 4), dtype=np.int64)]
    read_blocks_done = [0, 0]
    seqs = (a, b)
    lims = (la, lb)
    counts = (ca, cb)
    written = 0
    try:
        def read_side(side):
            nonlocal rh
            assert pool[0].shape[0] + pool[1].shape[0] <= cap
            seq = seqs[side]
            done = read_blocks_done[side]
            cnt = min(d1, lims[side] - done)
            frames = halves[rh]
            rh ^= 1
            read_blocks(machine, seq.run, done, cnt, frames[:cnt])
            real = min(cnt * B, counts[side] - done * B)
            lo = frames[0] * B
            pool[side] = np.vstack([pool[side], machine.mem[lo:lo + real]])
            ptags[side] = np.vstack([ptags[side], seq.tags[done * B:done * B + real]])
            sched.append((side, done, cnt))
            read_blocks_done[side] = done + cnt

        while True:
            un = [read_blocks_done[0] < la, read_blocks_done[1] < lb]
            sizes = [pool[0].shape[0], pool[1].shape[0]]
            if not un[0] and not un[1] and sizes[0] + sizes[1] == 0:
                break
            if un[0] and sizes[0] == 0:
                read_side(0)
                continue
            if un[1] and sizes[1] == 0:
                read_side(1)
                continue
            if (un[0] or un[1]) and sizes[0] + sizes[1] <= cap:
                if un[0] and un[1]:
                    side = 0 if _lex_last(pool[0]) < _lex_last(pool[1]) else 1
                else:
                    side = 0 if un[0] else 1
                read_side(side)
                continue
            # emit one output superblock: the smallest items form prefixes of both pools
            w = min(cap, sizes[0] + sizes[1])
            cat = np.vstack([pool[0], pool[1]])
            order = np.lexsort((cat[:, 1], cat[:, 0]))[:w]
            n0 = int(np.count_nonzero(order < sizes[0]))
            out_items = cat[order]
            chunk_tags = np.vstack([ptags[0], ptags[1]])[order]
            pool[0] = pool[0][n0:]
            ptags[0] = ptags[0][n0:]
            pool[1] = pool[1][w - n0:]
            ptags[1] = ptags[1][w - n0:]
            nb_out = -(-w // B)
            frames = halves[wh]
            wh ^= 1
            fill_frames(machine, frames, out_items, nb_out)
            write_blocks(machine, outrun, written, nb_out, frames[:nb_out])
            sched.append((2, written, nb_out))
            written += nb_out
            out_tags.append(chunk_tags)
    finally:
        machine.release(buf)
    out = LeaderSeq(outrun, np.vstack(out_tags))
    return _Node(a, b, out, sched, aids, bids)


# ----------------------------------------------------------------------
# step 2: greedy coloring

def greedy_pick_color(overall, run_hist, s: int, D: int) -> int:
    """Smallest color group (a multiple of s in [0, D-s]) used recently by neither."""
    c = 0
    while c <= D - s:
        if c not in overall and c not in run_hist:
            return c
        c += s
    raise GuidesortError("no admissible color group: coloring constraints violated")


def _hist_push(dq, members, color, maxlen):
    if maxlen <= 0:
        return
    if len(dq) == maxlen:
        members.discard(dq.popleft())
    dq.append(color)
    members.add(color)


def color_canonical(machine: Machine, canonical: LeaderSeq, params: GuideParams,
                    run_blocks: list, *, phase_tag: str = ""):
    """Stream the canonical sequence through a d2-wide buffer, assigning colors.

    Returns the guide (same items, tags now carrying color base and index)
    and the per-disk block counts needed to size the redistribution regions.
    """
    B, D, s = machine.B, machine.D, params.s
    win = -(-params.d_bar // s)
    L = canonical.count
    nb = canonical.nblocks
    tags = canonical.tags
    k = len(run_blocks)
    last_seg = [-(-pb // s) - 1 for pb in run_blocks]
    last_len = [pb - s * (-(-pb // s) - 1) for pb in run_blocks]
    per_disk = [0] * D
    with machine.phase(f"step2@{phase_tag}"):
        hist_buf = machine.reserve(params.q) if params.q > 0 else None
        io = machine.reserve(params.d2)
        try:
            out = alloc_striped(machine, nb, L)
            odq, oset = deque(), set()
            rdq = [deque() for _ in range(k)]
            rset = [set() for _ in range(k)]
            counters: dict[int, int] = {}
            for st in range(0, nb, params.d2):
                cnt = min(params.d2, nb - st)
                read_blocks(machine, canonical.run, st, cnt, io.frames[:cnt])
                e0 = st * B
                e1 = min(e0 + cnt * B, L)
                rids = tags[e0:e1, RID].tolist()
                segs = tags[e0:e1, SEG].tolist()
                for t in range(e1 - e0):
                    rid = rids[t]
                    seg = segs[t]
                    nblk = s if seg < last_seg[rid] else last_len[rid]
                    c = greedy_pick_color(oset, rset[rid], s, D)
                    idx = counters.get(c, 0)
                    counters[c] = idx + 1
                    tags[e0 + t, COL] = c
                    tags[e0 + t, IDX] = idx
                    for j in range(nblk):
                        per_disk[c + j] += 1
                    _hist_push(odq, oset, c, win - 1)
                    _hist_push(rdq[rid], rset[rid], c, win - 1)
                write_blocks(machine, out, st, cnt, io.frames[:cnt])
        finally:
            machine.release(io)
            if hist_buf is not None:
                machine.release(hist_buf)
    return LeaderSeq(out, tags), np.asarray(per_disk, dtype=np.int64)


# ----------------------------------------------------------------------
# step 3: split the guide into colored samples

def split_guide(machine: Machine, guide: LeaderSeq, shape: MergeShape,
                params: GuideParams, *, phase_tag: str = ""):
    """Reverse Step 1's merges to hand each run its colored sample."""
    with machine.phase(f"step3@{phase_tag}"):
        colored = {id(shape.canonical): guide}
        for node in reversed(shape.nodes):
            parent = colored.pop(id(node.out))
            left_col, right_col = _split_pair(machine, params, parent, node)
            colored[id(node.left)] = left_col
            colored[id(node.right)] = right_col
        result: dict[int, LeaderSeq] = {}
        for seq, ids, is_bundle in shape.leaves:
            col = colored.pop(id(seq))
            if is_bundle:
                result.update(_split_bundle(machine, col))
            else:
                (rid,) = ids
                result[rid] = col
    missing = [i for i in range(len(result)) if i not in result]
    if missing:
        raise GuidesortError(f"runs {missing} not covered by the merge shape")
    return [result[i] for i in range(len(result))]


def _split_pair(machine: Machine, params: GuideParams, parent: LeaderSeq, node: _Node):
    """Replay one pairwise merge backwards, routing colored leaders by run id."""
    B = machine.B
    d1 = params.d1
    la, lb = node.left.nblocks, node.right.nblocks
    ca, cb = node.left.count, node.right.count
    counts = (ca, cb)
    outs = (alloc_striped(machine, la, ca), alloc_striped(machine, lb, cb))
    left_ids = np.array(sorted(node.left_ids), dtype=np.int64)
    buf = machine.reserve(2 * d1, contiguous=True)
    halves = [buf.frames[:d1], buf.frames[d1:]]
    rh = wh = 0
    pool = np.empty((0, 2), dtype=ITEM_DTYPE)
    ptags = np.empty((0, 4), dtype=np.int64)
    chunks: tuple[list, list] = ([], [])
    try:
        for side, start, nbk in reversed(node.sched):
            if side == 2:
                # a forward write becomes an input of the colored parent
                frames = halves[rh]
                rh ^= 1
                read_blocks(machine, parent.run, start, nbk, frames[:nbk])
                real = min(nbk * B, parent.count - start * B)
                lo = frames[0] * B
                pool = np.vstack([pool, machine.mem[lo:lo + real]])
                ptags = np.vstack([ptags, parent.tags[start * B:start * B + real]])
                order = np.lexsort((pool[:, 1], pool[:, 0]))
                pool = pool[order]
                ptags = ptags[order]
            else:
                # a forward read becomes an output of that side's colored leaders,
                # which are exactly the largest pooled items of that side
                nitems = min(nbk * B, counts[side] - start * B)
                mask = np.isin(ptags[:, RID], left_ids)
                if side == 1:
                    mask = ~mask
                idxs = np.flatnonzero(mask)
                if idxs.shape[0] < nitems:
                    raise GuidesortError("forward schedule cannot be reversed; pool underflow")
                take = idxs[-nitems:]
                items = pool[take]
                chunk = ptags[take]
                keep = np.ones(pool.shape[0], dtype=bool)
                keep[take] = False
                pool = pool[keep]
                ptags = ptags[keep]
                chunks[side].append(chunk)
                frames = halves[wh]
                wh ^= 1
                fill_frames(machine, frames, items, nbk)
                write_blocks(machine, outs[side], start, nbk, frames[:nbk])
        if pool.shape[0]:
            raise GuidesortError("reverse replay left items behind")
    finally:
        machine.release(buf)
    tags_a = np.vstack(list(reversed(chunks[0])))
    tags_b = np.vstack(list(reversed(chunks[1])))
    return LeaderSeq(outs[0], tags_a), LeaderSeq(outs[1], tags_b)


def _split_bundle(machine: Machine, col: LeaderSeq) -> dict:
    """Partition a colored bundle into per-run colored samples in one pass."""
    B, D = machine.B, machine.D
    nb = col.nblocks
    buf = machine.reserve(nb, contiguous=True)
    try:
        for st in range(0, nb, D):
            cnt = min(D, nb - st)
            read_blocks(machine, col.run, st, cnt, buf.frames[st:st + cnt])
        lo = buf.frames[0] * B
        items = machine.mem[lo:lo + col.count].copy()
        tags = col.tags
        result = {}
        for rid in np.unique(tags[:, RID]).tolist():
            mask = tags[:, RID] == rid
            its = items[mask]
            tgs = tags[mask].copy()
            cnt = its.shape[0]
            nbo = -(-cnt // B)
            orun = alloc_striped(machine, nbo, cnt)
            fill_frames(machine, buf.frames, its, nbo)
            for st in range(0, nbo, D):
                c = min(D, nbo - st)
                write_blocks(machine, orun, st, c, buf.frames[st:st + c])
            result[int(rid)] = LeaderSeq(orun, tgs)
        return result
    finally:
        machine.release(buf)


# ----------------------------------------------------------------------
# step 4: redistribution

def redistribute_run(machine: Machine, run: StripedRun, colored: LeaderSeq,
                     params: GuideParams, bases: tuple, *,
                     phase_tag: str = "") -> Placement:
    """Scatter a run's blocks to the disks and frames its colored sample names.

    A single d4-frame buffer serves both input and output: blocks arrive d4
    per operation and leave in groups of up to ceil(d_bar/s) segments, whose
    colors are pairwise distinct by the per-run window property.
    """
    B = machine.B
    s = params.s
    p = run.num_blocks
    nseg = -(-p // s)
    if colored.count != nseg:
        raise GuidesortError("colored sample does not match the run's segments")
    tags = colored.tags
    if not np.array_equal(tags[:, SEG], np.arange(nseg)):
        raise GuidesortError("colored sample out of segment order")
    with machine.phase(f"step4@{phase_tag}"):
        data = machine.reserve(params.d4)
        lead = machine.reserve(params.d_l)
        try:
            cols = tags[:, COL].tolist()
            idxs = tags[:, IDX].tolist()
            snb = colored.nblocks
            lead_loaded = 0
            td, tf, tmf = machine._tr_d, machine._tr_f, machine._tr_mf
            dframes = data.frames
            for st in range(0, p, params.d4):
                cnt = min(params.d4, p - st)
                read_blocks(machine, run, st, cnt, dframes[:cnt])
                for gs in range(st, st + cnt, params.d_bar):
                    gcnt = min(params.d_bar, st + cnt - gs)
                    need_seg = (gs + gcnt - 1) // s
                    while lead_loaded * B <= need_seg:
                        rc = min(params.d_l, snb - lead_loaded)
                        read_blocks(machine, colored.run, lead_loaded, rc,
                                    lead.frames[:rc])
                        lead_loaded += rc
                    t = 0
                    for bk in range(gs, gs + gcnt):
                        seg = bk // s
                        dd = cols[seg] + bk - seg * s
                        td[t] = dd
                        tf[t] = bases[dd] + idxs[seg]
                        tmf[t] = dframes[bk - st]
                        t += 1
                    machine.io_output_at(gcnt)
        finally:
            machine.release(lead)
            machine.release(data)
    return Placement(bases, colored, p)


# ----------------------------------------------------------------------
# step 5: the guided merge

def guided_merge(machine: Machine, placements: list, guide: LeaderSeq,
                 params: GuideParams, emit_sample: bool = False, *,
                 phase_tag: str = "", report: SortReport | None = None,
                 kernels=None):
    """Merge redistributed runs under guide control, batching block input.

    Returns the merged striped run and, when requested, its sample for the
    next recursion level.
    """
    K = kernels if kernels is not None else get_kernels()
    B = machine.B
    s = params.s
    k = len(placements)
    total_blocks = sum(pl.num_blocks for pl in placements)
    g = params.d_bar // s
    L = guide.count
    tags = guide.tags
    run_nblocks = [pl.num_blocks for pl in placements]
    seg_total = [-(-pb // s) for pb in run_nblocks]
    sample = None
    with machine.phase(f"step5@{phase_tag}"):
        runbuf = machine.reserve(k * s)
        batch = machine.reserve(params.d_bar)
        gbuf = machine.reserve(params.d_l)
        sbuf = machine.reserve(params.d_l, contiguous=True)
        obuf = machine.reserve(params.d5, contiguous=True)
        try:
            out = alloc_striped(machine, total_blocks)
            km = K.GuidedMerge(machine.mem, B, k, s, g)
            rf = km.run_frames
            for i in range(k):
                rf[i, :] = runbuf.frames[i * s:(i + 1) * s]
            bf = km.batch_frames
            for t in range(g):
                bf[t, :] = batch.frames[t * s:(t + 1) * s]
            olo, ohi = obuf.span(B)
            km.set_out(olo, ohi)
            srun = None
            slo = 0
            if emit_sample:
                km.enable_sample(s * B)
                slo, shi = sbuf.span(B)
                km.set_sample(slo, shi)
                L_out = -(-total_blocks // s)
                srun = alloc_striped(machine, -(-L_out // B), L_out)
            gnb = guide.nblocks
            g_loaded = 0
            g_win_lo = 0
            rids = tags[:, RID].tolist()
            segs = tags[:, SEG].tolist()
            cols = tags[:, COL].tolist()
            idxs = tags[:, IDX].tolist()
            out_written = 0
            sample_flushed = 0
            sample_emitted = 0

            def ensure_guide(e):
                nonlocal g_loaded, g_win_lo
                while e >= g_loaded * B and g_loaded < gnb:
                    rc = min(params.d_l, gnb - g_loaded)
                    read_blocks(machine, guide.run, g_loaded, rc, gbuf.frames[:rc])
                    g_win_lo = g_loaded
                    g_loaded += rc

            def guide_value(e):
                blk = e // B
                if not g_win_lo <= blk < g_loaded:
                    raise GuidesortError("guide entry consulted before being read")
                mf = gbuf.frames[blk - g_win_lo]
                row = machine.mem[mf * B + e % B]
                return int(row[0]), int(row[1])

            def flush_out():
                nonlocal out_written
                nitems = km.out_pos - olo
                if nitems % B:
                    raise GuidesortError("output flush not block aligned")
                nb = nitems // B
                if nb:
                    write_blocks(machine, out, out_written, nb, obuf.frames[:nb])
                    out_written += nb
                km.set_out(olo, ohi)

            def flush_sample(final=False):
                nonlocal sample_flushed, sample_emitted
                cnt = km.sample_pos - slo
                if cnt == 0:
                    return
                nb = -(-cnt // B) if final else cnt // B
                if final and cnt % B:
                    machine.mem[km.sample_pos:slo + nb * B] = np.uint64(0xFFFFFFFFFFFFFFFF)
                write_blocks(machine, srun, sample_flushed, nb, sbuf.frames[:nb])
                sample_flushed += nb
                sample_emitted += cnt
                km.set_sample(slo, shi)

            td, tf, tmf = machine._tr_d, machine._tr_f, machine._tr_mf
            batch_run_arr = km.batch_run
            batch_len_arr = km.batch_len
            b = 0
            while b < L:
                bcnt = min(g, L - b)
                ensure_guide(min(b + g, L - 1))
                nt = 0
                for t in range(bcnt):
                    e = b + t
                    rid = rids[e]
                    seg = segs[e]
                    c = cols[e]
                    nblk = s if seg < seg_total[rid] - 1 else run_nblocks[rid] - seg * s
                    batch_run_arr[t] = rid
                    batch_len_arr[t] = nblk * B
                    row = bf[t]
                    base = placements[rid].bases
                    ix = idxs[e]
                    for j in range(nblk):
                        td[nt] = c + j
                        tf[nt] = base[c + j] + ix
                        tmf[nt] = row[j]
                        nt += 1
                machine.io_input_at(nt)
                km.load_batch(bcnt)
                nxt = b + g
                if nxt < L:
                    bk, bt = guide_value(nxt)
                    has_bound = True
                else:
                    bk = bt = 0
                    has_bound = False
                while True:
                    st = km.run(bk, bt, has_bound)
                    if st == OUT_FULL:
                        flush_out()
                    elif st == SAMPLE_FULL:
                        flush_sample()
                    elif st in (NEED_BATCH, DRAINED):
                        break
                    else:
                        raise GuidesortError(f"unexpected kernel status {st}")
                if km.batch_next != km.batch_count:
                    raise GuidesortError("batch not fully activated at its bound")
                b = nxt
            flush_out()
            if out_written != total_blocks:
                raise GuidesortError("merged output incomplete")
            if emit_sample:
                flush_sample(final=True)
                if sample_emitted != srun.num_items:
                    raise GuidesortError("sample emission incomplete")
                stags = np.zeros((srun.num_items, 4), dtype=np.int64)
                stags[:, SEG] = np.arange(srun.num_items)
                sample = LeaderSeq(srun, stags)
                if report is not None:
                    report.y_blocks += srun.num_blocks
        finally:
            machine.release(obuf)
            machine.release(sbuf)
            machine.release(gbuf)
            machine.release(batch)
            machine.release(runbuf)
    return out, sample
