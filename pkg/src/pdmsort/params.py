"""Parameter selection and validation for the guided mergesort.

All arithmetic is integer-exact: square roots and fourth roots that appear
under floors or ceilings are evaluated through integer predicates, never
through floating point, so equal inputs give bit-equal outputs everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from math import isqrt


class ParamError(ValueError):
    """Requested parameter recipe does not apply to this configuration."""


class UnsupportedConfig(ValueError):
    """No parameter choice satisfies the buffer constraints for this machine."""


def align_divisible(a: int, b: int) -> tuple[int, int]:
    """Lower two positive integers so that one divides the other.

    The result ``(a2, b2)`` satisfies: ``a2 | b2`` or ``b2 | a2``;
    ``a/2 < a2 <= a``; ``max(b/2, b - sqrt(b)) < b2 <= b``; and the pair
    keeps the sorted order of ``(a, b)``.
    """
    if a < 1 or b < 1:
        raise ValueError("arguments must be positive")
    if a == 1:
        return 1, b
    if a >= b:
        return (a // b) * b, b
    if a == b - 1:  # a >= 2 here
        return a, a
    # 2 <= a <= b - 2
    if (a - 1) * (a - 1) <= b:  # a <= sqrt(b) + 1
        return a, (b // a) * a
    c = -(-b // a)
    a2 = b // c
    return a2, c * a2


@dataclass(frozen=True)
class GuideParams:
    """Buffer widths and merge arity driving one guided-mergesort run.

    ``r``: merge arity; ``s``: segment length in blocks; ``d_bar``: batch
    width in blocks; ``d1``: lock-step group size for sample merging;
    ``d2``, ``d4``, ``d5``, ``d_l``: buffer widths in block frames;
    ``q``: block frames charged for the coloring history.
    """

    r: int
    s: int
    d_bar: int
    d1: int
    d2: int
    d4: int
    d5: int
    d_l: int
    q: int

    def as_dict(self) -> dict:
        return asdict(self)


def history_frames(r: int, d_bar: int, s: int, B: int) -> int:
    return -(-((r + 1) * (d_bar - 1)) // (s * B))


def validate_params(p: GuideParams, m: int, B: int, D: int) -> list[str]:
    """Return one named entry per violated constraint; empty means valid."""
    v = []
    if not (1 <= p.s and p.s <= p.d_bar):
        v.append("1 <= s <= D-bar violated")
    if not p.d_bar <= -(-D // 2):
        v.append("D-bar <= ceil(D/2) violated")
    for name, val in (("D2", p.d2), ("D4", p.d4), ("D5", p.d5), ("D_L", p.d_l)):
        if not 1 <= val <= D:
            v.append(f"1 <= {name} <= D violated")
    # (r+1)(D-bar - 1)/(sB) + D2 <= m, cross-multiplied to stay integral
    if (p.r + 1) * (p.d_bar - 1) + p.d2 * p.s * B > m * p.s * B:
        v.append("(r+1)(D-bar - 1)/(sB) + D2 <= m violated")
    if p.d4 + p.d_l > m:
        v.append("D4 + D_L <= m violated")
    if p.r * p.s + p.d_bar + p.d5 + 2 * p.d_l > m:
        v.append("r*s + D-bar + D5 + 2*D_L <= m violated")
    if not 2 <= p.r <= m:
        v.append("2 <= r <= m violated")
    if p.d_bar % p.s != 0:
        v.append("s | D-bar violated")
    if p.d4 % p.d_bar != 0:
        v.append("D-bar | D4 violated")
    if p.d1 != min(D, m // 2):
        v.append("D1 = min(D, floor(m/2)) violated")
    if p.q != history_frames(p.r, p.d_bar, p.s, B):
        v.append("q = ceil((r+1)(D-bar - 1)/(sB)) violated")
    return v


def _ceil_quarter_root_ratio(D: int, B: int) -> int:
    """Smallest integer l with l >= D / (4 * (D*B)**0.25)."""
    ell = 1
    # l >= x  <=>  256 * l**4 * B >= D**3  (after raising to the 4th power)
    target = D ** 3
    while 256 * ell ** 4 * B < target:
        ell += 1
    return ell


def compute_general_params(m: int, B: int, D: int, unchecked: bool = False) -> GuideParams:
    """The general parameter recipe.

    With ``unchecked=True`` the coarse preconditions are skipped so that
    desk-scale configurations can run; the constraint validator still has
    the final word and a violated result raises :class:`UnsupportedConfig`.
    """
    if not unchecked:
        if m < 8:
            raise ParamError(f"general recipe needs m >= 8, got {m}")
        if D < 4:
            raise ParamError(f"general recipe needs D >= 4, got {D}")
        if B < 16:
            raise ParamError(f"general recipe needs B >= 16, got {B}")
    if D > m:
        raise ParamError(f"need D <= m, got D={D}, m={m}")
    d_l = _ceil_quarter_root_ratio(D, B)
    d_tilde = min(D, m - d_l) // 2
    if d_tilde < 1:
        raise UnsupportedConfig(f"no batch width available for m={m}, B={B}, D={D}")
    s, d_bar = align_divisible(max(isqrt(d_tilde // B), 1), d_tilde)
    if d_bar < 2:
        raise UnsupportedConfig(f"batch width collapsed to {d_bar} for m={m}, B={B}, D={D}")
    d5 = min((m - d_bar - 2 * d_l) // 2, D)
    r2 = (m - 1) * s * B // (d_bar - 1) - 1
    r5 = (m - d_bar - d5 - 2 * d_l) // s
    r = min(r2 // 2, r5)
    d2 = min(m - history_frames(r, d_bar, s, B), D)
    d4 = 2 * d_bar
    d1 = min(D, m // 2)
    q = history_frames(r, d_bar, s, B)
    p = GuideParams(r=r, s=s, d_bar=d_bar, d1=d1, d2=d2, d4=d4, d5=d5, d_l=d_l, q=q)
    bad = validate_params(p, m, B, D)
    if bad:
        raise UnsupportedConfig(
            f"general recipe produced invalid parameters for m={m}, B={B}, D={D}: {bad}"
        )
    return p


def compute_simple_params(m: int, B: int, D: int) -> GuideParams:
    """The wide-memory preset: every buffer D frames wide, s = 1.

    The batch width is halved (rounded down for odd D) so that the shared
    redistribution buffer of ``2 * d_bar`` frames never exceeds D.
    """
    if m < 6 * D:
        raise ParamError(f"simple preset needs m >= 6D, got m={m}, D={D}")
    if B < D:
        raise ParamError(f"simple preset needs B >= D, got B={B}, D={D}")
    if D == 1:
        d_bar, d4 = 1, 1
    elif D % 2 == 0:
        d_bar, d4 = D // 2, D
    else:
        d_bar, d4 = D // 2, 2 * (D // 2)
    r = m - 4 * D
    q = history_frames(r, d_bar, 1, B)
    p = GuideParams(r=r, s=1, d_bar=d_bar, d1=min(D, m // 2), d2=D, d4=d4,
                    d5=D, d_l=D, q=q)
    bad = validate_params(p, m, B, D)
    if bad:
        raise UnsupportedConfig(
            f"simple preset produced invalid parameters for m={m}, B={B}, D={D}: {bad}"
        )
    return p


def compute_auto_params(m: int, B: int, D: int) -> GuideParams:
    """Simple preset when its preconditions hold, otherwise the general recipe."""
    try:
        return compute_simple_params(m, B, D)
    except ParamError:
        pass
    try:
        return compute_general_params(m, B, D)
    except ParamError:
        return compute_general_params(m, B, D, unchecked=True)


@dataclass(frozen=True)
class AlgorithmPlan:
    """Routing decision: which sort to run and with what parameters."""

    variant: str  # "sequential" | "striping" | "guidesort"
    arity: int | None = None  # striping only
    params: GuideParams | None = None  # guidesort only

    def as_dict(self) -> dict:
        d = {"variant": self.variant}
        if self.arity is not None:
            d["arity"] = self.arity
        if self.params is not None:
            d["params"] = self.params.as_dict()
        return d


MODES = ("auto", "simple", "general", "striping", "sequential", "guidesort")


def select_algorithm(m: int, B: int, D: int, mode: str = "auto") -> AlgorithmPlan:
    """Route a configuration to an algorithm.

    ``auto`` picks sequential sorting for tiny memories, naive striping when
    D <= sqrt(m), and the guided mergesort otherwise.  The other modes force
    one variant and raise if its preconditions fail (``guidesort`` forces the
    algorithm but keeps automatic parameter choice).
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "sequential":
        return AlgorithmPlan("sequential")
    if mode == "striping":
        arity = isqrt(m)
        if arity < 2:
            raise ParamError(f"striping needs floor(sqrt(m)) >= 2, got m={m}")
        if arity * D > m:
            raise ParamError(f"striping needs arity*D <= m, got {arity}*{D} > {m}")
        return AlgorithmPlan("striping", arity=arity)
    if mode == "simple":
        return AlgorithmPlan("guidesort", params=compute_simple_params(m, B, D))
    if mode == "general":
        return AlgorithmPlan("guidesort", params=compute_general_params(m, B, D))
    if mode == "guidesort":
        return AlgorithmPlan("guidesort", params=compute_auto_params(m, B, D))
    # auto
    if m <= 3:
        return AlgorithmPlan("sequential")
    if D * D <= m:
        return AlgorithmPlan("striping", arity=isqrt(m))
    return AlgorithmPlan("guidesort", params=compute_auto_params(m, B, D))
