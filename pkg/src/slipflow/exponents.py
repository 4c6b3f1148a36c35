"""Integrability-exponent ladders and the friction exponent gate.

A homogeneous velocity/pressure pair that is merely L^t integrable can be
bootstrapped to L^2 by walking a short ladder of Lebesgue exponents; each
rung is justified by a Sobolev or trace embedding.  This module does the
exponent arithmetic only: building the ladders, checking the embedding
inequalities along them, and evaluating the integrability condition on the
boundary friction coefficient.

Exponents are kept as ``fractions.Fraction`` whenever the inputs are exact
(ints, Fractions); float inputs degrade gracefully to float arithmetic with
a small comparison slack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Union

Number = Union[int, float, Fraction]

_FLOAT_SLACK = 1e-12


def _exact(x: Number) -> bool:
    return isinstance(x, (int, Fraction))


def _as_number(x: Number) -> Number:
    """Normalize to Fraction when exact, float otherwise."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return float(x)


def conjugate(t: Number) -> Number:
    """Lebesgue conjugate t' with 1/t + 1/t' = 1."""
    t = _as_number(t)
    if t <= 1:
        raise ValueError(f"conjugate requires t > 1, got {t}")
    return t / (t - 1)


def sobolev_star(t: Number, n: Number):
    """Sobolev-improved exponent t* with 1/t* = 1/t - 1/n, or None if t >= n."""
    t = _as_number(t)
    n = _as_number(n)
    if t >= n:
        return None
    inv = 1 / Fraction(t) - 1 / Fraction(n) if _exact(t) and _exact(n) else 1.0 / t - 1.0 / n
    return 1 / inv


@dataclass(frozen=True)
class ExponentLadder:
    """A finite increasing sequence of Lebesgue exponents.

    ``levels`` holds (t_0, ..., t_M); ``t_start`` is the exponent the walk
    begins from (one rung below t_0 for the slip flavor, equal to t_0 for
    the friction flavor).  ``first_ge_two`` is the first index m with
    t_m >= 2, which may be well below the guaranteed endpoint M.
    """

    flavor: str                 # "slip" | "friction"
    s: Number
    n: int
    levels: tuple = ()
    q: Number = None
    t_start: Number = None
    M: int = 0
    first_ge_two: int = field(default=0)

    def __post_init__(self):
        if self.flavor not in ("slip", "friction"):
            raise ValueError(f"unknown ladder flavor {self.flavor!r}")

    @property
    def final(self) -> Number:
        return self.levels[-1]

    def as_rows(self):
        """Yield (index, exponent, reciprocal) rows for tabular output."""
        for m, t in enumerate(self.levels):
            yield m, t, 1 / Fraction(t) if isinstance(t, Fraction) else 1.0 / t


def slip_ladder(s: Number, n: int) -> ExponentLadder:
    """Exponent ladder for the pure-slip problem.

    Starts at t_start = s' (the conjugate), jumps to 1/t_0 = 1 - 2/(s+n) and
    then follows 1/t_m = 1/t_{m-1} + 1/s - 1/n.  The length
    M = ceil((1/n - 1/s)^{-1} (1/2 - 2/(s+n))) makes t_M >= 2.
    """
    s = _as_number(s)
    n = int(n)
    if n < 2:
        raise ValueError(f"dimension n must be >= 2, got {n}")
    if s <= n:
        raise ValueError(f"regularity exponent s must exceed n = {n}, got s = {s}")

    t_start = conjugate(s)
    inv_t0 = 1 - 2 / (s + n)
    step = 1 / s - Fraction(1, n) if _exact(s) else 1.0 / s - 1.0 / n  # negative
    ratio = (Fraction(1, 2) - 2 / (s + n)) / (Fraction(1, n) - 1 / s) if _exact(s) \
        else (0.5 - 2.0 / (s + n)) / (1.0 / n - 1.0 / s)
    M = max(1, math.ceil(ratio - _FLOAT_SLACK) if not _exact(s) else math.ceil(ratio))

    inv = inv_t0
    levels = [1 / inv]
    for _ in range(M):
        inv = inv + step
        if inv <= 0:
            raise ArithmeticError("ladder left the admissible range (1/t <= 0)")
        levels.append(1 / inv)

    if levels[-1] < 2:
        raise ArithmeticError(f"ladder failed to reach exponent 2: {levels}")
    first = next(m for m, t in enumerate(levels) if t >= 2)
    return ExponentLadder(flavor="slip", s=s, n=n, levels=tuple(levels),
                          t_start=t_start, M=M, first_ge_two=first)


def navier_ladder(s: Number, n: int, q: Number) -> ExponentLadder:
    """Exponent ladder for the friction (Navier) problem.

    Starts at t_0 = s' and follows 1/t_m = 1/t_{m-1} - (1/n)(1 - (n-1)/q),
    valid for q > n - 1.  M is the least integer satisfying
    M >= n (1 - (n-1)/q)^{-1} ceil(1/t_0 - 1/2); ``first_ge_two`` reports
    the (often much smaller) first index with t_m >= 2.
    """
    s = _as_number(s)
    q = _as_number(q)
    n = int(n)
    if n < 2:
        raise ValueError(f"dimension n must be >= 2, got {n}")
    if s <= n:
        raise ValueError(f"regularity exponent s must exceed n = {n}, got s = {s}")
    if q <= n - 1:
        raise ValueError(f"friction integrability exponent q must exceed n - 1 = {n - 1}, got q = {q}")

    t0 = conjugate(s)
    step = (1 - (n - 1) / q) / n  # positive decrement of 1/t
    inv_gap = 1 / t0 - (Fraction(1, 2) if _exact(t0) else 0.5)
    ceil_gap = math.ceil(inv_gap) if inv_gap > 0 else 0
    bound = ceil_gap / step
    M = max(1, math.ceil(bound - _FLOAT_SLACK) if not _exact(bound) else math.ceil(bound))

    # The guaranteed length M is a crude bound; the recurrence can leave
    # (0, infty) past the first rung >= 2, so levels stop there while M is
    # still reported.
    inv = 1 / t0
    levels = [t0]
    while levels[-1] < 2:
        inv = inv - step
        if inv <= 0:
            raise ArithmeticError("friction ladder left the admissible range (1/t <= 0)")
        levels.append(1 / inv)

    first = len(levels) - 1
    return ExponentLadder(flavor="friction", s=s, n=n, q=q, levels=tuple(levels),
                          t_start=t0, M=M, first_ge_two=first)


@dataclass(frozen=True)
class ChainReport:
    """Result of walking the embedding inequalities along a ladder."""

    ok: bool
    checks: tuple      # (description, holds) pairs
    terminated_at: int  # index where a starred exponent stopped existing, or -1

    def __bool__(self):
        return self.ok


def check_embedding_chain(ladder: ExponentLadder) -> ChainReport:
    """Verify t_m <= t*_{m-1} and t'_{m-1} <= (t'_m)* along the ladder.

    Both inequalities are what the gradient and dual embeddings need at
    every rung.  If a previous exponent reaches the dimension n, the
    Sobolev-improved exponent is undefined and the chain is reported as
    terminated there (not as a failure: the walk is already done).
    """
    n = ladder.n
    seq = [ladder.t_start] + list(ladder.levels) if ladder.flavor == "slip" else list(ladder.levels)
    slack = 0 if all(isinstance(t, Fraction) for t in seq) else _FLOAT_SLACK
    checks = []
    terminated = -1
    ok = True
    for m in range(1, len(seq)):
        t_prev, t_cur = seq[m - 1], seq[m]
        star = sobolev_star(t_prev, n)
        if star is None:
            terminated = m
            checks.append((f"t_{m - 1} >= n: starred exponent undefined, chain terminated", True))
            break
        holds = t_cur <= star + slack
        checks.append((f"t_{m} <= (t_{m - 1})*  [{float(t_cur):.6g} <= {float(star):.6g}]", holds))
        ok = ok and holds

        tp_cur = conjugate(t_cur)
        tp_prev = conjugate(t_prev)
        star_dual = sobolev_star(tp_cur, n)
        if star_dual is None:
            checks.append((f"t'_{m} >= n: dual starred exponent undefined", True))
        else:
            holds_d = tp_prev <= star_dual + slack
            checks.append((f"t'_{m - 1} <= (t'_{m})*  [{float(tp_prev):.6g} <= {float(star_dual):.6g}]", holds_d))
            ok = ok and holds_d
    return ChainReport(ok=ok, checks=tuple(checks), terminated_at=terminated)


def friction_exponent_gate(r: Number, n: int, q: Number) -> bool:
    """Integrability condition on the boundary friction coefficient.

    With n' = n/(n-1), the coefficient must lie in L^q of the boundary with

        q >= r/n'   if r > n,
        q > n - 1   if n' <= r <= n,
        q > r'/n'   if r < n'.

    Comparisons are exact for rational inputs, slack 1e-12 for floats.
    """
    r = _as_number(r)
    q = _as_number(q)
    n = int(n)
    if r <= 1:
        raise ValueError(f"exponent r must exceed 1, got {r}")
    if n < 2:
        raise ValueError(f"dimension n must be >= 2, got {n}")
    if q <= 0:
        raise ValueError(f"exponent q must be positive, got {q}")

    n_prime = Fraction(n, n - 1)
    # floats within slack of a boundary count as on it: ">=" keeps them,
    # strict ">" drops them
    slack = 0 if _exact(r) and _exact(q) else _FLOAT_SLACK
    if r > n:
        return q >= r / n_prime - slack
    if r >= n_prime:
        return q > n - 1 + slack
    return q > conjugate(r) / n_prime + slack
