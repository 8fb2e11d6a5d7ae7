"""Closed-form arrival rates and correlation bounds for JSQ(D) systems.

Every function here is a pure function of scalar inputs.  The rate formulas
accept `Fraction` load values and then return exact rationals, which the test
suite uses as its arbitrary-precision oracle; with floats, the combinatorial
inner sums are still accumulated exactly in rational arithmetic and rounded
once at the end.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from math import comb

RELATIONS = ("below", "equal", "above")


@dataclass(frozen=True)
class RateInputs:
    """Occupancy context for the per-server arrival rate at one level.

    `pi_k` / `pi_k1` are the numbers of servers at level >= k and >= k+1
    (the tagged server sits at exactly level k, so pi_k1 < pi_k strictly).
    """

    n: int
    d: int
    lam: float
    pi_k: int
    pi_k1: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least two servers")
        if not 1 <= self.d <= self.n:
            raise ValueError("need 1 <= d <= n")
        if not 0 < self.lam < 1:
            raise ValueError("load must lie in (0, 1)")
        if not 0 <= self.pi_k1 < self.pi_k <= self.n:
            raise ValueError("need 0 <= pi_k1 < pi_k <= n")


@dataclass(frozen=True)
class BoundInputs:
    """Parameters of the correlation / clan bounds at a time horizon."""

    n: int
    d: int
    lam: float
    t: float

    def __post_init__(self):
        if self.n < 2 or self.d < 1:
            raise ValueError("need n >= 2 and d >= 1")
        if not 0 < self.lam < 1:
            raise ValueError("load must lie in (0, 1)")
        if self.t < 0:
            raise ValueError("time must be non-negative")


# ---------------------------------------------------------------------------
# Per-server arrival rate, three equivalent forms
# ---------------------------------------------------------------------------

def selection_sum(d: int, a: int, b: int):
    """Sum over split points of falling-factorial products of a and b.

    Term i multiplies the first i falling factors of a with the trailing
    d-1-i factors of b; it satisfies d! * C(b,d) = d! * C(a,d)
    + (b-a) * selection_sum(d, a, b), which is how the closed-form rate
    collapses to a difference of binomials.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if not 0 <= a < b:
        raise ValueError("need 0 <= a < b")
    total = 0
    for i in range(d):
        term = 1
        for j in range(i):
            term *= a - j
        for j in range(i + 1, d):
            term *= b - j
        total += term
    return total


def arrival_rate_hyper(inp: RateInputs):
    """Arrival rate to the tagged server, as the explicit sum over how many of
    the d sampled servers sit at the tagged level (hypergeometric weights)."""
    n, d, lam = inp.n, inp.d, inp.lam
    gap = inp.pi_k - inp.pi_k1
    total = Fraction(0)
    for i in range(1, d + 1):
        w = comb(gap - 1, i - 1) * comb(inp.pi_k1, d - i)
        if w:
            total += Fraction(w, i)
    value = lam * n * total / comb(n, d)
    return value if isinstance(lam, Fraction) else float(value)


def arrival_rate_closed(inp: RateInputs):
    """Same rate via the binomial-difference form, valid for every admissible
    occupancy under the convention C(n, r) = 0 outside 0 <= r <= n."""
    n, d, lam = inp.n, inp.d, inp.lam
    num = comb(inp.pi_k, d) - comb(inp.pi_k1, d)
    value = lam * n * Fraction(num, comb(n, d) * (inp.pi_k - inp.pi_k1))
    return value if isinstance(lam, Fraction) else float(value)


def uniform_rate_bound(d: int, lam):
    """Upper bound lam * d^d / (d-1)! that dominates the arrival rate for
    every system size and occupancy."""
    if d < 1:
        raise ValueError("d must be >= 1")
    value = lam * Fraction(d**d, math.factorial(d - 1))
    return value if isinstance(lam, Fraction) else float(value)


def monotone_threshold(d: int) -> int:
    """System size 3d - 4 past which the rate comparison between consecutive
    system sizes is claimed non-decreasing."""
    if d < 2:
        raise ValueError("threshold is defined for d >= 2")
    return 3 * d - 4


def arrival_rate_plus_one(inp: RateInputs, relation: str):
    """Arrival rate to the tagged server in the (n+1)-server system, written
    in terms of the first n servers' occupancy plus the relation of the extra
    server's queue length to the tagged level.

    The shared-stream ("yellow") term is always present; an extra term is
    added when the new server sits strictly above the tagged level or exactly
    at it.  A strictly shorter extra server absorbs every arrival that samples
    it, so it contributes nothing.
    """
    if relation not in RELATIONS:
        raise ValueError(f"relation must be one of {RELATIONS}")
    n, d, lam = inp.n, inp.d, inp.lam
    gap = inp.pi_k - inp.pi_k1
    base = n * Fraction(comb(inp.pi_k, d) - comb(inp.pi_k1, d), comb(n, d) * gap)
    value = base * Fraction(n - d + 1, n)
    if relation == "above":
        extra = Fraction(0)
        for i in range(1, d + 1):
            if d - 1 - i < 0:   # convention: binomial vanishes outside range
                continue
            w = comb(gap - 1, i - 1) * comb(inp.pi_k1, d - 1 - i)
            if w:
                extra += Fraction(w, i)
        value += d * extra / comb(n, d - 1)
    elif relation == "equal":
        extra = Fraction(0)
        for i in range(2, d + 1):
            w = comb(gap - 1, i - 2) * comb(inp.pi_k1, d - i)
            if w:
                extra += Fraction(w, i)
        value += d * extra / comb(n, d - 1)
    value = lam * value
    return value if isinstance(lam, Fraction) else float(value)


def adjusted_plus_one_inputs(inp: RateInputs, relation: str) -> RateInputs:
    """Occupancy of the (n+1)-server system once the extra server is counted
    at its stated position relative to the tagged level."""
    if relation == "above":
        return RateInputs(inp.n + 1, inp.d, inp.lam, inp.pi_k + 1, inp.pi_k1 + 1)
    if relation == "equal":
        return RateInputs(inp.n + 1, inp.d, inp.lam, inp.pi_k + 1, inp.pi_k1)
    if relation == "below":
        return RateInputs(inp.n + 1, inp.d, inp.lam, inp.pi_k, inp.pi_k1)
    raise ValueError(f"relation must be one of {RELATIONS}")


# ---------------------------------------------------------------------------
# Clan and correlation bounds
# ---------------------------------------------------------------------------

def _require_room(inp: BoundInputs):
    if inp.n <= inp.d:
        raise ValueError("bound needs n > d")


def clan_growth_factor(inp: BoundInputs) -> float:
    """Exponential envelope exp(2^(d-1) * lam * d * n * t / (n-d)) driving the
    clan-size logistic bound."""
    _require_room(inp)
    expo = 2 ** (inp.d - 1) * inp.lam * inp.d * inp.n * inp.t / (inp.n - inp.d)
    return math.exp(expo) if expo < 709 else math.inf


def clan_size_bound(inp: BoundInputs) -> float:
    """Logistic ceiling on the expected number of servers whose history can
    influence a given server over the last t time units."""
    _require_room(inp)
    u = clan_growth_factor(inp)
    if math.isinf(u):
        return float(inp.n)
    return inp.n * u / (inp.n + u - 1.0)


def _log_bracket(inp: BoundInputs) -> float:
    u = clan_growth_factor(inp)
    n = inp.n
    if math.isinf(u):
        return math.inf
    return n * math.log((n + u - 1.0) / n) - (n - 1.0) * (u - 1.0) / (n + u - 1.0)


def clan_intersection_bound(inp: BoundInputs, proof_variant: bool = False) -> float:
    """Upper bound on the probability that the influence clans of two distinct
    servers overlap.  `proof_variant` swaps the n/(n-d) prefactor for the
    slightly tighter (n-1)/(n-d) one for comparison."""
    _require_room(inp)
    top = (inp.n - 1.0) if proof_variant else float(inp.n)
    return (1.5 ** inp.d) * top / (inp.n - inp.d) * _log_bracket(inp)


def chaos_bound(inp: BoundInputs) -> float:
    """Bound on the covariance of two entries of the empirical measure:
    1/n plus twice the clan-intersection bound."""
    return 1.0 / inp.n + 2.0 * clan_intersection_bound(inp)


def chaos_bound_limit(inp: BoundInputs) -> float:
    """Large-n simplification (1 + (3/2)^d (e^(2^d lam d t) - 1)) / n, valid
    for n past an unquantified threshold; see `limit_bound_is_valid`."""
    return (1.0 + 1.5 ** inp.d * (math.exp(2 ** inp.d * inp.lam * inp.d * inp.t) - 1.0)) / inp.n


def limit_bound_is_valid(inp: BoundInputs) -> bool:
    """Heuristic validity flag for the large-n bound; the threshold is never
    quantified, so flag anything below 10*d as suspect."""
    return inp.n >= 10 * inp.d


def tail_count_cov_bound(inp: BoundInputs) -> float:
    """Covariance bound for the raw (non-normalized) tail counts:
    2 (3/2)^d n^2 (n-1) / (n-d) * [log bracket] + n."""
    _require_room(inp)
    n = inp.n
    return 2.0 * (1.5 ** inp.d) * n * n * (n - 1.0) / (n - inp.d) * _log_bracket(inp) + n


# ---------------------------------------------------------------------------
# Large-system limits
# ---------------------------------------------------------------------------

def asymptotic_tail(d: int, lam: float, k: int):
    """Limiting fraction of servers with at least k jobs:
    lam^((d^k - 1)/(d - 1)), degenerating to lam^k for plain random routing."""
    if d < 1:
        raise ValueError("d must be >= 1")
    if not 0 < lam < 1:
        raise ValueError("load must lie in (0, 1)")
    if k < 0:
        raise ValueError("level must be non-negative")
    if d == 1:
        return lam ** k
    return lam ** ((d**k - 1) // (d - 1))


def cavity_rate(d: int, lam, p_k, p_k1):
    """Limiting per-server arrival rate at a level with tail fractions p_k and
    p_{k+1}: lam * (p_k^d - p_{k+1}^d) / (p_k - p_{k+1}), continuously
    extended to lam * d * p^(d-1) on the diagonal."""
    if d < 1:
        raise ValueError("d must be >= 1")
    if not 0 <= p_k1 <= p_k <= 1:
        raise ValueError("need 0 <= p_k1 <= p_k <= 1")
    if p_k == p_k1:
        return lam * d * p_k ** (d - 1)
    return lam * (p_k**d - p_k1**d) / (p_k - p_k1)
