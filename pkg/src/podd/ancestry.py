"""Influence clans: which servers could have affected a given server's state.

Scanning a realized arrival log backwards from the horizon, a clan starts as
{i} and absorbs the whole sampled set of any arrival that touches it.  Clan
size and the probability that two clans overlap control how fast pairs of
servers decorrelate, so this module also ships a Monte Carlo driver to compare
both quantities against their analytic ceilings.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import RngStream, as_generator
from .engine import EventLog

Z99 = 2.5758293035489004


@dataclass(frozen=True)
class ClanResult:
    server: int
    t: float
    psi: frozenset

    @property
    def size(self) -> int:
        return len(self.psi)


@dataclass(frozen=True)
class ClanStats:
    """Aggregates over replications, one entry per time-grid point."""

    t_grid: tuple
    mean_size: tuple
    size_ci: tuple       # 99% half-widths
    p_intersect: tuple
    p_ci: tuple
    n_reps: int


def _bits(indices) -> int:
    m = 0
    for s in indices:
        m |= 1 << s
    return m


def build_clan(log: EventLog, i: int, t: float) -> ClanResult:
    """Clan of server i over the last t time units of the log.

    Pure function of the log: arrivals are scanned in decreasing time from the
    horizon; whenever the scanned arrival's sampled set meets the clan, the
    clan absorbs the whole set.
    """
    if t > log.horizon:
        raise ValueError("window exceeds the log horizon")
    if not 0 <= i < log.N:
        raise ValueError("server index out of range")
    start = log.horizon - t
    psi = 1 << i
    for ev in reversed(log.arrivals):
        if ev.time < start:
            break
        z = _bits(ev.zeta)
        if psi & z:
            psi |= z
    members = frozenset(s for s in range(log.N) if psi >> s & 1)
    return ClanResult(i, t, members)


def _scan_masks(log: EventLog, seeds, t_grid):
    """Clan bitmasks per seed at each grid time, in one backward pass.

    t_grid must be sorted ascending; the shallowest window closes first as
    the scan moves backwards, so masks are recorded in grid order.
    """
    masks = list(seeds)
    arrivals = log.arrivals
    pos = len(arrivals) - 1
    out = [[] for _ in seeds]
    for t in t_grid:
        start = log.horizon - t
        while pos >= 0 and arrivals[pos].time >= start:
            z = _bits(arrivals[pos].zeta)
            masks = [m | z if m & z else m for m in masks]
            pos -= 1
        for g, m in enumerate(masks):
            out[g].append(m)
    return out


def clan_stats(logs, pairs, t_grid) -> ClanStats:
    """Mean clan size and pair-overlap frequency across replication logs.

    `pairs` are distinct (i, j) server pairs; sizes are averaged over both
    members of every pair.  CIs are normal-approximation at 99%.
    """
    t_grid = tuple(sorted(t_grid))
    for i, j in pairs:
        if i == j:
            raise ValueError("pairs must be distinct")
    sizes = []
    hits = []
    for log in logs:
        if t_grid and t_grid[-1] > log.horizon:
            raise ValueError("grid exceeds a log horizon")
        seeds = []
        for i, j in pairs:
            seeds.append(1 << i)
            seeds.append(1 << j)
        res = _scan_masks(log, seeds, t_grid)
        srow, hrow = [], []
        for ti in range(len(t_grid)):
            sz = 0
            ov = 0
            for p in range(len(pairs)):
                a = res[2 * p][ti]
                b = res[2 * p + 1][ti]
                sz += a.bit_count() + b.bit_count()
                ov += 1 if a & b else 0
            srow.append(sz / (2 * len(pairs)))
            hrow.append(ov / len(pairs))
        sizes.append(srow)
        hits.append(hrow)
    return _aggregate(np.asarray(sizes, float), np.asarray(hits, float), t_grid)


def _aggregate(sizes, hits, t_grid) -> ClanStats:
    n = sizes.shape[0]
    m_sz = sizes.mean(axis=0)
    m_hit = hits.mean(axis=0)
    if n > 1:
        ci_sz = Z99 * sizes.std(axis=0, ddof=1) / math.sqrt(n)
        ci_hit = Z99 * hits.std(axis=0, ddof=1) / math.sqrt(n)
    else:
        ci_sz = np.full_like(m_sz, np.inf)
        ci_hit = np.full_like(m_hit, np.inf)
    return ClanStats(t_grid, tuple(m_sz), tuple(ci_sz),
                     tuple(m_hit), tuple(ci_hit), n)


def _distinct_rows(gen, n_rows, N, D):
    """Uniform D-subsets of range(N), one per row, by rejection on duplicates."""
    z = gen.integers(0, N, size=(n_rows, D))
    if D > 1:
        s = np.sort(z, axis=1)
        bad = (s[:, 1:] == s[:, :-1]).any(axis=1)
        while bad.any():
            z[bad] = gen.integers(0, N, size=(int(bad.sum()), D))
            s = np.sort(z, axis=1)
            bad = (s[:, 1:] == s[:, :-1]).any(axis=1)
    return z


def clan_monte_carlo(N, D, lam, t_grid, n_reps, rng: RngStream,
                     pair=(0, 1)) -> ClanStats:
    """Replication driver tracking one server pair.

    Draws arrival logs directly (Poisson count, sorted uniform times, sampled
    D-sets as an array) instead of going through the event-by-event engine;
    exchangeability makes the tracked pair (0, 1) representative of any pair.
    """
    i, j = pair
    if i == j:
        raise ValueError("pair must be distinct")
    t_grid = tuple(sorted(t_grid))
    ng = len(t_grid)
    gen = as_generator(rng)
    horizon = t_grid[-1]
    sizes = np.empty((n_reps, ng))
    hits = np.empty((n_reps, ng))
    counts = gen.poisson(lam * N * horizon, size=n_reps)
    for r in range(n_reps):
        n_arr = int(counts[r])
        times = np.sort(gen.random(n_arr)) * horizon
        if n_arr:
            zetas = _distinct_rows(gen, n_arr, N, D)
        else:
            zetas = np.empty((0, D), int)
        a = 1 << i
        b = 1 << j
        gi = 0
        for idx in range(n_arr - 1, -1, -1):
            tv = times[idx]
            while gi < ng and tv < horizon - t_grid[gi]:
                sizes[r, gi] = (a.bit_count() + b.bit_count()) / 2
                hits[r, gi] = 1.0 if a & b else 0.0
                gi += 1
            if gi >= ng:
                break
            z = _bits(zetas[idx])
            if a & z:
                a |= z
            if b & z:
                b |= z
        while gi < ng:
            sizes[r, gi] = (a.bit_count() + b.bit_count()) / 2
            hits[r, gi] = 1.0 if a & b else 0.0
            gi += 1
    return _aggregate(sizes, hits, t_grid)
