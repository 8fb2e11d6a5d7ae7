"""Core domain types: system state, queue-length summaries, service-time
distributions, scheduling disciplines, and the reproducible-randomness contract.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

MEAN_TOL = 1e-12


# ---------------------------------------------------------------------------
# Randomness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RngStream:
    """Counter-based, splittable random stream.

    A stream is named by a master seed plus a path of (label, index) pairs.
    Distinct paths give statistically independent substreams; the same
    (seed, path) reproduces the same sequence on every platform.  Substreams
    can therefore be handed to replications in any schedule without changing
    the numbers each replication sees.
    """

    master_seed: int
    path: tuple = ()

    def child(self, label: str, index: int = 0) -> "RngStream":
        return RngStream(self.master_seed, self.path + ((label, index),))

    def generator(self) -> np.random.Generator:
        key = []
        for label, index in self.path:
            key.append(zlib.crc32(str(label).encode("utf-8")) & 0xFFFFFFFF)
            key.append(int(index) & 0xFFFFFFFF)
        ss = np.random.SeedSequence(entropy=int(self.master_seed) & (2**64 - 1),
                                    spawn_key=tuple(key))
        return np.random.Generator(np.random.Philox(ss))


def as_generator(rng) -> np.random.Generator:
    """Accept either an RngStream or an already-built numpy Generator."""
    if isinstance(rng, RngStream):
        return rng.generator()
    return rng


# ---------------------------------------------------------------------------
# System state
# ---------------------------------------------------------------------------

class Job:
    """A task in a queue: remaining work (mean-1 scale) plus bookkeeping."""

    __slots__ = ("id", "residual", "arrived_at")

    def __init__(self, id: int, residual: float, arrived_at: float):
        if residual <= 0:
            raise ValueError("job residual must be positive")
        self.id = id
        self.residual = residual
        self.arrived_at = arrived_at

    def __repr__(self):
        return f"Job(id={self.id}, residual={self.residual:.6g}, arrived_at={self.arrived_at:.6g})"


class ServerState:
    """One server's queue, in arrival order.  Discipline-specific orderings
    (head-of-line, latest arrival, equal shares) are derived when needed and
    never stored separately."""

    __slots__ = ("jobs",)

    def __init__(self, jobs=None):
        self.jobs = list(jobs) if jobs else []

    def __len__(self):
        return len(self.jobs)


class Configuration:
    """Queue-length state of the N-server system, with per-job residual work."""

    __slots__ = ("queues", "N")

    def __init__(self, queues):
        queues = list(queues)
        if not queues:
            raise ValueError("a configuration needs at least one server")
        self.queues = queues
        self.N = len(queues)

    @classmethod
    def empty(cls, n: int) -> "Configuration":
        return cls([ServerState() for _ in range(n)])

    @classmethod
    def from_lengths(cls, lengths, dist=None, rng=None) -> "Configuration":
        """Build a configuration with the given queue lengths.  Initial jobs
        need residual work; it is drawn from `dist` (required when any queue
        is non-empty)."""
        lengths = list(lengths)
        total = sum(lengths)
        if total > 0 and (dist is None or rng is None):
            raise ValueError("non-empty initial queues need a service distribution and rng")
        gen = as_generator(rng) if rng is not None else None
        queues = []
        next_id = 0
        for ln in lengths:
            if ln < 0:
                raise ValueError("queue lengths must be non-negative")
            jobs = []
            for _ in range(ln):
                jobs.append(Job(next_id, float(dist.sample(gen)), 0.0))
                next_id += 1
            queues.append(ServerState(jobs))
        return cls(queues)

    def lengths(self):
        return [len(q) for q in self.queues]

    def max_length(self) -> int:
        return max(len(q) for q in self.queues)


# ---------------------------------------------------------------------------
# Occupancy summaries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TailCounts:
    """pi[k] = number of servers whose queue length is at least k."""

    pi: tuple

    @property
    def N(self) -> int:
        return self.pi[0]

    def get(self, k: int) -> int:
        return self.pi[k] if k < len(self.pi) else 0


@dataclass(frozen=True)
class EmpiricalMeasure:
    """m[k] = fraction of servers holding exactly k jobs."""

    m: tuple


def tail_counts_from_lengths(lengths, k_max: int) -> TailCounts:
    counts = np.bincount(lengths, minlength=k_max + 1)
    tail = np.flip(np.cumsum(np.flip(counts)))
    return TailCounts(tuple(int(v) for v in tail[: k_max + 1]))


def tail_counts(config: Configuration, k_max: int) -> TailCounts:
    """Tail occupancy pi_k for k = 0..k_max."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    return tail_counts_from_lengths(config.lengths(), k_max)


def empirical_measure(config: Configuration, k_max: int) -> EmpiricalMeasure:
    """Fraction of servers at each queue length, k = 0..k_max.

    Raises if k_max would truncate occupied levels, so tails are never
    silently biased; enlarge k_max instead.
    """
    top = config.max_length()
    if k_max < top:
        raise ValueError(
            f"k_max={k_max} truncates occupied levels (max queue length {top})")
    tc = tail_counts(config, k_max + 1)
    n = config.N
    m = tuple((tc.pi[k] - tc.get(k + 1)) / n for k in range(k_max + 1))
    return EmpiricalMeasure(m)


# ---------------------------------------------------------------------------
# Service-time distributions (all normalized to mean exactly 1)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ServiceDistribution:
    """A mean-1 service-time distribution.

    Construction rescales the natural parameterization so the analytic mean
    is exactly 1; `mean()` recomputes it from the closed form so the
    normalization can be checked without sampling.
    """

    kind: str
    params: tuple = ()

    # -- constructors -------------------------------------------------------

    @classmethod
    def exponential(cls):
        return cls("exponential")

    @classmethod
    def deterministic(cls):
        return cls("deterministic")

    @classmethod
    def erlang(cls, shape: int):
        if shape < 1:
            raise ValueError("erlang shape must be a positive integer")
        return cls("erlang", (int(shape),))

    @classmethod
    def hyperexponential(cls, weights, rates):
        weights = tuple(float(w) for w in weights)
        rates = tuple(float(r) for r in rates)
        if len(weights) != len(rates) or not weights:
            raise ValueError("weights and rates must be equal-length, non-empty")
        if any(w <= 0 for w in weights) or any(r <= 0 for r in rates):
            raise ValueError("hyperexponential weights and rates must be positive")
        total = sum(weights)
        weights = tuple(w / total for w in weights)
        mean = sum(w / r for w, r in zip(weights, rates))
        rates = tuple(r * mean for r in rates)  # rescale to mean 1
        return cls("hyperexponential", (weights, rates))

    @classmethod
    def hyperexponential_cv2(cls, cv2: float):
        """Two-phase balanced-means hyperexponential with the given squared
        coefficient of variation (> 1)."""
        if cv2 <= 1:
            raise ValueError("hyperexponential needs cv^2 > 1")
        x = math.sqrt((cv2 - 1.0) / (cv2 + 1.0))
        p1 = 0.5 * (1.0 + x)
        p2 = 1.0 - p1
        return cls.hyperexponential((p1, p2), (2.0 * p1, 2.0 * p2))

    @classmethod
    def lognormal(cls, sigma: float):
        if sigma <= 0:
            raise ValueError("lognormal sigma must be positive")
        return cls("lognormal", (float(sigma),))

    @classmethod
    def weibull(cls, shape: float):
        if shape <= 0:
            raise ValueError("weibull shape must be positive")
        return cls("weibull", (float(shape),))

    # -- analytics ----------------------------------------------------------

    def mean(self) -> float:
        if self.kind in ("exponential", "deterministic"):
            return 1.0
        if self.kind == "erlang":
            (shape,) = self.params
            return shape / float(shape)
        if self.kind == "hyperexponential":
            weights, rates = self.params
            return sum(w / r for w, r in zip(weights, rates))
        if self.kind == "lognormal":
            (sigma,) = self.params
            mu = -0.5 * sigma * sigma
            return math.exp(mu + 0.5 * sigma * sigma)
        if self.kind == "weibull":
            (shape,) = self.params
            scale = 1.0 / math.gamma(1.0 + 1.0 / shape)
            return scale * math.gamma(1.0 + 1.0 / shape)
        raise ValueError(f"unknown distribution kind {self.kind!r}")

    def variance(self) -> float:
        if self.kind == "exponential":
            return 1.0
        if self.kind == "deterministic":
            return 0.0
        if self.kind == "erlang":
            (shape,) = self.params
            return 1.0 / shape
        if self.kind == "hyperexponential":
            weights, rates = self.params
            second = sum(2.0 * w / (r * r) for w, r in zip(weights, rates))
            return second - 1.0
        if self.kind == "lognormal":
            (sigma,) = self.params
            return math.exp(sigma * sigma) - 1.0
        if self.kind == "weibull":
            (shape,) = self.params
            scale = 1.0 / math.gamma(1.0 + 1.0 / shape)
            return scale * scale * math.gamma(1.0 + 2.0 / shape) - 1.0
        raise ValueError(f"unknown distribution kind {self.kind!r}")

    # -- sampling -----------------------------------------------------------

    def sample(self, gen: np.random.Generator, size=None):
        if self.kind == "exponential":
            return gen.exponential(1.0, size)
        if self.kind == "deterministic":
            return 1.0 if size is None else np.ones(size)
        if self.kind == "erlang":
            (shape,) = self.params
            return gen.gamma(shape, 1.0 / shape, size)
        if self.kind == "hyperexponential":
            weights, rates = self.params
            if size is None:
                u = gen.random()
                acc = 0.0
                for w, r in zip(weights, rates):
                    acc += w
                    if u < acc:
                        return gen.exponential(1.0 / r)
                return gen.exponential(1.0 / rates[-1])
            comp = gen.choice(len(rates), size=size, p=weights)
            return gen.exponential(1.0, size) / np.asarray(rates)[comp]
        if self.kind == "lognormal":
            (sigma,) = self.params
            return gen.lognormal(-0.5 * sigma * sigma, sigma, size)
        if self.kind == "weibull":
            (shape,) = self.params
            scale = 1.0 / math.gamma(1.0 + 1.0 / shape)
            return scale * gen.weibull(shape, size)
        raise ValueError(f"unknown distribution kind {self.kind!r}")

    # -- config-file form ---------------------------------------------------

    def to_json(self) -> dict:
        if self.kind == "erlang":
            return {"kind": "erlang", "shape": self.params[0]}
        if self.kind == "hyperexponential":
            weights, rates = self.params
            return {"kind": "hyperexponential",
                    "weights": list(weights), "rates": list(rates)}
        if self.kind == "lognormal":
            return {"kind": "lognormal", "sigma": self.params[0]}
        if self.kind == "weibull":
            return {"kind": "weibull", "shape": self.params[0]}
        return {"kind": self.kind}

    @classmethod
    def from_json(cls, doc: dict) -> "ServiceDistribution":
        kind = doc.get("kind")
        if kind == "exponential":
            return cls.exponential()
        if kind == "deterministic":
            return cls.deterministic()
        if kind == "erlang":
            return cls.erlang(doc["shape"])
        if kind == "hyperexponential":
            if "cv2" in doc:
                return cls.hyperexponential_cv2(doc["cv2"])
            return cls.hyperexponential(doc["weights"], doc["rates"])
        if kind == "lognormal":
            return cls.lognormal(doc["sigma"])
        if kind == "weibull":
            return cls.weibull(doc["shape"])
        raise ValueError(f"unknown service distribution kind {kind!r}")


def sample_service(dist: ServiceDistribution, rng) -> float:
    """Draw one service time from a mean-1 distribution."""
    return float(dist.sample(as_generator(rng)))


# ---------------------------------------------------------------------------
# Scheduling disciplines
# ---------------------------------------------------------------------------

DISCIPLINE_KINDS = ("FIFO", "PS", "LIFO_PR")


@dataclass(frozen=True)
class Discipline:
    """A work-conserving local scheduling policy.

    FIFO serves the head of the line at rate 1; PS splits rate 1 equally;
    LIFO_PR serves the latest arrival at rate 1, preempting and later
    resuming earlier jobs.
    """

    kind: str

    def __post_init__(self):
        if self.kind not in DISCIPLINE_KINDS:
            raise ValueError(f"unknown discipline {self.kind!r}")


FIFO = Discipline("FIFO")
PS = Discipline("PS")
LIFO_PR = Discipline("LIFO_PR")


def discipline_from_name(name: str) -> Discipline:
    return Discipline(name)
