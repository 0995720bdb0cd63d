"""Monte Carlo simulation of cache filling and opportunistic delivery.

The simulated network follows the analytic model: each user's encounters
with other users form a Poisson stream, so the number of peers met within
the patience time ``T`` is Poisson(lambda * T) and each encountered peer is
uniform over the other users (sampled without replacement, so a pair meets
at most once). Access-point encounters are Poisson(lambda_ap * T).

Caches are static once filled; a population is stored as an
``(n_users, K)`` integer array of 0-based file ranks.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .csvio import write_csv
from .errors import ConfigurationError, InvalidParameterError
from .optimizer import (
    AllocationVector,
    NetworkParams,
    analytic_miss_rate_random,
    analytic_miss_rate_selective,
    k_most_popular_allocation,
    optimal_allocation,
    random_allocation,
)
from .popularity import PopularityDistribution, sample_rank

__all__ = [
    "SCHEMES",
    "UserState",
    "CachePopulation",
    "MissStats",
    "SimConfig",
    "SweepRow",
    "derive_seed",
    "fill_caches_selective",
    "fill_caches_systematic",
    "fill_caches_top_k",
    "empirical_allocation",
    "simulate_misses",
    "scheme_population",
    "sweep_lambda_t",
    "total_variation",
    "write_sweep_csv",
    "write_fig1_csv",
]

log = logging.getLogger(__name__)

SCHEMES = ("random", "k_most_popular", "optimal", "pushing_algorithm")
_CHUNK = 8192


@dataclass(frozen=True)
class UserState:
    """The set of file ranks one user caches."""

    cache: frozenset


class CachePopulation:
    """Cache contents of every user.

    Parameters
    ----------
    caches : ndarray of int, shape (n_users, K)
        Row ``i`` lists the distinct file ranks user ``i`` stores.
    n_files : int
    """

    def __init__(self, caches, n_files: int):
        caches = np.asarray(caches, dtype=np.int64)
        if caches.ndim != 2 or caches.shape[0] < 1:
            raise InvalidParameterError("caches must be a nonempty (n_users, K) array")
        if caches.size and (caches.min() < 0 or caches.max() >= n_files):
            raise InvalidParameterError("cache entries must be ranks in [0, n_files)")
        self.caches = caches
        self.n_files = int(n_files)

    def __len__(self):
        return self.caches.shape[0]

    def __getitem__(self, i) -> UserState:
        return UserState(frozenset(int(r) for r in self.caches[i]))

    @property
    def n_users(self) -> int:
        return self.caches.shape[0]

    @property
    def capacity(self) -> int:
        return self.caches.shape[1]

    @cached_property
    def holds(self) -> np.ndarray:
        """Boolean ``(n_users, n_files)`` membership table."""
        table = np.zeros((self.n_users, self.n_files), dtype=bool)
        rows = np.repeat(np.arange(self.n_users), self.capacity)
        table[rows, self.caches.ravel()] = True
        return table

    def has_duplicates(self) -> bool:
        srt = np.sort(self.caches, axis=1)
        return bool(np.any(srt[:, 1:] == srt[:, :-1]))


@dataclass
class MissStats:
    """Request and miss counts, overall and per file rank."""

    per_file_requests: np.ndarray
    per_file_misses: np.ndarray

    @classmethod
    def empty(cls, n_files: int) -> "MissStats":
        return cls(np.zeros(n_files, dtype=np.int64), np.zeros(n_files, dtype=np.int64))

    @property
    def requests(self) -> int:
        return int(self.per_file_requests.sum())

    @property
    def misses(self) -> int:
        return int(self.per_file_misses.sum())

    @property
    def miss_rate(self) -> float:
        return self.misses / self.requests if self.requests else float("nan")

    def standard_error(self, rate: float | None = None) -> float:
        """Binomial standard error ``sqrt(m (1 - m) / R)``, ``m`` defaulting to the observed rate."""
        m = self.miss_rate if rate is None else rate
        return float(np.sqrt(m * (1.0 - m) / self.requests))

    def __add__(self, other: "MissStats") -> "MissStats":
        return MissStats(
            self.per_file_requests + other.per_file_requests,
            self.per_file_misses + other.per_file_misses,
        )


@dataclass(frozen=True)
class SimConfig:
    params: NetworkParams
    dist: PopularityDistribution
    target_alloc: AllocationVector | None = None
    seed: int = 0
    n_requests: int = 100_000

    def __post_init__(self):
        if self.n_requests < 1:
            raise InvalidParameterError("n_requests must be >= 1")
        if self.dist.n_files != self.params.n_files:
            raise InvalidParameterError("distribution and params disagree on n_files")


@dataclass
class SweepRow:
    scheme: str
    lambda_t: float
    analytic_miss: float
    empirical_miss: float
    requests: int
    seed: int
    stats: MissStats = field(repr=False)
    allocation: np.ndarray = field(repr=False)


def derive_seed(master_seed: int, label: str, index: int = 0) -> int:
    """64-bit seed for the sub-stream ``(label, index)`` of ``master_seed``.

    Streams depend only on their own label, so adding a scheme or grid
    point leaves every other stream unchanged.
    """
    digest = hashlib.sha256(f"{label}/{index}".encode()).digest()
    tag = int.from_bytes(digest[:8], "little")
    seq = np.random.SeedSequence([int(master_seed) & (2**64 - 1), tag])
    return int(seq.generate_state(1, np.uint64)[0])


def fill_caches_top_k(n_users: int, n_files: int, cache_capacity: int) -> CachePopulation:
    row = np.arange(cache_capacity)
    return CachePopulation(np.tile(row, (n_users, 1)), n_files)


def fill_caches_selective(alloc: AllocationVector, params: NetworkParams, rng) -> CachePopulation:
    """Access-point pushing: draw file ``n`` with probability ``q[n] / K``.

    A draw that the user already caches is rejected; each user keeps drawing
    until it holds ``K`` distinct files. Users are filled independently.

    Raises
    ------
    ConfigurationError
        If fewer than ``K`` files have positive push probability.
    """
    q = np.asarray(alloc.q, dtype=float)
    k = params.cache_capacity
    n_users = params.n_users
    if n_users is None:
        raise InvalidParameterError("params.n_users is required to fill caches")
    if q.size != params.n_files:
        raise InvalidParameterError("allocation length differs from n_files")
    if np.count_nonzero(q) < k:
        raise ConfigurationError(f"only {np.count_nonzero(q)} files have q > 0; cannot fill {k} slots")
    cdf = np.cumsum(q)
    cdf /= cdf[-1]
    last = q.size - 1

    caches = np.full((n_users, k), -1, dtype=np.int64)
    filled = np.zeros(n_users, dtype=np.int64)
    active = np.arange(n_users)
    while active.size:
        cand = np.minimum(np.searchsorted(cdf, rng.random(active.size), side="right"), last)
        dup = (caches[active] == cand[:, None]).any(axis=1)
        take = active[~dup]
        caches[take, filled[take]] = cand[~dup]
        filled[take] += 1
        active = active[filled[active] < k]
    return CachePopulation(caches, params.n_files)


def fill_caches_systematic(alloc: AllocationVector, n_users: int, rng) -> CachePopulation:
    """Realize ``alloc`` exactly in expectation and almost exactly in counts.

    Each user takes a systematic sample of ``K`` distinct files: with
    cumulative allocation ``c`` and offset ``u`` in ``[0, 1)``, the file whose
    interval ``[c[n], c[n+1])`` contains ``u + j`` for ``j = 0 .. K-1``. Every
    file is therefore cached with probability exactly ``q[n]``. Offsets are
    stratified across users, so file ``n`` ends up with ``n_users * q[n]``
    holders, plus or minus one.
    """
    q = np.asarray(alloc.q, dtype=float)
    k = int(round(q.sum()))
    if k < 1 or abs(q.sum() - k) > 1e-6:
        raise ConfigurationError(f"allocation must sum to an integer capacity, got {q.sum()!r}")
    edges = np.concatenate(([0.0], np.cumsum(q)))
    edges *= k / edges[-1]
    offsets = (rng.permutation(n_users) + rng.random()) / n_users
    points = offsets[:, None] + np.arange(k)[None, :]
    caches = np.searchsorted(edges, points, side="right") - 1
    caches = np.clip(caches, 0, q.size - 1)
    srt = np.sort(caches, axis=1)
    bad = np.flatnonzero(np.any(srt[:, 1:] == srt[:, :-1], axis=1))
    # Rounding in the cumulative sum can, very rarely, put two points in one unit interval.
    for i in bad:
        for _ in range(100):
            row = np.clip(np.searchsorted(edges, rng.random() + np.arange(k), side="right") - 1, 0, q.size - 1)
            if np.unique(row).size == k:
                caches[i] = row
                break
        else:
            raise ConfigurationError("systematic sampling kept producing duplicate entries")
    return CachePopulation(caches, q.size)


def empirical_allocation(pop: CachePopulation) -> np.ndarray:
    """Fraction of users caching each file."""
    counts = np.bincount(pop.caches.ravel(), minlength=pop.n_files)
    return counts / pop.n_users


def total_variation(a, b) -> float:
    """Total-variation distance between two nonnegative vectors of equal mass."""
    return 0.5 * float(np.abs(np.asarray(a, float) - np.asarray(b, float)).sum())


def _sample_peers(rng, requesters, counts, n_users):
    """Peers met by each requester: ``counts[i]`` distinct users other than ``requesters[i]``.

    Returns an ``(m, max(counts))`` array and a validity mask.
    """
    width = int(counts.max())
    peers = rng.integers(0, n_users - 1, size=(requesters.size, width))
    peers += peers >= requesters[:, None]
    valid = np.arange(width)[None, :] < counts[:, None]
    if width > 1:
        # Padding gets distinct negative values so it never looks like a repeat.
        keyed = np.where(valid, peers, -1 - np.arange(width)[None, :])
        srt = np.sort(keyed, axis=1)
        repeat = np.flatnonzero(np.any(srt[:, 1:] == srt[:, :-1], axis=1))
        for i in repeat:
            c = counts[i]
            row = rng.choice(n_users - 1, size=c, replace=False)
            row += row >= requesters[i]
            peers[i, :c] = row
    return peers, valid


def simulate_misses(cfg: SimConfig, pop: CachePopulation, rng) -> MissStats:
    """Serve ``cfg.n_requests`` independent requests against a filled population.

    A request picks a user uniformly and a file from the popularity
    distribution. It hits if the user already caches the file, else if at
    least one access point is met within ``T``, else if any of the
    Poisson(lambda * T) peers met caches the file.
    """
    params, dist = cfg.params, cfg.dist
    n_users = pop.n_users
    if pop.n_files != dist.n_files:
        raise InvalidParameterError("population and distribution disagree on n_files")
    if n_users < 2:
        raise InvalidParameterError("simulation needs at least two users")
    holds = pop.holds
    ap_mean = params.lambda_ap * params.patience
    peer_mean = params.lambda_t
    stats = MissStats.empty(dist.n_files)

    remaining = cfg.n_requests
    while remaining:
        m = min(remaining, _CHUNK)
        remaining -= m
        users = rng.integers(0, n_users, size=m)
        ranks = sample_rank(dist, rng, m)
        hit = holds[users, ranks]
        if ap_mean > 0:
            hit |= rng.poisson(ap_mean, size=m) > 0
        if peer_mean > 0 and n_users > 1:
            met = np.minimum(rng.poisson(peer_mean, size=m), n_users - 1)
            pending = np.flatnonzero(~hit & (met > 0))
            if pending.size:
                peers, valid = _sample_peers(rng, users[pending], met[pending], n_users)
                found = (holds[peers, ranks[pending, None]] & valid).any(axis=1)
                hit[pending] = found
        stats.per_file_requests += np.bincount(ranks, minlength=dist.n_files)
        stats.per_file_misses += np.bincount(ranks[~hit], minlength=dist.n_files)
    return stats


def scheme_population(scheme: str, dist: PopularityDistribution, params: NetworkParams, rng):
    """Caches and nominal allocation for one of :data:`SCHEMES`.

    ``random`` and ``optimal`` are realized by balanced systematic sampling
    of their allocation; ``pushing_algorithm`` runs the access-point pushing
    process toward the optimal allocation.
    """
    n_users = params.n_users
    if n_users is None or n_users < 2:
        raise InvalidParameterError("simulation needs params.n_users >= 2")
    if scheme == "random":
        alloc = random_allocation(params)
        return fill_caches_systematic(alloc, n_users, rng), alloc
    if scheme == "k_most_popular":
        alloc = k_most_popular_allocation(dist, params.cache_capacity)
        return fill_caches_top_k(n_users, dist.n_files, params.cache_capacity), alloc
    if scheme in ("optimal", "pushing_algorithm"):
        alloc, _ = optimal_allocation(dist, params)
        if scheme == "optimal":
            return fill_caches_systematic(alloc, n_users, rng), alloc
        return fill_caches_selective(alloc, params, rng), alloc
    raise InvalidParameterError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def sweep_lambda_t(schemes, grid, base: SimConfig) -> list[SweepRow]:
    """Analytic and simulated miss rate of each scheme at each ``lambda * T``.

    ``lambda_user`` is rescaled per grid point with ``T`` held fixed. The
    analytic value of ``pushing_algorithm`` is the miss-rate formula
    evaluated at the allocation the pushing process actually produced.
    Rows come out scheme-major, in grid order.
    """
    grid = [float(g) for g in grid]
    if not grid:
        raise InvalidParameterError("lambda_t grid must be nonempty")
    for scheme in schemes:
        if scheme not in SCHEMES:
            raise InvalidParameterError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    rows = []
    for scheme in schemes:
        for idx, lambda_t in enumerate(grid):
            params = base.params.with_lambda_t(lambda_t)
            seed = derive_seed(base.seed, scheme, idx)
            rng = np.random.default_rng(seed)
            pop, alloc = scheme_population(scheme, base.dist, params, rng)
            realized = empirical_allocation(pop)
            if scheme == "random":
                analytic = analytic_miss_rate_random(params)
            elif scheme == "pushing_algorithm":
                analytic = analytic_miss_rate_selective(base.dist, AllocationVector(realized), params)
            else:
                analytic = analytic_miss_rate_selective(base.dist, alloc, params)
            cfg = SimConfig(params, base.dist, alloc, seed, base.n_requests)
            stats = simulate_misses(cfg, pop, rng)
            log.info("%s lambda_t=%g analytic=%.6f empirical=%.6f", scheme, lambda_t, analytic, stats.miss_rate)
            rows.append(SweepRow(scheme, lambda_t, analytic, stats.miss_rate, stats.requests, seed, stats, realized))
    return rows


def write_sweep_csv(target, rows) -> None:
    write_csv(
        target,
        ["scheme", "lambda_t", "analytic_miss", "empirical_miss", "requests", "seed"],
        ((r.scheme, r.lambda_t, r.analytic_miss, r.empirical_miss, r.requests, r.seed) for r in rows),
    )


def write_fig1_csv(target, q_optimal, q_empirical) -> None:
    write_csv(
        target,
        ["rank", "q_optimal", "q_empirical"],
        ((r + 1, a, b) for r, (a, b) in enumerate(zip(q_optimal, q_empirical))),
    )
