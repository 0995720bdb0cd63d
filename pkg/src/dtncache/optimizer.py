"""Optimal cooperative cache allocation and analytic miss rates.

A user holds ``K`` of ``N`` files. ``q[n]`` is the probability that an
arbitrary user caches file ``n`` (equivalently the expected number of copies
per cache), so ``sum(q) == K`` and ``0 <= q <= 1``. A request for file ``n``
misses when the requester does not hold it and meets neither an access point
nor a holder of ``n`` within the patience time ``T``::

    miss_n = (1 - q[n]) * exp(-T * (lambda_ap + lambda_user * q[n]))

The optimal allocation minimizes ``sum(p * (1 - q) * exp(-lambda_t * q))``.
Its KKT conditions give a closed form in the Lambert W function for every
fractional entry, parameterized by the equality multiplier ``eta``; ``eta``
is found by bisection on ``sum(q(eta)) == K``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .csvio import write_csv
from .errors import InvalidParameterError, NumericalFailureError
from .popularity import PopularityDistribution

__all__ = [
    "NetworkParams",
    "AllocationVector",
    "KKTCertificate",
    "lambert_w0",
    "q_of_eta",
    "objective",
    "optimal_allocation",
    "kkt_residuals",
    "file_miss_rates",
    "analytic_miss_rate_random",
    "analytic_miss_rate_selective",
    "k_most_popular_allocation",
    "random_allocation",
    "write_allocation_csv",
]

# Below this value of lambda*T the objective is treated as linear.
DEGENERATE_LAMBDA_T = 1e-12
DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 200
_MAX_WIDEN = 8
_LN2 = math.log(2.0)


@dataclass(frozen=True)
class NetworkParams:
    """Global constants of the contact model.

    ``lambda_user`` is a user's aggregate encounter rate with other users,
    ``lambda_ap`` its encounter rate with access points, and ``patience`` the
    time ``T`` a request waits before falling back to the cellular path.
    ``n_users`` is only consulted by the simulator.
    """

    n_files: int
    cache_capacity: int
    lambda_user: float = 1.0
    lambda_ap: float = 0.0
    patience: float = 1.0
    n_users: int | None = None

    def __post_init__(self):
        for name in ("lambda_user", "lambda_ap", "patience"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise InvalidParameterError(f"{name} must be finite and >= 0, got {value!r}")
        if int(self.n_files) != self.n_files or self.n_files < 1:
            raise InvalidParameterError(f"n_files must be a positive integer, got {self.n_files!r}")
        if int(self.cache_capacity) != self.cache_capacity or not 1 <= self.cache_capacity <= self.n_files:
            raise InvalidParameterError(
                f"cache_capacity must be an integer in [1, n_files={self.n_files}], got {self.cache_capacity!r}"
            )
        if self.n_users is not None and (int(self.n_users) != self.n_users or self.n_users < 1):
            raise InvalidParameterError(f"n_users must be a positive integer, got {self.n_users!r}")

    @property
    def lambda_t(self) -> float:
        """Mean number of user encounters within the patience time."""
        return self.lambda_user * self.patience

    def with_lambda_t(self, lambda_t: float) -> "NetworkParams":
        """Same network with ``lambda_user`` rescaled so that ``lambda_user * T == lambda_t``.

        A zero patience time is replaced by one time unit.
        """
        if not np.isfinite(lambda_t) or lambda_t < 0:
            raise InvalidParameterError(f"lambda_t must be finite and >= 0, got {lambda_t!r}")
        patience = self.patience if self.patience > 0 else 1.0
        return replace(self, lambda_user=lambda_t / patience, patience=patience)


@dataclass(frozen=True, eq=False)
class AllocationVector:
    """Per-file cache probabilities ``q``; entries lie in ``[0, 1]``."""

    q: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        if q.ndim != 1 or q.size == 0:
            raise InvalidParameterError("q must be a nonempty 1-d vector")
        if not np.all(np.isfinite(q)) or np.any(q < 0) or np.any(q > 1):
            raise InvalidParameterError("every q entry must lie in [0, 1]")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    def __len__(self):
        return self.q.size

    @property
    def total(self) -> float:
        return float(self.q.sum())


@dataclass(frozen=True, eq=False)
class KKTCertificate:
    """Multipliers certifying optimality of an allocation.

    ``mu_upper[n]`` belongs to ``q[n] <= 1`` and ``mu_lower[n]`` to
    ``q[n] >= 0``. ``n1`` and ``n2`` are the 1-based first and last ranks of
    the fractional block: ranks ``1 .. n1-1`` are cached with certainty and
    ranks ``n2+1 .. N`` never. An empty fractional block has ``n1 == n2 + 1``.
    """

    eta: float
    mu_upper: np.ndarray
    mu_lower: np.ndarray
    n1: int
    n2: int
    iterations: int = 0


def lambert_w0(x):
    """Principal branch of the Lambert W function on ``[0, inf)``.

    Solves ``w * exp(w) == x`` by Halley iteration. The starting point is
    ``log(1 + x)`` (``log(x) - log(log(x))`` once ``x > e``); arguments below
    ``1e-4`` use the Taylor series directly.

    Parameters
    ----------
    x : float or array_like
        Nonnegative arguments.

    Returns
    -------
    float or ndarray
        ``W(x)``, with the shape of ``x``.

    Raises
    ------
    InvalidParameterError
        If any argument is negative (the lower branch is not supported).
    """
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0):
        raise InvalidParameterError("lambert_w0 is only defined here for x >= 0")
    flat = x_arr.ravel()
    w = np.empty_like(flat)

    small = flat < 1e-4
    xs = flat[small]
    w[small] = xs * (1 + xs * (-1 + xs * (1.5 + xs * (-8 / 3 + xs * (125 / 24)))))

    inf = np.isinf(flat)
    w[inf] = np.inf
    nan = np.isnan(flat)
    w[nan] = np.nan

    todo = ~(small | inf | nan)
    xt = flat[todo]
    big = xt > math.e
    wt = np.log1p(xt)
    lx = np.log(xt[big])
    wt[big] = lx - np.log(lx)

    active = np.ones(xt.size, dtype=bool)
    for _ in range(50):
        if not active.any():
            break
        wa = wt[active]
        xa = xt[active]
        # Halley on w*e^w - x, scaled by e^-w so large x cannot overflow.
        f = wa - xa * np.exp(-wa)
        wp1 = wa + 1.0
        step = f / (wp1 - (wa + 2.0) * f / (2.0 * wp1))
        wt[active] = wa - step
        done = np.abs(step) <= 1e-12 * np.abs(wa - step)
        active_idx = np.flatnonzero(active)
        active[active_idx[done]] = False
    else:
        if active.any():
            raise NumericalFailureError("lambert_w0 did not converge", arguments=xt[active])
    w[todo] = wt
    w = w.reshape(x_arr.shape)
    return float(w) if w.ndim == 0 else w


def _w_offset(s: np.ndarray) -> np.ndarray:
    """``W(exp(1 + s)) - 1`` for ``s > 0``, without cancellation near ``s = 0``.

    Newton on ``d + log1p(d) - s`` (concave, increasing) from ``s / 2``, which
    lies left of the root, so the iterates increase monotonically.
    """
    d = 0.5 * s
    for _ in range(100):
        h = d + np.log1p(d) - s
        step = -h / (1.0 + 1.0 / (1.0 + d))
        d = d + step
        if np.all(step <= 4e-16 * d):
            return d
    raise NumericalFailureError("Lambert W offset iteration did not converge")


def q_of_eta(eta: float, p, lambda_t: float):
    """Cache probability of a file with popularity ``p`` at multiplier ``eta``.

    Evaluates ``1 + 1/lambda_t - W(eta * exp(1 + lambda_t) / p) / lambda_t``
    clamped to ``[0, 1]``. The Lambert W term is computed in log space, as an
    offset from 1, so that neither large ``lambda_t`` nor small ``lambda_t``
    loses precision.
    """
    if not eta > 0 or not lambda_t > 0:
        raise InvalidParameterError("q_of_eta needs eta > 0 and lambda_t > 0")
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr <= 0):
        raise InvalidParameterError("popularity must be > 0")
    q = _q_of_log_eta(math.log(eta), np.log(np.atleast_1d(p_arr).ravel()), lambda_t).reshape(p_arr.shape)
    return float(q) if q.ndim == 0 else q


def _q_of_log_eta(log_eta, log_p, lambda_t):
    # With W = 1 + d: q = (lambda_t - d) / lambda_t, and d solves d + log1p(d) = s.
    s = log_eta - log_p + lambda_t
    s_zero = lambda_t + math.log1p(lambda_t)
    q = np.ones_like(s)
    q[s >= s_zero] = 0.0
    mid = (s > 0) & (s < s_zero)
    if mid.any():
        d = _w_offset(s[mid])
        q[mid] = np.clip((lambda_t - d) / lambda_t, 0.0, 1.0)
    return q


def objective(dist: PopularityDistribution, q, lambda_t: float) -> float:
    """Peer-only miss rate ``sum(p * (1 - q) * exp(-lambda_t * q))``."""
    q = np.asarray(getattr(q, "q", q), dtype=float)
    return float(np.sum(dist.probs * (1.0 - q) * np.exp(-lambda_t * q)))


def _gradient_magnitude(p, q, lambda_t):
    # Negated partial derivative of the objective.
    return p * np.exp(-lambda_t * q) * (1.0 + lambda_t - lambda_t * q)


def _certificate(p, q, eta, lambda_t, iterations=0) -> KKTCertificate:
    saturated = q >= 1.0
    empty = q <= 0.0
    mu_upper = np.where(saturated, np.maximum(p * math.exp(-lambda_t) - eta, 0.0), 0.0)
    mu_lower = np.where(empty, np.maximum(eta - p * (1.0 + lambda_t), 0.0), 0.0)
    return KKTCertificate(
        eta=float(eta),
        mu_upper=mu_upper,
        mu_lower=mu_lower,
        n1=int(saturated.sum()) + 1,
        n2=int((~empty).sum()),
        iterations=iterations,
    )


def k_most_popular_allocation(dist: PopularityDistribution, cache_capacity: int) -> AllocationVector:
    """Every user caches the ``cache_capacity`` most popular files."""
    if not 1 <= cache_capacity <= dist.n_files:
        raise InvalidParameterError(f"cache_capacity must be in [1, {dist.n_files}]")
    q = np.zeros(dist.n_files)
    q[: int(cache_capacity)] = 1.0
    return AllocationVector(q)


def random_allocation(params: NetworkParams) -> AllocationVector:
    """Files pushed uniformly at random: ``q = K / N`` everywhere."""
    return AllocationVector(np.full(params.n_files, params.cache_capacity / params.n_files))


def optimal_allocation(
    dist: PopularityDistribution,
    params: NetworkParams,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> tuple[AllocationVector, KKTCertificate]:
    """Minimize the expected miss rate over feasible allocations.

    Bisects ``eta`` over ``[p_K exp(-lambda_t), p_K (1 + lambda_t)]`` until
    ``|sum(q) - K| <= tol``. The bracket is widened (at most 8 doublings per
    side) if it fails to contain the root. Access points only scale the miss
    rate and are ignored here.

    Returns
    -------
    (AllocationVector, KKTCertificate)

    Raises
    ------
    NumericalFailureError
        If no bracket is found or the bisection does not reach ``tol`` within
        ``max_iter`` steps; ``detail["bracket"]`` holds the final bracket.
    """
    if dist.n_files != params.n_files:
        raise InvalidParameterError(f"distribution has {dist.n_files} files, params say {params.n_files}")
    if not tol > 0:
        raise InvalidParameterError("tol must be > 0")
    p = dist.probs
    n, k = dist.n_files, int(params.cache_capacity)
    lambda_t = params.lambda_t

    if lambda_t < DEGENERATE_LAMBDA_T:
        # Linear objective: the top-K indicator is the LP optimum.
        alloc = k_most_popular_allocation(dist, k)
        eta = p[k - 1]
        grad = _gradient_magnitude(p, alloc.q, lambda_t)
        mu_upper = np.where(alloc.q >= 1.0, np.maximum(grad - eta, 0.0), 0.0)
        mu_lower = np.where(alloc.q <= 0.0, np.maximum(eta - grad, 0.0), 0.0)
        return alloc, KKTCertificate(float(eta), mu_upper, mu_lower, k + 1, k)

    if k == n:
        q = np.ones(n)
        return AllocationVector(q), _certificate(p, q, p[-1] * math.exp(-lambda_t), lambda_t)

    # Bisection runs on log(eta): the lower end p_K exp(-lambda_t) underflows for large lambda_t.
    log_p = np.log(p)

    def total(log_eta):
        q = _q_of_log_eta(log_eta, log_p, lambda_t)
        return q, float(q.sum())

    def finish(q, log_eta, it=0):
        return AllocationVector(q), _certificate(p, q, math.exp(log_eta), lambda_t, it)

    lo = log_p[k - 1] - lambda_t
    hi = log_p[k - 1] + math.log1p(lambda_t)
    q_lo, s_lo = total(lo)
    for _ in range(_MAX_WIDEN):
        if s_lo >= k - tol:
            break
        lo -= _LN2
        q_lo, s_lo = total(lo)
    q_hi, s_hi = total(hi)
    for _ in range(_MAX_WIDEN):
        if s_hi <= k + tol:
            break
        hi += _LN2
        q_hi, s_hi = total(hi)
    if s_lo < k - tol or s_hi > k + tol:
        raise NumericalFailureError(
            "could not bracket the multiplier", bracket=(math.exp(lo), math.exp(hi)), sums=(s_lo, s_hi)
        )
    if abs(s_lo - k) <= tol:
        return finish(q_lo, lo)
    if abs(s_hi - k) <= tol:
        return finish(q_hi, hi)

    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        q, s = total(mid)
        if abs(s - k) <= tol:
            return finish(q, mid, it)
        if s > k:
            lo = mid
        else:
            hi = mid
    raise NumericalFailureError(
        f"bisection on eta did not reach |sum(q) - K| <= {tol}", bracket=(math.exp(lo), math.exp(hi))
    )


def kkt_residuals(
    dist: PopularityDistribution,
    alloc: AllocationVector,
    cert: KKTCertificate,
    params: NetworkParams,
) -> dict:
    """Worst-case violations of each KKT condition (all should be ~0)."""
    p, q = dist.probs, alloc.q
    lambda_t = params.lambda_t
    grad = _gradient_magnitude(p, q, lambda_t)
    return {
        "stationarity": float(np.max(np.abs(cert.mu_upper - cert.mu_lower + cert.eta - grad))),
        "primal_sum": abs(float(q.sum()) - params.cache_capacity),
        "primal_bounds": float(max(0.0, -q.min(), q.max() - 1.0)),
        "dual": float(max(0.0, -cert.mu_upper.min(), -cert.mu_lower.min(), -cert.eta)),
        "complementary": float(
            max(np.max(np.abs(cert.mu_upper * (q - 1.0))), np.max(np.abs(cert.mu_lower * q)))
        ),
    }


def file_miss_rates(alloc, params: NetworkParams) -> np.ndarray:
    """Per-file miss probability ``(1 - q) exp(-T (lambda_ap + lambda_user q))``."""
    q = np.asarray(getattr(alloc, "q", alloc), dtype=float)
    return (1.0 - q) * np.exp(-params.patience * (params.lambda_ap + params.lambda_user * q))


def analytic_miss_rate_random(params: NetworkParams) -> float:
    """Expected miss rate when every user caches ``K`` uniformly random files."""
    ratio = params.cache_capacity / params.n_files
    return (1.0 - ratio) * math.exp(-params.patience * (params.lambda_ap + params.lambda_user * ratio))


def analytic_miss_rate_selective(
    dist: PopularityDistribution, alloc: AllocationVector, params: NetworkParams
) -> float:
    """Expected miss rate of allocation ``alloc``, access points included."""
    if len(alloc) != dist.n_files:
        raise InvalidParameterError(f"allocation has {len(alloc)} entries, distribution {dist.n_files}")
    q = alloc.q
    peer = np.sum(dist.probs * (1.0 - q) * np.exp(-params.lambda_t * q))
    return float(math.exp(-params.lambda_ap * params.patience) * peer)


def write_allocation_csv(target, dist: PopularityDistribution, allocations: dict) -> None:
    """Write ``rank,p,q,scheme`` rows (1-based rank) for each named allocation."""
    rows = []
    for scheme, alloc in allocations.items():
        q = getattr(alloc, "q", alloc)
        rows.extend((r + 1, dist.probs[r], q[r], scheme) for r in range(dist.n_files))
    write_csv(target, ["rank", "p", "q", "scheme"], rows)
