"""Contact-duration-limited delivery.

A file needs ``t0`` time units of contact to transfer, possibly spread over
several encounters. Contact durations are shifted-Pareto (Lomax)::

    P[D <= t] = 1 - (1 + t) ** -alpha,   t >= 0

and a requester meets holders of file ``n`` a Poisson(lambda * T * q[n])
number of times, so the accumulated contact time is compound Poisson with
characteristic function ``exp(rate * (phi_D(u) - 1))``. A request misses
when that total falls short of ``t0``; own-cache hits and access points do
not enter this model.

Two evaluators are provided: Monte Carlo with common random numbers, and
Gil-Pelaez inversion of the characteristic function.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special, stats

from .csvio import write_csv
from .errors import InvalidParameterError, NumericalFailureError
from .optimizer import AllocationVector, NetworkParams
from .popularity import PopularityDistribution

__all__ = [
    "METHODS",
    "DurationParams",
    "DurationMissRate",
    "pareto_cdf",
    "pareto_from_uniform",
    "sample_pareto",
    "sample_total_contact_time",
    "pareto_cf",
    "cf_total_contact_time",
    "prob_short_contact_cf",
    "prob_short_contact_mc",
    "duration_aware_miss_rate",
    "write_duration_csv",
]

METHODS = ("monte_carlo", "cf_inversion")

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_MAX_FREQ = 2.0**22
_MC_CHUNK = 1 << 16


@dataclass(frozen=True)
class DurationParams:
    pareto_alpha: float
    t0: float
    base: NetworkParams
    alloc: AllocationVector

    def __post_init__(self):
        if not self.pareto_alpha > 0 or not np.isfinite(self.pareto_alpha):
            raise InvalidParameterError(f"pareto_alpha must be > 0, got {self.pareto_alpha!r}")
        if not self.t0 >= 0 or not np.isfinite(self.t0):
            raise InvalidParameterError(f"t0 must be >= 0, got {self.t0!r}")
        if len(self.alloc) != self.base.n_files:
            raise InvalidParameterError("allocation length differs from n_files")

    @property
    def rates(self) -> np.ndarray:
        """Mean number of encounters with holders of each file."""
        return self.base.lambda_t * self.alloc.q


@dataclass
class DurationMissRate:
    """Duration-aware miss rate with its per-file breakdown.

    ``stderr`` is the Monte Carlo standard error (zero for CF inversion,
    whose error is bounded by the requested tolerance instead).
    """

    value: float
    stderr: float
    per_file: np.ndarray
    method: str

    def __float__(self):
        return self.value


def pareto_cdf(t, alpha):
    """``1 - (1 + t) ** -alpha`` for ``t >= 0``."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise InvalidParameterError("pareto_cdf is defined for t >= 0")
    if not alpha > 0:
        raise InvalidParameterError("alpha must be > 0")
    out = -np.expm1(-alpha * np.log1p(t_arr))
    return float(out) if out.ndim == 0 else out


def pareto_from_uniform(u, alpha):
    """Inverse CDF: ``(1 - u) ** (-1 / alpha) - 1``."""
    u = np.asarray(u, dtype=float)
    out = np.expm1(-np.log1p(-u) / alpha)
    return float(out) if out.ndim == 0 else out


def sample_pareto(alpha: float, rng, size=None):
    if not alpha > 0:
        raise InvalidParameterError("alpha must be > 0")
    return pareto_from_uniform(rng.random(size), alpha)


def sample_total_contact_time(rate: float, alpha: float, rng, size=None):
    """Sum of a Poisson(``rate``) number of Pareto durations (zero if none)."""
    if not rate >= 0:
        raise InvalidParameterError("rate must be >= 0")
    m = 1 if size is None else int(np.prod(size))
    counts = rng.poisson(rate, m)
    durations = sample_pareto(alpha, rng, int(counts.sum()))
    owner = np.repeat(np.arange(m), counts)
    totals = np.bincount(owner, weights=durations, minlength=m)
    return float(totals[0]) if size is None else totals.reshape(size)


def _pareto_density(alpha):
    return lambda t: alpha * (1.0 + t) ** (-alpha - 1.0)


def _fourier(f, lo, hi, u, kind):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            if math.isinf(hi):
                return integrate.quad(f, lo, hi, weight=kind, wvar=u, limlst=200)[0]
            return integrate.quad(f, lo, hi, weight=kind, wvar=u, limit=200)[0]
        except integrate.IntegrationWarning as exc:
            raise NumericalFailureError(f"Pareto CF quadrature failed at u={u}: {exc}", u=u) from None


@functools.lru_cache(maxsize=1 << 16)
def _pareto_cf_scalar(u: float, alpha: float) -> complex:
    if u == 0.0:
        return 1.0 + 0.0j
    f = _pareto_density(alpha)
    sign, u = (1.0, u) if u > 0 else (-1.0, -u)
    re = im = 0.0
    start = 0.0
    if u < 1e-2:
        # The Fourier-integral routine needs its first cycle to be short;
        # integrate decade by decade out to ten periods first.
        edge = 1.0
        while start < 20.0 * math.pi / u:
            re += _fourier(f, start, edge, u, "cos")
            im += _fourier(f, start, edge, u, "sin")
            start, edge = edge, edge * 10.0
    re += _fourier(f, start, math.inf, u, "cos")
    im += _fourier(f, start, math.inf, u, "sin")
    return complex(re, sign * im)


def pareto_cf(u, alpha: float):
    """Characteristic function ``E[exp(i u D)]`` of one contact duration, by quadrature."""
    if not alpha > 0:
        raise InvalidParameterError("alpha must be > 0")
    u_arr = np.asarray(u, dtype=float)
    out = np.array([_pareto_cf_scalar(float(v), float(alpha)) for v in u_arr.ravel()], dtype=complex)
    out = out.reshape(u_arr.shape)
    return complex(out) if out.ndim == 0 else out


def cf_total_contact_time(u, rate: float, alpha: float):
    """``exp(rate * (phi_D(u) - 1))``."""
    if not rate >= 0:
        raise InvalidParameterError("rate must be >= 0")
    u_arr = np.asarray(u, dtype=float)
    if rate == 0:
        out = np.ones(u_arr.shape, dtype=complex)
    else:
        out = np.exp(rate * (np.asarray(pareto_cf(u_arr, alpha)) - 1.0))
    return complex(out) if out.ndim == 0 else out


@functools.lru_cache(maxsize=64)
def _cf_grid(alpha: float, u_min: float, width: float, n_uniform: int):
    """Gauss-Legendre nodes/weights with the Pareto CF at each node.

    Panels grow geometrically (ratio 4) from ``u_min`` up to ``width``, then
    ``n_uniform`` panels of that width follow, ending at ``n_uniform * width``.
    """
    edges = [u_min]
    while edges[-1] * 4.0 < width:
        edges.append(edges[-1] * 4.0)
    edges = np.concatenate((edges, width * np.arange(1, n_uniform + 1)))
    a, b = edges[:-1], edges[1:]
    half = 0.5 * (b - a)
    nodes = (0.5 * (a + b))[:, None] + half[:, None] * _GL_NODES[None, :]
    weights = half[:, None] * _GL_WEIGHTS[None, :]
    phi = pareto_cf(nodes.ravel(), alpha)
    return nodes.ravel(), weights.ravel(), phi


def prob_short_contact_cf(t0: float, rates, alpha: float, tol: float = 1e-4) -> np.ndarray:
    """``P[total < t0]`` for each rate, by Gil-Pelaez inversion.

    The atom ``exp(-rate)`` at zero is split off and the continuous part
    inverted. The integrand's ``1/u**2`` tail is integrated analytically to
    first order; the truncation point doubles until a bound on the remainder
    is below ``tol / 2``.
    """
    rates = np.asarray(rates, dtype=float)
    if np.any(rates < 0):
        raise InvalidParameterError("rates must be >= 0")
    if not t0 >= 0:
        raise InvalidParameterError("t0 must be >= 0")
    if t0 == 0:
        return np.zeros(rates.shape)
    out = np.ones(rates.shape)
    pos = rates > 0
    if not pos.any():
        return out
    r = rates[pos]
    atom = np.exp(-r)
    lead = atom * r * alpha  # psi(u) ~ i * lead / u as u -> inf

    u_min = min(1e-10, (1e-2 * tol) ** (1.0 / alpha))
    width = min(2.0, 2.0 * math.pi / t0)
    n_uniform = max(16, int(math.ceil(64.0 / width)))
    while True:
        u_max = n_uniform * width
        nodes, weights, phi = _cf_grid(float(alpha), u_min, width, n_uniform)
        psi = atom[:, None] * np.expm1(r[:, None] * phi[None, :])
        h = np.imag(np.exp(-1j * nodes * t0)[None, :] * psi) / nodes[None, :]
        body = h @ weights
        tail_nodes = nodes >= u_max - width
        uu = nodes[tail_nodes]
        remainder = psi[:, tail_nodes] - 1j * lead[:, None] / uu[None, :]
        bound = np.max(np.abs(remainder) * uu[None, :] ** 2, axis=1) / (2.0 * u_max**2) / math.pi
        if np.all(bound <= 0.5 * tol):
            break
        n_uniform *= 2
        if n_uniform * width > _MAX_FREQ:
            raise NumericalFailureError(
                "CF inversion truncation did not reach tolerance", bound=float(bound.max()), u_max=u_max
            )
    si, _ = special.sici(u_max * t0)
    tail = lead * (math.cos(u_max * t0) / u_max - t0 * (0.5 * math.pi - si))
    integral = body + tail
    cdf = atom + 0.5 * (1.0 - atom) - integral / math.pi
    out[pos] = np.clip(cdf, 0.0, 1.0)
    return out


def _poisson_table(rate):
    # Mass beyond this many events is far below double precision.
    kmax = int(math.ceil(rate + 10.0 * math.sqrt(rate) + 40.0))
    cdf = stats.poisson.cdf(np.arange(kmax), rate)
    cdf[-1] = 1.0
    return cdf


def _totals_crn(rate, alpha, m, count_rng, duration_rng):
    """``m`` compound-Poisson totals coupled across ``rate``.

    Counts come from inverse-CDF draws and durations are laid out column by
    column, so for a fixed pair of streams the totals are nondecreasing in
    ``rate``.
    """
    u = count_rng.random(m)
    counts = np.searchsorted(_poisson_table(rate), u, side="right")
    totals = np.zeros(m)
    for j in range(int(counts.max()) if m else 0):
        col = pareto_from_uniform(duration_rng.random(m), alpha)
        totals += np.where(counts > j, col, 0.0)
    return totals


def prob_short_contact_mc(t0: float, rates, alpha: float, n_samples, seed: int = 0):
    """Monte Carlo ``P[total < t0]`` per rate, with standard errors.

    ``n_samples`` is one count for all rates or a per-rate sequence. File
    ``i`` always draws from the streams ``(seed, i, chunk)``, so calls that
    differ only in ``t0`` or in the rates use common random numbers.
    """
    rates = np.asarray(rates, dtype=float)
    counts = np.broadcast_to(np.asarray(n_samples, dtype=np.int64), rates.shape)
    prob = np.ones(rates.shape)
    se = np.zeros(rates.shape)
    if t0 == 0:
        return np.zeros(rates.shape), se
    for i, (rate, m) in enumerate(zip(rates, counts)):
        if rate == 0:
            continue
        if m < 1:
            raise InvalidParameterError("each positive rate needs at least one sample")
        short = 0
        for c, start in enumerate(range(0, int(m), _MC_CHUNK)):
            size = min(_MC_CHUNK, int(m) - start)
            count_ss, dur_ss = np.random.SeedSequence(int(seed), spawn_key=(i, c)).spawn(2)
            totals = _totals_crn(rate, alpha, size, np.random.default_rng(count_ss), np.random.default_rng(dur_ss))
            short += int(np.count_nonzero(totals < t0))
        prob[i] = short / m
        se[i] = math.sqrt(prob[i] * (1.0 - prob[i]) / m)
    return prob, se


def duration_aware_miss_rate(
    dp: DurationParams,
    dist: PopularityDistribution,
    method: str = "cf_inversion",
    *,
    n_samples: int = 1_000_000,
    min_samples: int = 1000,
    seed: int = 0,
    tol: float = 1e-4,
) -> DurationMissRate:
    """``sum(p[n] * P[total_n < t0])`` over all files.

    Parameters
    ----------
    method : {"monte_carlo", "cf_inversion"}
    n_samples : int
        Monte Carlo samples for the most popular file; file ``n`` gets
        ``n_samples * p[n] / p[0]`` (at least ``min_samples``), which keeps
        the weighted error contributions balanced.
    seed : int
        Monte Carlo master seed.
    tol : float
        Absolute tolerance of each CF-inversion probability.
    """
    if len(dp.alloc) != dist.n_files:
        raise InvalidParameterError("allocation and distribution lengths differ")
    rates = dp.rates
    if method == "monte_carlo":
        per_file_samples = np.maximum(np.ceil(n_samples * dist.probs / dist.probs[0]), min_samples)
        probs, se = prob_short_contact_mc(dp.t0, rates, dp.pareto_alpha, per_file_samples.astype(np.int64), seed)
        stderr = float(np.sqrt(np.sum((dist.probs * se) ** 2)))
    elif method == "cf_inversion":
        probs = prob_short_contact_cf(dp.t0, rates, dp.pareto_alpha, tol)
        stderr = 0.0
    else:
        raise InvalidParameterError(f"unknown method {method!r}; expected one of {METHODS}")
    value = float(np.sum(dist.probs * probs))
    return DurationMissRate(value, stderr, probs, method)


def write_duration_csv(target, dist: PopularityDistribution, dp: DurationParams, result: DurationMissRate) -> None:
    rates = dp.rates
    write_csv(
        target,
        ["rank", "p", "q", "rate", "prob_miss", "method", "t0", "alpha"],
        (
            (r + 1, dist.probs[r], dp.alloc.q[r], rates[r], result.per_file[r], result.method, dp.t0, dp.pareto_alpha)
            for r in range(dist.n_files)
        ),
    )
