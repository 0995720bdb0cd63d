"""Ranked file-popularity distributions.

Files are identified by their popularity rank. Internally ranks are 0-based
(rank 0 is the most requested file); anything written for humans (CSV,
summaries) uses 1-based ranks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError

__all__ = ["PopularityDistribution", "zipf_pmf", "from_raw", "sample_rank", "from_config"]

_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PopularityDistribution:
    """Request probabilities sorted from most to least popular.

    Parameters
    ----------
    probs : array_like
        Strictly positive, nonincreasing, summing to one.
    alpha : float, optional
        Zipf exponent when the distribution was built by :func:`zipf_pmf`.
    permutation : array_like of int, optional
        ``permutation[r]`` is the original index of the file now at rank
        ``r``. Identity unless built by :func:`from_raw`.
    """

    probs: np.ndarray
    alpha: float | None = None
    permutation: np.ndarray | None = None
    cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 1 or probs.size == 0:
            raise InvalidParameterError("probs must be a nonempty 1-d vector")
        if not np.all(np.isfinite(probs)) or np.any(probs <= 0):
            raise InvalidParameterError("all probabilities must be finite and > 0")
        if abs(probs.sum() - 1.0) > _SUM_TOL:
            raise InvalidParameterError(f"probabilities sum to {probs.sum()!r}, not 1")
        if np.any(np.diff(probs) > 0):
            raise InvalidParameterError("probabilities must be sorted nonincreasing")
        perm = np.arange(probs.size) if self.permutation is None else np.array(self.permutation, dtype=np.int64)
        if perm.shape != probs.shape or not np.array_equal(np.sort(perm), np.arange(probs.size)):
            raise InvalidParameterError("permutation must be a permutation of range(N)")
        cdf = np.cumsum(probs)
        cdf[-1] = 1.0
        probs.setflags(write=False)
        perm.setflags(write=False)
        cdf.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "permutation", perm)
        object.__setattr__(self, "cdf", cdf)

    @property
    def n_files(self) -> int:
        return self.probs.size

    def __len__(self):
        return self.probs.size

    def to_config(self) -> dict:
        if self.alpha is not None and np.array_equal(self.permutation, np.arange(self.n_files)):
            return {"type": "zipf", "n": self.n_files, "alpha": self.alpha}
        # Original order, so that from_raw reproduces the permutation.
        raw = np.empty_like(self.probs)
        raw[self.permutation] = self.probs
        return {"type": "raw", "probs": raw.tolist()}


def zipf_pmf(n_files: int, alpha: float) -> PopularityDistribution:
    """Zipf-like popularity: ``p[r]`` proportional to ``(r + 1) ** -alpha``.

    Exponents above one are accepted; only negative exponents are rejected.
    """
    if int(n_files) != n_files or n_files < 1:
        raise InvalidParameterError(f"n_files must be a positive integer, got {n_files!r}")
    if not np.isfinite(alpha) or alpha < 0:
        raise InvalidParameterError(f"alpha must be >= 0, got {alpha!r}")
    weights = np.arange(1, int(n_files) + 1, dtype=float) ** -float(alpha)
    return PopularityDistribution(weights / weights.sum(), alpha=float(alpha))


def from_raw(probs) -> PopularityDistribution:
    """Sort and normalize arbitrary positive request weights.

    Ties keep their original relative order.
    """
    raw = np.asarray(probs, dtype=float)
    if raw.ndim != 1 or raw.size == 0:
        raise InvalidParameterError("probs must be a nonempty 1-d vector")
    if not np.all(np.isfinite(raw)) or np.any(raw <= 0):
        raise InvalidParameterError("all entries must be finite and > 0")
    order = np.argsort(-raw, kind="stable")
    return PopularityDistribution(raw[order] / raw.sum(), permutation=order)


def from_config(config: dict) -> PopularityDistribution:
    """Build a distribution from ``{"type": "zipf", ...}`` or ``{"type": "raw", ...}``."""
    kind = config.get("type")
    try:
        if kind == "zipf":
            return zipf_pmf(config["n"], config.get("alpha", 1.0))
        if kind == "raw":
            return from_raw(config["probs"])
    except KeyError as exc:
        raise InvalidParameterError(f"distribution config missing key {exc}") from None
    raise InvalidParameterError(f"unknown distribution type {kind!r}")


def sample_rank(dist: PopularityDistribution, rng: np.random.Generator, size=None):
    """Draw 0-based ranks by inverse CDF over the cumulative table."""
    u = rng.random(size)
    ranks = np.searchsorted(dist.cdf, u, side="right")
    # u < 1 and cdf[-1] == 1, so the clip only guards against float ties.
    return np.minimum(ranks, dist.n_files - 1)
