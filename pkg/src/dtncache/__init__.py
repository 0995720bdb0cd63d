"""Popularity-aware cooperative caching for delay-tolerant mobile networks."""

from .errors import ConfigurationError, DtnCacheError, InvalidParameterError, NumericalFailureError
from .optimizer import (
    AllocationVector,
    KKTCertificate,
    NetworkParams,
    analytic_miss_rate_random,
    analytic_miss_rate_selective,
    k_most_popular_allocation,
    lambert_w0,
    optimal_allocation,
    q_of_eta,
    random_allocation,
)
from .popularity import PopularityDistribution, from_raw, sample_rank, zipf_pmf

__version__ = "0.1.0"

__all__ = [
    "AllocationVector",
    "ConfigurationError",
    "DtnCacheError",
    "InvalidParameterError",
    "KKTCertificate",
    "NetworkParams",
    "NumericalFailureError",
    "PopularityDistribution",
    "analytic_miss_rate_random",
    "analytic_miss_rate_selective",
    "from_raw",
    "k_most_popular_allocation",
    "lambert_w0",
    "optimal_allocation",
    "q_of_eta",
    "random_allocation",
    "sample_rank",
    "zipf_pmf",
]
