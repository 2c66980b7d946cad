"""Seeded sampling, Gaussian special functions and small statistical tests."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import special

from .errors import (
    DomainError,
    EmptyInputError,
    InsufficientSampleError,
    InsufficientVariationError,
    InvalidParameterError,
)

_SEED_MAX = 2**64


@dataclass(frozen=True)
class GaussianParams:
    mean: float = 0.0
    variance: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.variance) or self.variance < 0:
            raise InvalidParameterError(f"variance must be >= 0, got {self.variance}")
        if not np.isfinite(self.mean):
            raise InvalidParameterError(f"mean must be finite, got {self.mean}")


@dataclass(frozen=True)
class RandomStream:
    """A reproducible source of randomness.

    The bit generator is Philox (counter based), keyed through a
    ``SeedSequence`` built from ``seed`` and the spawn key
    ``(stream_id, *path)``. Every call to :meth:`generator` restarts the
    stream, so the same ``RandomStream`` always yields the same draws.
    """

    seed: int
    stream_id: int = 0
    path: tuple = field(default=())

    def __post_init__(self):
        if not 0 <= int(self.seed) < _SEED_MAX:
            raise InvalidParameterError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if int(self.stream_id) < 0 or any(int(k) < 0 for k in self.path):
            raise InvalidParameterError("stream ids must be non-negative")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=int(self.seed), spawn_key=(int(self.stream_id), *map(int, self.path))
        )
        return np.random.Generator(np.random.Philox(ss))

    def child(self, *keys: int) -> "RandomStream":
        """Derive an independent sub-stream, e.g. per sweep point or per role."""
        return RandomStream(self.seed, self.stream_id, tuple(self.path) + tuple(int(k) for k in keys))


RngLike = Union[RandomStream, np.random.Generator]


def as_generator(rng: RngLike) -> np.random.Generator:
    # A Generator is used as-is (stateful); a RandomStream is restarted.
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RandomStream):
        return rng.generator()
    raise InvalidParameterError(f"expected RandomStream or numpy Generator, got {type(rng).__name__}")


@dataclass(frozen=True)
class SampleStats:
    count: int
    mean: float
    variance: Optional[float]
    skewness: Optional[float]
    excess_kurtosis: Optional[float]
    min: float
    max: float


def sample_gaussian(params: GaussianParams, n: int, rng: RngLike) -> np.ndarray:
    """Draw ``n`` values as ``g * sigma + mu`` with ``g`` standard normal."""
    if n < 0:
        raise InvalidParameterError(f"n must be >= 0, got {n}")
    g = as_generator(rng).standard_normal(int(n))
    if params.variance == 0:
        return np.full(int(n), float(params.mean))
    return g * np.sqrt(params.variance) + params.mean


def _check_variance(variance):
    if not np.isfinite(variance) or variance <= 0:
        raise InvalidParameterError(f"variance must be > 0, got {variance}")


def gaussian_cdf(x, variance: float):
    """Zero-mean Gaussian CDF, ``0.5 * (1 + erf(x / sqrt(2 variance)))``.

    Evaluated through ``ndtr`` which keeps full relative precision in the
    lower tail (plain ``1 + erf`` cancels catastrophically there).
    """
    _check_variance(variance)
    out = special.ndtr(np.asarray(x, dtype=float) / np.sqrt(variance))
    return float(out) if np.ndim(out) == 0 else out


def q_function(x):
    """Standard Gaussian tail probability Pr(g > x)."""
    out = special.ndtr(-np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def empirical_stats(samples) -> SampleStats:
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if n == 0:
        raise EmptyInputError("empirical_stats needs at least one sample")
    mean = float(np.mean(x))
    # two-pass central moments
    c = x - mean
    m2 = float(np.mean(c * c))
    variance = float(m2 * n / (n - 1)) if n >= 2 else None
    skew = kurt = None
    if n >= 4:
        if m2 == 0:
            skew, kurt = 0.0, 0.0
        else:
            m3 = float(np.mean(c**3))
            m4 = float(np.mean(c**4))
            g1 = m3 / m2**1.5
            g2 = m4 / m2**2 - 3.0
            # bias-corrected sample skewness and excess kurtosis
            skew = g1 * np.sqrt(n * (n - 1)) / (n - 2)
            kurt = (n - 1) / ((n - 2) * (n - 3)) * ((n + 1) * g2 + 6.0)
            skew, kurt = float(skew), float(kurt)
    return SampleStats(n, mean, variance, skew, kurt, float(x.min()), float(x.max()))


def ks_statistic(sorted_cdf_values: np.ndarray) -> float:
    """One-sample KS distance given the model CDF evaluated at the sorted samples."""
    u = sorted_cdf_values
    n = u.size
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - u)
    d_minus = np.max(u - (i - 1) / n)
    return float(max(d_plus, d_minus))


def kolmogorov_pvalue(statistic: float, n: int) -> float:
    return float(special.kolmogorov(np.sqrt(n) * statistic))


def ks_uniformity_test(samples) -> dict:
    u = np.sort(np.asarray(samples, dtype=float).ravel())
    if u.size < 10:
        raise InsufficientSampleError(f"KS test needs at least 10 samples, got {u.size}")
    if np.isnan(u).any() or u[0] < 0 or u[-1] > 1:
        raise DomainError("uniformity test values must lie in [0, 1]")
    stat = ks_statistic(u)
    return {"statistic": stat, "p_value": kolmogorov_pvalue(stat, u.size)}


def normality_check(samples) -> dict:
    """Moment diagnostics plus a KS test against the fitted Gaussian N(mean, var)."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 100:
        raise InsufficientSampleError(f"normality check needs at least 100 samples, got {x.size}")
    st = empirical_stats(x)
    if not st.variance > 0:
        raise InsufficientVariationError("samples have zero variance")
    z = np.sort((x - st.mean) / np.sqrt(st.variance))
    stat = ks_statistic(special.ndtr(z))
    return {
        "skewness": st.skewness,
        "excess_kurtosis": st.excess_kurtosis,
        "ks_p_vs_fitted_gaussian": kolmogorov_pvalue(stat, x.size),
    }
