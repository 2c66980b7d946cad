"""Channel-conversion diagnostics, capacities and key-rate formulas."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from scipy import integrate, special

from .errors import (
    DomainError,
    InsufficientSampleError,
    InvalidInputError,
    InvalidParameterError,
)
from .stats import RngLike, as_generator, empirical_stats, normality_check

log = logging.getLogger(__name__)

ENTROPY_CONVENTIONS = ("BosonicG", "DifferentialGaussian")


# --- CLT / Lyapunov ----------------------------------------------------------

def lyapunov_ratio(unit_noise_by_d: Mapping[int, np.ndarray], L: float = 1.0) -> dict:
    """Empirical Lyapunov ratio per dimension.

    ``unit_noise_by_d[d]`` is an ``(n_blocks, d)`` array; expectations and
    variances of each unit position are estimated across blocks.
    """
    if not L > 0:
        raise InvalidParameterError(f"Lyapunov exponent must be > 0, got {L}")
    out = {}
    for d, samples in unit_noise_by_d.items():
        s = np.asarray(samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.shape[0] < 1000:
            raise InsufficientSampleError(f"d={d}: need at least 1000 blocks, got {s.shape[0]}")
        moments = np.mean(np.abs(s) ** (2 + L), axis=0)
        var = np.var(s, axis=0, ddof=1)
        out[d] = float(moments.sum() / var.sum() ** ((2 + L) / 2))
    return out


def clt_convergence_report(block_noise_by_d: Mapping[int, np.ndarray],
                           physical_noise: Optional[float] = None,
                           min_blocks: int = 10_000) -> dict:
    """Per-dimension normality diagnostics of the block noise.

    Besides the moments and a KS p-value against the fitted Gaussian, each
    entry carries ``d * var(delta_j)`` next to the physical noise variance.
    A sample with zero spread is flagged ``degenerate`` instead of failing.
    """
    out = {}
    for d, samples in block_noise_by_d.items():
        x = np.asarray(samples, dtype=float).ravel()
        if x.size < min_blocks:
            raise InsufficientSampleError(f"d={d}: need at least {min_blocks} blocks, got {x.size}")
        st = empirical_stats(x)
        entry = {
            "mean": st.mean,
            "variance": st.variance,
            "d_variance": d * st.variance,
            "physical_noise": physical_noise,
        }
        if st.variance == 0:
            entry.update(degenerate=True, skewness=None, excess_kurtosis=None, ks_p=None)
        else:
            nc = normality_check(x)
            entry.update(degenerate=False, skewness=nc["skewness"],
                         excess_kurtosis=nc["excess_kurtosis"],
                         ks_p=nc["ks_p_vs_fitted_gaussian"])
        out[d] = entry
    return out


# --- norm statistics ---------------------------------------------------------

@dataclass(frozen=True)
class NormStats:
    d: int
    mean_norm: float
    mean_norm_exact: float
    variance_exact: float
    variance_bound: float
    empirical_mean_norm: float
    empirical_variance: float
    normalized_mean_norm: float
    normalized_variance: float
    empirical_normalized_mean: float
    empirical_normalized_variance: float
    n_samples: int


def chi_mean(d: int, sigma: float = 1.0) -> float:
    """E||X|| for X ~ N(0, sigma^2 I_d): sqrt(2) Gamma((d+1)/2) / Gamma(d/2) sigma."""
    return math.sqrt(2) * math.exp(special.gammaln((d + 1) / 2) - special.gammaln(d / 2)) * sigma


def chi_variance(d: int, sigma: float = 1.0) -> float:
    """var||X|| = d sigma^2 - 2 pi sigma^2 / B(d/2, 1/2)^2."""
    beta = math.exp(special.betaln(d / 2, 0.5))
    return d * sigma**2 - 2 * math.pi * sigma**2 / beta**2


def normalized_norm_stats(d: int, variance: float, n_samples: int, rng: RngLike) -> NormStats:
    if d < 1:
        raise InvalidParameterError(f"d must be >= 1, got {d}")
    if n_samples < 1000:
        raise InsufficientSampleError(f"need at least 1000 samples, got {n_samples}")
    if not variance > 0:
        raise InvalidParameterError(f"variance must be > 0, got {variance}")
    sigma = math.sqrt(variance)
    gen = as_generator(rng)
    norms = np.empty(n_samples)
    chunk = max(1, 2_000_000 // d)
    for lo in range(0, n_samples, chunk):
        hi = min(n_samples, lo + chunk)
        x = gen.standard_normal((hi - lo, d)) * sigma
        norms[lo:hi] = np.linalg.norm(x, axis=1)
    scale = math.sqrt(d * variance)
    normed = norms / scale
    return NormStats(
        d=d,
        mean_norm=sigma * math.sqrt(d - 0.5),
        mean_norm_exact=chi_mean(d, sigma),
        variance_exact=chi_variance(d, sigma),
        variance_bound=variance / 2,
        empirical_mean_norm=float(norms.mean()),
        empirical_variance=float(norms.var(ddof=1)),
        normalized_mean_norm=chi_mean(d, sigma) / scale,
        normalized_variance=chi_variance(d, sigma) / scale**2,
        empirical_normalized_mean=float(normed.mean()),
        empirical_normalized_variance=float(normed.var(ddof=1)),
        n_samples=n_samples,
    )


def dirac_density(x, d: int, r: float = 1.0):
    """Gaussian approximation of a point mass at ``r`` with width a = 1/sqrt(d)."""
    if d < 1:
        raise InvalidParameterError(f"d must be >= 1, got {d}")
    a = 1 / math.sqrt(d)
    out = np.exp(-((np.asarray(x, dtype=float) - r) ** 2) / a**2) / (a * math.sqrt(math.pi))
    return float(out) if np.ndim(out) == 0 else out


OCTONION_LABELS = ("Re",) + tuple(f"Im{k}" for k in range(1, 8))


@dataclass(frozen=True)
class Octonion:
    coefficients: tuple

    def __post_init__(self):
        if len(self.coefficients) != 8:
            raise InvalidParameterError(f"an octonion needs exactly 8 units, got {len(self.coefficients)}")

    def as_dict(self) -> dict:
        return dict(zip(OCTONION_LABELS, self.coefficients))

    def __getitem__(self, label: str) -> float:
        return self.coefficients[OCTONION_LABELS.index(label)]

    def __sub__(self, other: "Octonion") -> "Octonion":
        return Octonion(tuple(a - b for a, b in zip(self.coefficients, other.coefficients)))

    def unpack(self) -> np.ndarray:
        return np.array(self.coefficients, dtype=float)


def octonion_pack(units) -> Octonion:
    u = np.asarray(units, dtype=float).ravel()
    if u.size != 8:
        raise InvalidParameterError(f"an octonion needs exactly 8 units, got {u.size}")
    return Octonion(tuple(float(v) for v in u))


def octonion_unpack(o: Octonion) -> np.ndarray:
    return o.unpack()


# --- channel formulas --------------------------------------------------------

def snr_physical(modulation_variance: float, noise_variance: float) -> float:
    if not noise_variance > 0:
        raise InvalidParameterError(f"noise variance must be > 0, got {noise_variance}")
    return modulation_variance / noise_variance


def mutual_information(snr: float) -> float:
    if snr < 0:
        raise InvalidParameterError(f"snr must be >= 0, got {snr}")
    return 0.5 * math.log2(1 + snr)


def _biawgn_integrand(z, s):
    # phi(z) * log2(1 + exp(-2s - 2 sqrt(s) z)), overflow-safe
    t = -2 * s - 2 * math.sqrt(s) * z
    return math.exp(-z * z / 2) / math.sqrt(2 * math.pi) * np.logaddexp(0.0, t) / math.log(2)


def biawgn_capacity(snr: float) -> float:
    """Capacity of the binary-input (+-1) AWGN channel at amplitude SNR ``snr``.

    ``C = 1 - E_z[log2(1 + exp(-2 snr - 2 sqrt(snr) z))]`` with z standard
    normal, integrated adaptively. The integrand is concentrated below
    ``z = -sqrt(snr)``, which is passed to the integrator as a breakpoint.
    """
    if snr < 0:
        raise InvalidParameterError(f"snr must be >= 0, got {snr}")
    if snr == 0:
        return 0.0
    if math.isinf(snr):
        return 1.0
    knee = -math.sqrt(snr)
    lo, hi = min(-40.0, knee - 40.0), max(40.0, knee + 40.0)
    pts = sorted({knee, 0.0})
    val, _ = integrate.quad(_biawgn_integrand, lo, hi, args=(snr,), points=pts,
                            epsabs=1e-13, epsrel=1e-12, limit=400)
    return float(min(1.0, max(0.0, 1.0 - val)))


def excess_noise(modulation_variance: float, transmittance: float) -> float:
    if not (0 < transmittance <= 1):
        raise InvalidParameterError(f"transmittance must be in (0, 1], got {transmittance}")
    return (modulation_variance - 1) * (1 - transmittance) / transmittance


def distance_to_transmittance(length_km: float, loss_db_per_km: float = 0.2) -> float:
    if loss_db_per_km < 0:
        raise InvalidParameterError(f"loss must be >= 0, got {loss_db_per_km}")
    if length_km < 0:
        raise InvalidParameterError(f"distance must be >= 0, got {length_km}")
    return 10 ** (-loss_db_per_km * length_km / 10)


def bosonic_entropy(v: float) -> float:
    """g((V - 1)/2) with g(x) = (x + 1) log2(x + 1) - x log2 x."""
    if v < 1:
        raise DomainError(f"bosonic entropy needs V >= 1, got {v}")
    x = (v - 1) / 2
    if x == 0:
        return 0.0
    return (x + 1) * math.log2(x + 1) - x * math.log2(x)


def differential_gaussian_entropy(variance: float) -> float:
    if not variance > 0:
        raise DomainError(f"variance must be > 0, got {variance}")
    return 0.5 * math.log2(2 * math.pi * math.e * variance)


@dataclass(frozen=True)
class KeyRateInputs:
    transmittance: float
    modulation_variance: float
    excess_noise: float = 0.0
    entropy_convention: str = "BosonicG"
    fiber_loss_db_per_km: float = 0.2

    def __post_init__(self):
        if not (0 < self.transmittance <= 1):
            raise InvalidParameterError(f"transmittance must be in (0, 1], got {self.transmittance}")
        if not self.modulation_variance > 0:
            raise InvalidParameterError("modulation variance must be > 0")
        if self.excess_noise < 0:
            raise InvalidParameterError("excess noise must be >= 0")
        if self.entropy_convention not in ENTROPY_CONVENTIONS:
            raise InvalidParameterError(
                f"entropy convention must be one of {ENTROPY_CONVENTIONS}, got {self.entropy_convention!r}")
        if self.fiber_loss_db_per_km < 0:
            raise InvalidParameterError("fiber loss must be >= 0")


def entropy_term(modulation_variance: float, convention: str) -> float:
    if convention == "BosonicG":
        return bosonic_entropy(modulation_variance)
    if convention == "DifferentialGaussian":
        return differential_gaussian_entropy(modulation_variance)
    raise InvalidParameterError(f"unknown entropy convention {convention!r}")


def secret_key_rate(inputs: KeyRateInputs) -> float:
    """R = 1/2 log2((1 - T + T^2) / (1 - T)^2) - H(sigma_w^2), in bits per pulse."""
    t = inputs.transmittance
    if t >= 1:
        raise DomainError("key-rate formula is singular at T = 1")
    first = 0.5 * math.log2((1 - t + t * t) / (1 - t) ** 2)
    h = entropy_term(inputs.modulation_variance, inputs.entropy_convention)
    log.info("key rate with %s entropy convention (H = %.6g)", inputs.entropy_convention, h)
    return first - h


# --- logical channel ---------------------------------------------------------

@dataclass
class LogicalChannelReport:
    d: int
    sigma_delta_sq: float
    physical_noise: Optional[float]
    snr_physical: float
    snr_logical: float
    beta: float
    beta_raw: float
    biawgn_capacity: float
    awgn_capacity: float
    physical_mutual_information: float
    ber: float
    normality: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        return {
            "d": self.d,
            "sigma_delta_sq": self.sigma_delta_sq,
            "snr_logical": self.snr_logical,
            "beta": self.beta,
            "kurtosis": self.normality.get("excess_kurtosis"),
            "ks_p": self.normality.get("ks_p_vs_fitted_gaussian"),
        }


def logical_snr(alphabet, sigma_delta_sq: float) -> float:
    a, b = alphabet
    if sigma_delta_sq == 0:
        return math.inf
    return (abs(a - b) / 2) ** 2 / sigma_delta_sq


def logical_channel_report(result, d: Optional[int] = None,
                           modulation_variance: Optional[float] = None,
                           physical_noise: Optional[float] = None) -> LogicalChannelReport:
    """Summarize the logical binary channel produced by a reconciliation run.

    The decoder faces a binary signal of amplitude |a - b|/2 in noise of
    variance var(delta_j); its capacity is compared with the physical
    channel's Gaussian mutual information. ``beta`` is that ratio capped at
    one, ``beta_raw`` the uncapped value.
    """
    if result is None or getattr(result, "choices", None) is None:
        raise InvalidInputError("reconciliation output with ground-truth choices is required")
    d = d if d is not None else result.d
    session = result.session
    if modulation_variance is None:
        modulation_variance = session.modulation_variance if session is not None else math.nan
    if physical_noise is None:
        physical_noise = session.n2_variance if session is not None else math.nan
    noise = result.noise.block_noise
    st = empirical_stats(noise)
    var = st.variance if st.variance is not None else 0.0
    snr_log = logical_snr(result.alphabet, var)
    cap_bi = biawgn_capacity(snr_log)
    cap_awgn = mutual_information(snr_log) if math.isfinite(snr_log) else math.inf
    if physical_noise == 0:
        snr_phys, info_phys = math.inf, math.inf
    elif math.isfinite(physical_noise) and math.isfinite(modulation_variance):
        snr_phys = snr_physical(modulation_variance, physical_noise)
        info_phys = mutual_information(snr_phys)
    else:
        snr_phys, info_phys = math.nan, math.nan
    if var == 0:
        beta_raw = beta = 1.0
    elif info_phys > 0:
        beta_raw = cap_bi / info_phys
        beta = min(1.0, beta_raw)
    else:
        beta_raw = beta = math.nan
    normality = {}
    if var > 0 and noise.size >= 100:
        normality = normality_check(noise)
    return LogicalChannelReport(
        d=d,
        sigma_delta_sq=var,
        physical_noise=physical_noise,
        snr_physical=snr_phys,
        snr_logical=snr_log,
        beta=beta,
        beta_raw=beta_raw,
        biawgn_capacity=cap_bi,
        awgn_capacity=cap_awgn,
        physical_mutual_information=info_phys,
        ber=result.report.ber,
        normality=normality,
    )
