import math

import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from scalar_recon import analysis as an
from scalar_recon.errors import (
    DomainError,
    InsufficientSampleError,
    InvalidInputError,
    InvalidParameterError,
)
from scalar_recon.quantum import ChannelModel, ModulationConfig, noise_from_line_params, run_session
from scalar_recon.reconciliation import Alphabet, reconcile_session
from scalar_recon.stats import RandomStream


def gauss_hermite_biawgn(snr, n=300):
    # independent oracle: E_z[log2(1 + exp(-2 snr - 2 sqrt(snr) z))] by Gauss-Hermite
    t, w = np.polynomial.hermite.hermgauss(n)
    z = math.sqrt(2) * t
    f = np.logaddexp(0, -2 * snr - 2 * math.sqrt(snr) * z) / math.log(2)
    return 1 - float(np.sum(w * f) / math.sqrt(math.pi))


# --- Lyapunov ---------------------------------------------------------------

def _iid(d, n=20_000, seed=0):
    return RandomStream(seed, d).generator().standard_normal((n, d))


def test_lyapunov_iid_d16():
    r = an.lyapunov_ratio({16: _iid(16)}, 1.0)[16]
    assert r == pytest.approx(2 * math.sqrt(2 / math.pi) / 4, rel=0.03)


def test_lyapunov_scaling():
    ds = (4, 16, 64, 256)
    r = an.lyapunov_ratio({d: _iid(d) for d in ds}, 1.0)
    assert r[64] == pytest.approx(r[16] / 2, rel=0.05)
    assert all(r[a] > r[b] for a, b in zip(ds, ds[1:]))
    e3 = 2 * math.sqrt(2 / math.pi)
    for d in ds:
        assert r[d] == pytest.approx(e3 * d ** -0.5, rel=0.10)


def test_lyapunov_other_exponent():
    r = an.lyapunov_ratio({16: _iid(16), 64: _iid(64)}, 2.0)
    # E g^4 = 3, ratio = 3 d / d^2 = 3/d
    assert r[16] == pytest.approx(3 / 16, rel=0.05)
    assert r[64] == pytest.approx(3 / 64, rel=0.05)


def test_lyapunov_errors():
    with pytest.raises(InsufficientSampleError):
        an.lyapunov_ratio({4: _iid(4, n=500)})
    with pytest.raises(InvalidParameterError):
        an.lyapunov_ratio({4: _iid(4)}, 0.0)


# --- CLT report -------------------------------------------------------------

def _s4_noise(d, blocks, seed):
    s = run_session(ModulationConfig(50.0), ChannelModel(0.0), ChannelModel(4.0, label="N2"),
                    d * blocks, RandomStream(seed))
    return reconcile_session(s, d, Alphabet(-400.0, 400.0), rng=RandomStream(seed, 1)).noise


def test_clt_report_fields_and_degenerate():
    rep = an.clt_convergence_report({4: np.zeros(10_000)}, physical_noise=0.0)
    assert rep[4]["degenerate"] and rep[4]["variance"] == 0
    with pytest.raises(InsufficientSampleError):
        an.clt_convergence_report({4: np.ones(100)})


def test_clt_report_pooled_block_noise_gaussian_at_d16():
    nz = _s4_noise(16, 10_000, 16)
    rep = an.clt_convergence_report({16: nz.delta_block_ratio_of_sums}, physical_noise=4.0)[16]
    assert rep["ks_p"] >= 0.01
    assert abs(rep["excess_kurtosis"]) < 1.0
    assert rep["d_variance"] == pytest.approx(16 * rep["variance"])


def test_clt_report_per_unit_block_noise_is_reported():
    nz = _s4_noise(16, 10_000, 17)
    rep = an.clt_convergence_report({16: nz.block_noise})[16]
    assert not rep["degenerate"]
    assert rep["excess_kurtosis"] > 0 and 0 <= rep["ks_p"] <= 1


# --- norms ------------------------------------------------------------------

def test_chi_mean_values():
    assert an.chi_mean(2) == pytest.approx(math.sqrt(math.pi / 2), rel=1e-14)
    assert an.chi_mean(8) == pytest.approx(math.sqrt(2) * math.gamma(4.5) / math.gamma(4), rel=1e-14)
    # sqrt(2) Gamma(4.5) / Gamma(4) = 2.7416246...
    assert an.chi_mean(8) == pytest.approx(2.7416247, abs=1e-7)


def test_chi_mean_against_density_quadrature():
    for d in (1, 3, 10):
        dens = lambda r: r ** (d - 1) * math.exp(-r * r / 2) / (2 ** (d / 2 - 1) * math.gamma(d / 2))
        m1, _ = integrate.quad(lambda r: r * dens(r), 0, np.inf)
        m2, _ = integrate.quad(lambda r: r * r * dens(r), 0, np.inf)
        assert an.chi_mean(d) == pytest.approx(m1, rel=1e-10)
        assert an.chi_variance(d) == pytest.approx(m2 - m1**2, rel=1e-8)


def test_norm_stats_d2():
    ns = an.normalized_norm_stats(2, 1.0, 100_000, RandomStream(1))
    assert ns.mean_norm_exact == pytest.approx(1.25331, abs=1e-5)
    assert ns.mean_norm == pytest.approx(1.22474, abs=1e-5)
    se = math.sqrt(ns.variance_exact / ns.n_samples)
    assert abs(ns.empirical_mean_norm - ns.mean_norm_exact) <= 3 * se
    assert ns.variance_exact <= ns.variance_bound


@pytest.mark.parametrize("d", [4, 16, 64])
def test_norm_stats_within_3se(d):
    ns = an.normalized_norm_stats(d, 2.5, 20_000, RandomStream(d))
    se = math.sqrt(ns.normalized_variance / ns.n_samples)
    assert abs(ns.empirical_normalized_mean - ns.normalized_mean_norm) <= 3 * se
    assert ns.empirical_variance == pytest.approx(ns.variance_exact, rel=0.05)


def test_norm_concentrates_at_high_d():
    ns = an.normalized_norm_stats(1024, 1.0, 2000, RandomStream(5))
    assert abs(ns.empirical_normalized_mean - 1) <= 0.01
    assert ns.empirical_normalized_variance < 1e-3
    small = an.normalized_norm_stats(2, 1.0, 2000, RandomStream(6))
    assert ns.empirical_normalized_variance < small.empirical_normalized_variance


def test_norm_stats_errors():
    with pytest.raises(InsufficientSampleError):
        an.normalized_norm_stats(4, 1.0, 10, RandomStream(1))
    with pytest.raises(InvalidParameterError):
        an.normalized_norm_stats(0, 1.0, 2000, RandomStream(1))


# --- Dirac density, octonions ----------------------------------------------

def test_dirac_peak_and_growth():
    assert an.dirac_density(1.0, 16, 1.0) == pytest.approx(4 / math.sqrt(math.pi))
    assert an.dirac_density(0.3, 16, 0.3) / an.dirac_density(0.3, 4, 0.3) == pytest.approx(2.0)


@pytest.mark.parametrize("d", [1, 4, 16, 64])
def test_dirac_integrates_to_one(d):
    a = 1 / math.sqrt(d)
    val, _ = integrate.quad(an.dirac_density, 1 - 10 * a, 1 + 10 * a, args=(d, 1.0), epsabs=1e-12)
    assert abs(val - 1) <= 1e-6


def test_octonion_pack():
    o = an.octonion_pack([1, 0, 0, 0, 0, 0, 0, 0])
    assert o["Re"] == 1 and all(o[f"Im{k}"] == 0 for k in range(1, 8))
    with pytest.raises(InvalidParameterError):
        an.octonion_pack([1, 2, 3])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=8, max_size=8),
       st.lists(st.floats(-1e3, 1e3), min_size=8, max_size=8))
def test_octonion_roundtrip_and_noise(units, noise):
    u = np.array(units)
    o = an.octonion_pack(u)
    assert np.array_equal(an.octonion_unpack(o), u)
    noisy = an.octonion_pack(u + np.array(noise))
    assert np.array_equal((noisy - o).unpack(), (u + np.array(noise)) - u)


# --- channel formulas -------------------------------------------------------

def test_snr_physical():
    assert an.snr_physical(1.06, 1.06) == 1.0
    assert an.snr_physical(1.06, noise_from_line_params(0.8, 0.015)) == pytest.approx(4.0, rel=1e-14)
    assert an.snr_physical(1.06, 1e300) < 1e-299
    with pytest.raises(InvalidParameterError):
        an.snr_physical(1.0, 0.0)


def test_mutual_information():
    assert an.mutual_information(0) == 0
    assert an.mutual_information(1) == 0.5
    assert an.mutual_information(3) == 1.0
    with pytest.raises(InvalidParameterError):
        an.mutual_information(-1)


def test_biawgn_limits():
    assert an.biawgn_capacity(0) == 0
    assert an.biawgn_capacity(math.inf) == 1
    assert an.biawgn_capacity(1e4) == pytest.approx(1.0, abs=1e-12)
    assert an.biawgn_capacity(0.1) == pytest.approx(0.5 * math.log2(1.1), rel=0.01)


@pytest.mark.parametrize("snr", [1e-4, 0.01, 0.1, 0.5, 1.0, 3.0, 10.0])
def test_biawgn_against_gauss_hermite(snr):
    assert an.biawgn_capacity(snr) == pytest.approx(gauss_hermite_biawgn(snr), abs=1e-6)


def test_biawgn_below_awgn_and_one():
    for s in np.geomspace(1e-4, 1e3, 1000):
        c = an.biawgn_capacity(s)
        assert c <= min(1.0, an.mutual_information(s)) + 1e-12


def test_excess_noise():
    assert abs(an.excess_noise(1.06, 0.8) - 0.015) <= 1e-12
    assert an.excess_noise(1.0, 0.3) == 0
    assert an.excess_noise(5.0, 1.0) == 0
    with pytest.raises(InvalidParameterError):
        an.excess_noise(1.06, 0.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(1.0, 10.0), st.floats(0.01, 1.0))
def test_excess_noise_closes_through_line_noise(var, t):
    xi = an.excess_noise(var, t)
    line = noise_from_line_params(t, xi)
    assert an.excess_noise(var, t) == xi
    assert line == pytest.approx((1 - t) / t + xi)


def test_key_rate_increasing_in_t():
    T = sympy.symbols("T")
    first = sympy.log((1 - T + T**2) / (1 - T) ** 2, 2) / 2
    deriv = sympy.lambdify(T, sympy.diff(first, T))
    ts = np.linspace(0.5, 0.99, 200)
    assert np.all(deriv(ts) > 0)
    rates = [an.secret_key_rate(an.KeyRateInputs(t, 1.06)) for t in ts]
    assert np.all(np.diff(rates) > 0)


def test_key_rate_pole_and_conventions():
    near = an.secret_key_rate(an.KeyRateInputs(1 - 1e-9, 1.06))
    assert near > 25
    with pytest.raises(DomainError):
        an.secret_key_rate(an.KeyRateInputs(1.0, 1.06))
    ts = (0.3, 0.6, 0.9)
    g = [an.secret_key_rate(an.KeyRateInputs(t, 1.5, entropy_convention="BosonicG")) for t in ts]
    h = [an.secret_key_rate(an.KeyRateInputs(t, 1.5, entropy_convention="DifferentialGaussian"))
         for t in ts]
    assert g[0] != h[0]
    assert np.allclose(np.diff(g), np.diff(h), rtol=0, atol=1e-12)


def test_entropy_functions():
    assert an.bosonic_entropy(1.0) == 0.0
    assert an.bosonic_entropy(3.0) == pytest.approx(2.0)  # g(1) = 2 log2 2
    assert an.differential_gaussian_entropy(1 / (2 * math.pi * math.e)) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(DomainError):
        an.bosonic_entropy(0.5)


def test_distance_to_transmittance():
    assert an.distance_to_transmittance(0, 0.2) == 1
    assert an.distance_to_transmittance(50, 0.2) == pytest.approx(0.1, rel=1e-15)
    assert an.distance_to_transmittance(15, 0.2) == pytest.approx(10**-0.3, rel=1e-15)
    assert an.distance_to_transmittance(15, 0.2) == pytest.approx(0.501, abs=1e-3)


# --- logical channel report -------------------------------------------------

def test_logical_report_noiseless():
    s = run_session(ModulationConfig(1.06), ChannelModel(0.0), ChannelModel(0.0, label="N2"),
                    16_000, RandomStream(1))
    r = reconcile_session(s, 16, Alphabet(-1.0, 1.0), rng=RandomStream(1, 1))
    rep = an.logical_channel_report(r)
    assert rep.beta == 1.0 and rep.sigma_delta_sq == 0 and rep.snr_logical == math.inf


def test_logical_report_requires_ground_truth():
    with pytest.raises(InvalidInputError):
        an.logical_channel_report(None)


def test_logical_report_operating_point():
    n = noise_from_line_params(0.8, 0.015)
    s = run_session(ModulationConfig(1.06), ChannelModel(n), ChannelModel(n, label="N2"),
                    16 * 10_000, RandomStream(2))
    rep = an.logical_channel_report(reconcile_session(s, 16, Alphabet(-1.0, 1.0),
                                                      rng=RandomStream(2, 1)))
    assert rep.snr_physical == pytest.approx(4.0)
    assert 0 <= rep.beta <= 1.01
    assert rep.beta <= rep.beta_raw + 1e-15
    assert rep.biawgn_capacity <= rep.awgn_capacity
    assert rep.snr_logical == pytest.approx(1 / rep.sigma_delta_sq)
    assert set(rep.as_row()) == {"d", "sigma_delta_sq", "snr_logical", "beta", "kurtosis", "ks_p"}
