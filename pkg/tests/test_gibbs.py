import math

import numpy as np
import pytest

from polaron import gibbs
from polaron.errors import (ConfigurationError, InsufficientSampleError, MixingError, SingularityError,
                            TruncationError)


def within(value, target, stderr, k=3.0):
    return abs(value - target) <= k * stderr


# --- parameters and the Hamiltonian ---------------------------------------------

def test_params_defaults_and_validation():
    p = gibbs.PolaronParams(1.0, 2.0)
    assert p.delta == 0.01 and p.M == 400 and p.eps_T == 2.0
    assert gibbs.PolaronParams(50.0, 1.0).delta == pytest.approx(0.002)
    with pytest.raises(ConfigurationError):
        gibbs.PolaronParams(-1.0, 2.0)
    with pytest.raises(ConfigurationError):
        gibbs.PolaronParams(1.0, 1.0, delta=0.3)
    with pytest.raises(ConfigurationError):
        gibbs.PolaronParams(1.0, 1.0, beta=1.5)


def test_constant_path_hamiltonian_converges():
    errors = []
    for delta in (0.02, 0.01):
        p = gibbs.PolaronParams(1.0, 2.0, eta=0.05, delta=delta)
        h = gibbs.hamiltonian(gibbs.DiscretePath.zeros(p), p)
        exact = gibbs.constant_path_hamiltonian(p)
        errors.append(abs(h - exact) / exact)
    assert errors[1] < errors[0] and errors[1] < 0.01
    # the error is first order in delta
    assert errors[0] / errors[1] == pytest.approx(2.0, rel=0.1)


def test_beta_zero_hamiltonian(rng):
    p = gibbs.PolaronParams(1.0, 1.0, beta=0.0)
    assert gibbs.hamiltonian(gibbs.DiscretePath.brownian(p, rng), p) == 0.0


def test_large_eta_limit_from_below(rng):
    p = gibbs.PolaronParams(1.0, 1.0, eta=100.0)
    flat = gibbs.hamiltonian(gibbs.DiscretePath.zeros(p), p)
    h = gibbs.hamiltonian(gibbs.DiscretePath.brownian(p, rng), p)
    assert h < flat and h / flat > 0.999


def test_singularity_without_regularization():
    p = gibbs.PolaronParams(1.0, 0.5, eta=0.0)
    with pytest.raises(SingularityError):
        gibbs.hamiltonian(gibbs.DiscretePath.zeros(p), p)


def test_incremental_update_matches_full(rng):
    p = gibbs.PolaronParams(1.0, 2.0, eta=0.05)
    ham = gibbs.Hamiltonian(p)
    path = gibbs.DiscretePath.brownian(p, rng)
    pos = path.positions()
    h = ham.from_positions(pos)
    for _ in range(50):
        a = int(rng.integers(1, p.M - 10))
        b = min(p.M + 1, a + int(rng.integers(1, 80)))
        new = pos.copy()
        new[a:b] += 0.1 * rng.standard_normal((b - a, 3))
        dh = ham.block_delta(pos, new, a, b)
        h_new = ham.from_positions(new)
        assert abs(h + dh - h_new) < 1e-10 * max(1.0, abs(h_new))
        pos, h = new, h + dh


def test_sampler_block_move_keeps_h_exact(rng):
    p = gibbs.PolaronParams(1.0, 2.0, eta=0.05)
    s = gibbs._Sampler(p, gibbs.DiscretePath.brownian(p, rng), rng)
    for _ in range(20):
        s.sweep()
    assert abs(s.h - s.ham.from_positions(s.path().positions())) < 1e-9


# --- pCN ----------------------------------------------------------------------

def test_pcn_rho_zero_always_accepts(rng):
    p = gibbs.PolaronParams(1.0, 1.0)
    path = gibbs.DiscretePath.brownian(p, rng)
    out, accepted, _ = gibbs.pcn_step(path, p, 0.0, rng)
    assert accepted and np.array_equal(out.increments, path.increments)


def test_pcn_beta_zero_exact_resampling(rng):
    p = gibbs.PolaronParams(1.0, 1.0, beta=0.0)
    path = gibbs.DiscretePath.zeros(p)
    draws = []
    for _ in range(200):
        path, accepted, _ = gibbs.pcn_step(path, p, 1.0, rng)
        assert accepted
        draws.append(path.increments)
    g = np.concatenate(draws).ravel() / math.sqrt(p.delta)
    assert within(g.var(), 1.0, math.sqrt(2 / g.size))
    assert within((g**4).mean(), 3.0, (g**4).std() / math.sqrt(g.size))


def test_pcn_rejects_bad_rho(rng):
    p = gibbs.PolaronParams(1.0, 1.0)
    with pytest.raises(ConfigurationError):
        gibbs.pcn_step(gibbs.DiscretePath.zeros(p), p, 1.5, rng)


# --- chains -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def reference_chain():
    p = gibbs.PolaronParams(1.0, 1.0, beta=0.0)
    return gibbs.run_chain(p, 10_000, np.random.default_rng(5))


def test_reference_chain_moments(reference_chain):
    chain = reference_chain
    g = chain.samples / math.sqrt(chain.params.delta)
    m2 = (g**2).mean(axis=(1, 2))
    m4 = (g**4).mean(axis=(1, 2))
    m1 = g.mean(axis=(1, 2))
    m3 = (g**3).mean(axis=(1, 2))
    assert within(m1.mean(), 0.0, gibbs.batch_means_stderr(m1))
    assert within(m2.mean(), 1.0, gibbs.batch_means_stderr(m2))
    assert within(m3.mean(), 0.0, gibbs.batch_means_stderr(m3))
    assert within(m4.mean(), 3.0, gibbs.batch_means_stderr(m4))
    assert np.all(chain.acceptance == 1.0)


def test_reference_chain_sigma2(reference_chain):
    s2, se, n_eff = gibbs.estimate_sigma2(reference_chain)
    assert within(s2, 1.0, se) and n_eff >= 50


@pytest.fixture(scope="module")
def coupled_chains():
    p = gibbs.PolaronParams(1.0, 2.0, eta=0.05)
    return [gibbs.run_chain(p, 10_000, np.random.default_rng(seed), keep_paths=False) for seed in (1, 2)]


def test_energy_positive_and_seed_stable(coupled_chains):
    a, b = coupled_chains
    assert a.E_H > 0 and b.E_H > 0
    assert within(a.E_H, b.E_H, math.hypot(a.E_H_stderr, b.E_H_stderr))
    assert 0.01 <= a.acceptance.min() and a.iact >= 1.0


def test_coupled_sigma2_dominated(coupled_chains, reference_chain):
    s2, se, _ = gibbs.estimate_sigma2(coupled_chains[0])
    ref, ref_se, _ = gibbs.estimate_sigma2(reference_chain)
    assert s2 <= 1 + 3 * se
    assert s2 <= ref + 3 * math.hypot(se, ref_se)


def test_stderr_scaling_with_chain_length():
    p = gibbs.PolaronParams(1.0, 1.0, eta=0.05)
    short = gibbs.run_chain(p, 10_000, np.random.default_rng(3), keep_paths=False)
    long = gibbs.run_chain(p, 40_000, np.random.default_rng(4), keep_paths=False)
    # four times the sweeps halves the stderr
    ratio = long.E_H_stderr / short.E_H_stderr
    assert 0.5 / 1.5 < ratio < 0.5 * 1.5


def test_chain_validation_and_mixing_failure(monkeypatch):
    p = gibbs.PolaronParams(1.0, 0.5)
    with pytest.raises(ConfigurationError):
        gibbs.run_chain(p, 100, np.random.default_rng(0))
    monkeypatch.setattr(gibbs._Sampler, "_accept", lambda self, dh: False)
    with pytest.raises(MixingError):
        gibbs.run_chain(p, 10_000, np.random.default_rng(0), burn_in=0, keep_paths=False)


def test_sigma2_needs_effective_samples(reference_chain):
    with pytest.raises(InsufficientSampleError):
        gibbs.estimate_sigma2(reference_chain, min_effective=10**6)


def test_diagnostics_schema(reference_chain):
    d = reference_chain.diagnostics()
    for key in ("acceptance", "iact", "E_H", "E_H_stderr", "rho"):
        assert key in d


def test_autocorrelation_tools(rng):
    x = rng.standard_normal(20_000)
    assert gibbs.integrated_autocorrelation_time(x) == pytest.approx(1.0, abs=0.15)
    ar = np.empty(20_000)
    ar[0] = 0
    for k in range(1, ar.size):
        ar[k] = 0.9 * ar[k - 1] + rng.standard_normal()
    # AR(1): tau = (1 + phi) / (1 - phi) = 19
    assert gibbs.integrated_autocorrelation_time(ar) == pytest.approx(19.0, rel=0.25)
    assert gibbs.batch_means_stderr(x) == pytest.approx(1 / math.sqrt(x.size), rel=0.5)


# --- free energy ---------------------------------------------------------------------

def test_free_energy_degenerate_and_validation(rng):
    p = gibbs.PolaronParams(1.0, 1.0)
    assert gibbs.free_energy_thermo_integration(p, [0.0], rng).g == 0.0
    with pytest.raises(ConfigurationError):
        gibbs.free_energy_thermo_integration(p, np.linspace(0, 1, 4), rng)


def test_thermo_integration_matches_reweighting():
    p = gibbs.PolaronParams(1.0, 1.0, eta=0.2)
    ti = gibbs.free_energy_thermo_integration(p, np.linspace(0, 1, 8), np.random.default_rng(21))
    rw, rw_se = gibbs.free_energy_reweighting(p, 20_000, np.random.default_rng(22))
    assert ti.g >= 0
    # the trapezoid rule in beta adds a small deterministic error on top of the noise
    assert within(ti.g, rw, math.hypot(ti.stderr, rw_se))
    assert ti.table_csv().splitlines()[0] == "beta,E_H,stderr"


def test_trapezoid_weights():
    assert np.allclose(gibbs.trapezoid_weights([0, 0.5, 1]), [0.25, 0.5, 0.25])


# --- F_eps -------------------------------------------------------------------------------

def test_F_constant_path():
    dt, eps, eta = 1e-3, 1.0, 0.05
    pos = np.zeros((6001, 3))
    value, tail = gibbs.empirical_F_epsilon(pos, dt, eps, eta)
    assert value == pytest.approx((1 - math.exp(-6.0)) / eta, rel=1e-6)
    assert tail == pytest.approx(math.exp(-6.0) / eta)


def test_F_preconditions():
    line = np.outer(np.arange(6001) * 1e-3, [1.0, 0.0, 0.0])
    with pytest.raises(SingularityError):
        gibbs.empirical_F_epsilon(line, 1e-3, 1.0, eta=0.0)
    with pytest.raises(TruncationError):
        gibbs.empirical_F_epsilon(line[:1000], 1e-3, 1.0)


def test_F_brownian_seed_stability():
    means = []
    for seed in (1, 2):
        r = np.random.default_rng(seed)
        vals = []
        for _ in range(1000):
            pos = np.vstack([np.zeros(3), np.cumsum(math.sqrt(0.01) * r.standard_normal((800, 3)), axis=0)])
            vals.append(gibbs.empirical_F_epsilon(pos, 0.01, 1.0)[0])
        vals = np.array(vals)
        assert np.all(np.isfinite(vals))
        means.append((vals.mean(), vals.std() / math.sqrt(vals.size)))
    (a, sa), (b, sb) = means
    assert within(a, b, math.hypot(sa, sb))


# --- truncation bound and the smoothed power ----------------------------------------------

def test_truncation_bound_and_decay():
    x = np.linspace(1e-3, 10, 2000)
    for eta in (1.0, 0.1, 0.01):
        ok, c_star, values = gibbs.truncation_bound_check(eta, x)
        assert ok and c_star > 0
    far = gibbs.truncation_profile(0.1, np.array([1e2, 1e3, 1e4])) * np.array([1e2, 1e3, 1e4]) ** 1.5
    assert far[2] < far[1] < far[0] < 1e-3
    assert np.all(gibbs.truncation_profile(0.0, x) == 0)


def test_truncation_scaling_collapse():
    y = np.logspace(-2, 2, 500)
    phi = gibbs.truncation_profile(1.0, y)
    for eta in (0.1, 0.01):
        collapsed = eta * gibbs.truncation_profile(eta, eta * y)
        assert np.max(np.abs(collapsed - phi)) < 1e-10


@pytest.mark.parametrize("sigma", [0.1, 1.0])
def test_smoothed_power_peaks_at_zero(sigma):
    xs = np.linspace(0.0, 5 * sigma, 41)[1:]
    ok, at_zero, values = gibbs.sup_at_zero_check(sigma, xs)
    assert ok
    assert at_zero == pytest.approx(gibbs.gaussian_smoothed_power_at_zero(sigma), rel=1e-8)
    assert np.all(np.diff(values) < 0)


def test_scaling_identity(rng):
    (scaled, s1), (base, s2) = gibbs.scaling_identity_check(math.sqrt(2.0), 1.0, 3000, rng)
    assert within(scaled, base, math.hypot(s1, s2))
