import math

import numpy as np
import pytest

from ghzbayes.oqi import (oqi_prior_for, optimal_L, phase_kernels, propagate,
                          sine_state, solve_oqi)
from ghzbayes.partitions import enumerate_partitions, frequency_amplitudes
from ghzbayes.prior import gaussian_prior


def test_sine_state_normalized_and_positive():
    for n in (1, 5, 200):
        amps = sine_state(n)
        assert amps.size == n + 1
        assert abs(amps @ amps - 1.0) < 1e-12
        assert np.all(amps > 0.0)


def test_propagate_is_unitary_phase_evolution():
    amps = sine_state(4).astype(complex)
    rho = np.outer(amps, amps.conj())
    rho_phi = propagate(rho, 0.3)
    assert abs(np.trace(rho_phi) - 1.0) < 1e-12
    # matrix element (m, n) picks up exp(-i (m - n) phi)
    expected = rho[3, 1] * np.exp(-1j * 2 * 0.3)
    assert rho_phi[3, 1] == pytest.approx(expected, abs=1e-12)


def test_phase_kernels_match_direct_quadrature():
    prior = gaussian_prior(0.5, max_frequency=6.0)
    kern = phase_kernels(prior, 5)
    w = prior.pweights
    for m in range(5):
        for n in range(5):
            t0 = w @ np.exp(-1j * (m - n) * prior.nodes)
            t1 = w @ (prior.nodes * np.exp(-1j * (m - n) * prior.nodes))
            assert kern.t0[m, n] == pytest.approx(t0, abs=1e-12)
            assert kern.t1[m, n] == pytest.approx(t1, abs=1e-12)


def test_optimal_L_beats_prior_variance():
    prior = gaussian_prior(0.7, max_frequency=4.0)
    amps = sine_state(3).astype(complex)
    rho = np.outer(amps, amps.conj())
    solve = optimal_L(rho, prior)
    assert 0.0 < solve.bmse < 0.49
    assert np.allclose(solve.L, solve.L.conj().T, atol=1e-12)


def test_optimal_L_is_stationary():
    """Perturbing the optimal estimator observable only increases the BMSE."""
    prior = gaussian_prior(0.7, max_frequency=4.0)
    amps = sine_state(3).astype(complex)
    rho = np.outer(amps, amps.conj())
    kern = phase_kernels(prior, 4)
    solve = optimal_L(rho, prior)
    m2 = float(prior.pweights @ prior.nodes ** 2)

    def risk(L):
        # E[(phi - L)^2] = m2 - 2 Re tr(L T1) + tr(L T0 L) for pure-state rho
        t0 = kern.t0 * rho
        t1 = kern.t1 * rho
        return m2 - 2.0 * np.real(np.trace(L @ t1)) + np.real(
            np.einsum("ij,jk,ki->", L, t0, L))

    base = risk(solve.L)
    assert base == pytest.approx(solve.bmse, rel=1e-9)
    rng = np.random.default_rng(1)
    for _ in range(5):
        h = rng.standard_normal((4, 4))
        h = (h + h.T) / 2.0
        assert risk(solve.L + 1e-3 * h) >= base - 1e-12


def test_solve_oqi_converges_and_is_monotone():
    prior = oqi_prior_for(8, 0.7)
    sol = solve_oqi(8, prior)
    assert sol.converged
    assert sol.bmse == pytest.approx(0.066156639610643497, rel=1e-9)
    trace = np.asarray(sol.bmse_trace)
    assert np.all(np.diff(trace) <= 1e-12)


def test_solve_oqi_dominates_partition_bounds():
    prior = gaussian_prior(0.53, max_frequency=12.0)
    oqi = solve_oqi(12, oqi_prior_for(12, 0.53)).bmse
    kern = phase_kernels(prior, 13)
    for part in enumerate_partitions(12):
        amps = frequency_amplitudes(part).amplitudes.astype(complex)
        rho = np.outer(amps, amps.conj())
        bound = optimal_L(rho, prior, kernels=kern).bmse
        assert bound >= oqi - 1e-10


def test_solve_oqi_rejects_bad_input():
    with pytest.raises(ValueError):
        solve_oqi(0, gaussian_prior(0.7))
