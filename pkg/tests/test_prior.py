import math

import numpy as np
import pytest

from ghzbayes.prior import (PriorGrid, composite_gauss_legendre,
                            default_node_count, gaussian_prior,
                            sample_phases, uniform_prior)


def test_quadrature_integrates_oscillations_exactly():
    nodes, weights = composite_gauss_legendre(-math.pi, math.pi, 512)
    for f in (1.0, 7.0, 23.0):
        # analytic: integral of cos(f phi) over a full period is 0
        assert abs(weights @ np.cos(f * nodes)) < 1e-12
    assert abs(weights @ np.ones_like(nodes) - 2.0 * math.pi) < 1e-12


def test_default_node_count_scales_with_frequency():
    base = default_node_count(2.0 * math.pi, 1.0)
    assert base == 512
    fine = default_node_count(2.0 * math.pi, 400.0)
    assert fine > base
    assert default_node_count(4.0 * math.pi, 400.0) > fine


def test_gaussian_prior_moments():
    for w in (0.2, 0.7, 2.8):
        prior = gaussian_prior(w)
        assert abs(prior.pweights.sum() - 1.0) < 1e-10
        m1 = prior.pweights @ prior.nodes
        m2 = prior.pweights @ prior.nodes ** 2
        assert abs(m1) < 1e-12
        # +-6 sigma truncation shifts the variance by < 1e-7 relative
        assert m2 == pytest.approx(w * w, rel=1e-7)


def test_gaussian_prior_characteristic_function():
    prior = gaussian_prior(0.7, max_frequency=16.0)
    for f in (1.0, 4.0, 8.0):
        value = prior.pweights @ np.cos(f * prior.nodes)
        # the +-6 sigma truncation contributes ~2e-9 before quadrature error
        assert value == pytest.approx(math.exp(-0.5 * (f * 0.7) ** 2), abs=1e-8)


def test_uniform_prior_density_and_width():
    prior = uniform_prior(-1.0, 3.0)
    assert prior.support == (-1.0, 3.0)
    assert abs(prior.pweights.sum() - 1.0) < 1e-12
    assert prior.delta_phi == pytest.approx(4.0 / math.sqrt(12.0), rel=1e-12)
    assert np.allclose(prior.density, 0.25)


def test_gaussian_prior_rejects_bad_width():
    with pytest.raises(ValueError):
        gaussian_prior(0.0)
    with pytest.raises(ValueError):
        gaussian_prior(-1.0)


def test_uniform_prior_rejects_empty_interval():
    with pytest.raises(ValueError):
        uniform_prior(1.0, 1.0)


def test_sample_phases_matches_prior_moments():
    rng = np.random.default_rng(0)
    for prior in (gaussian_prior(0.7), uniform_prior(-2.0, 2.0)):
        draws = sample_phases(prior, rng, 200_000)
        m2 = prior.pweights @ prior.nodes ** 2
        assert draws.mean() == pytest.approx(0.0, abs=4.0 * prior.delta_phi / math.sqrt(200_000))
        assert draws.var() == pytest.approx(m2, rel=0.02)
        lo, hi = prior.support
        assert draws.min() >= lo and draws.max() <= hi


def test_custom_grid_prior_roundtrip():
    nodes, weights = composite_gauss_legendre(-0.5, 0.5, 512)
    density = np.full_like(nodes, 1.0)
    grid = PriorGrid("uniform", 1.0 / math.sqrt(12.0), (-0.5, 0.5),
                     nodes, weights, density)
    assert abs(grid.pweights.sum() - 1.0) < 1e-12
