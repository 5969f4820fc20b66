import math

import numpy as np
import pytest
from scipy.stats import binom

from ghzbayes.errors import BudgetExceeded
from ghzbayes.prior import gaussian_prior, uniform_prior
from ghzbayes.schemes import (FixedBlockConfig, MCConfig, VaryingBlockConfig,
                              _binom_pmf, bit_by_bit_estimate, css_bmse,
                              css_statistics, fixed_block_bmse,
                              fixed_block_outcome_probs, fixed_block_prior,
                              fixed_block_rbmse_prediction, ghz_parity_bmse,
                              metrological_gain_db, plateau_hl, plateau_sql,
                              qcrb_bound, sine_qft_check,
                              sine_qft_distribution, solve_fixed_block_M,
                              varying_block_bmse, varying_block_plan,
                              varying_block_prior)
from ghzbayes.partitions import Partition


def test_binom_pmf_matches_scipy_and_edge_cases():
    x = np.arange(9)
    for p in (0.0, 0.3, 1.0):
        np.testing.assert_allclose(_binom_pmf(x, 8, p), binom.pmf(x, 8, p),
                                   atol=1e-14)


def test_css_statistics_matches_direct_wrap_summed_integral():
    prior = gaussian_prior(0.7)
    stats = css_statistics(12, prior)
    # independent assembly: dense grid over +-6 sigma, outcomes folded by hand
    grid = np.linspace(-4.2, 4.2, 120_001)
    w = np.exp(-0.5 * (grid / 0.7) ** 2)
    w /= w.sum()
    q = np.sin(0.5 * grid + 0.25 * math.pi) ** 2
    pmf = _binom_pmf(np.arange(13)[:, None], 12, q[None, :])
    b = pmf @ w
    a = pmf @ (w * grid)
    direct = float(w @ grid ** 2 - np.sum(a ** 2 / b))
    assert stats.bmse == pytest.approx(direct, rel=1e-5)
    assert stats.bmse + stats.variance_reduction == pytest.approx(
        stats.prior_second_moment, rel=1e-12)


def test_css_bmse_frozen_reference():
    assert css_bmse(21, gaussian_prior(0.7)) == pytest.approx(
        0.056229883046173046, rel=1e-12)


def test_css_bmse_improves_with_atoms():
    prior = gaussian_prior(0.7)
    values = [css_bmse(n, prior) for n in (1, 4, 16, 64)]
    assert all(b > a for a, b in zip(values[1:], values))


def test_ghz_closed_form_matches_numeric_quadrature():
    for n, w in ((5, 0.3), (30, 0.08), (3, 0.7)):
        prior = gaussian_prior(w, max_frequency=float(n))
        closed = ghz_parity_bmse(n, prior)
        numeric = ghz_parity_bmse(n, prior, numeric=True)
        assert abs(closed - numeric) < 1e-8


def test_fixed_block_solver_roots():
    # frozen roots of the copy-count equation, bracketed independently
    assert solve_fixed_block_M(1, exact=True) == pytest.approx(4.047527602252485, rel=1e-9)
    assert solve_fixed_block_M(2, exact=True) == pytest.approx(6.081028254621301, rel=1e-9)
    assert solve_fixed_block_M(3, exact=True) == pytest.approx(7.699021323261111, rel=1e-9)
    assert FixedBlockConfig.for_k_max(2).m_copies == 6
    assert FixedBlockConfig.for_k_max(2).n_total == 42
    assert FixedBlockConfig.for_k_max(3) == FixedBlockConfig(3, 8)


def test_fixed_block_exact_agrees_with_mc():
    cfg = FixedBlockConfig.for_k_max(1)
    prior = fixed_block_prior(cfg, 0.7)
    exact = fixed_block_bmse(cfg, prior)
    assert exact.exact and exact.standard_error == 0.0
    mc = fixed_block_bmse(cfg, prior, mc=MCConfig(samples=200_000, seed=3))
    assert not mc.exact
    assert abs(mc.value - exact.value) < 4.0 * mc.standard_error


def test_fixed_block_outcome_probs_normalized():
    cfg = FixedBlockConfig(1, 2)
    probs = fixed_block_outcome_probs(cfg, 0.4)
    assert probs.min() >= 0.0
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_bit_by_bit_decode_recovers_phase_in_range():
    cfg = FixedBlockConfig(2, 64)
    m = cfg.quadrature_copies
    for phi in (-0.6, 0.1, 0.45):
        counts = []
        for k in range(cfg.k_max + 1):
            p_cos = 0.5 * (1.0 + math.cos(2 ** k * phi))
            p_sin = 0.5 * (1.0 + math.sin(2 ** k * phi))
            counts.append((int(round(m * p_cos)), int(round(m * p_sin))))
        est = bit_by_bit_estimate(counts, cfg.m_copies)
        assert est == pytest.approx(phi, abs=0.06)


def test_varying_block_layout():
    cfg = VaryingBlockConfig(1)
    assert cfg.block_counts == ((1, 2), (0, 5))
    assert cfg.n_total == 9
    assert VaryingBlockConfig(2).n_total == 26
    assert VaryingBlockConfig(3).n_total == 63


def test_varying_exact_agrees_with_mc():
    cfg = VaryingBlockConfig(1)
    prior = varying_block_prior(cfg, 0.7)
    exact = varying_block_bmse(cfg, prior)
    assert exact.exact
    assert exact.value == pytest.approx(0.10991617424081468, rel=1e-10)
    mc = varying_block_bmse(cfg, prior, mc=MCConfig(samples=200_000, seed=3))
    assert abs(mc.value - exact.value) < 4.0 * mc.standard_error


def test_varying_plan_rejects_oversized_exact_request():
    cfg = VaryingBlockConfig(3)  # 26 steps
    prior = varying_block_prior(cfg, 0.7)
    with pytest.raises(BudgetExceeded):
        varying_block_bmse(cfg, prior)


def test_varying_plan_is_flat_tree():
    cfg = VaryingBlockConfig(1)
    prior = varying_block_prior(cfg, 0.7)
    plan = varying_block_plan(cfg, prior)
    assert plan.n_steps == cfg.n_steps
    assert plan.order[0] == 2.0 and plan.order[-1] == 1.0


def test_plateaus_monotone_and_ordered():
    widths = (0.5, 0.8, 1.2)
    hl = [plateau_hl(w) for w in widths]
    sql = [plateau_sql(w) for w in widths]
    assert all(b > a for a, b in zip(hl, hl[1:]))
    assert all(b > a for a, b in zip(sql, sql[1:]))
    for h, s in zip(hl, sql):
        assert h < s


def test_qcrb_bound_positive_and_tightens():
    assert qcrb_bound(Partition.from_text("1x8")) < qcrb_bound(
        Partition.from_text("8x1"))


def test_gain_db_identity():
    for g in (0.5, 1.0, 2.29):
        assert metrological_gain_db(g) == pytest.approx(
            10.0 * math.log10(g), abs=1e-12)


def test_sine_qft_distribution_normalized():
    pmf = sine_qft_distribution(64, 0.37)
    assert pmf.min() >= 0.0
    assert pmf.sum() == pytest.approx(1.0, abs=1e-12)


def test_sine_qft_localizes_at_quarter_turn():
    mean, var = sine_qft_check(200, math.pi / 2)
    assert abs(mean - 50.0) < 1.0
    assert var == pytest.approx(0.25, rel=0.10)


def test_rbmse_prediction_positive_and_decreasing():
    values = [fixed_block_rbmse_prediction(n) for n in (12, 42, 120)]
    assert all(v > 0 for v in values)
    assert values[0] > values[1] > values[2]


def test_css_uniform_prior_supported():
    prior = uniform_prior(-math.pi / 2, math.pi / 2)
    value = css_bmse(9, prior)
    assert 0.0 < value < prior.delta_phi ** 2
