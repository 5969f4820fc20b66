import math

import numpy as np
import pytest

from ghzbayes.adaptive import bmse
from ghzbayes.partitions import Partition, enumerate_partitions
from ghzbayes.prior import gaussian_prior
from ghzbayes.schemes import MCConfig, VaryingBlockConfig
from ghzbayes.unwind import (ExtendedPartition, UnwindAllocation,
                             adaptive_unwind_bmse, best_baseline_allocation,
                             best_unwind_partition, estimate_P, frame_pair,
                             nonadaptive_unwind_bmse, posterior_after_P,
                             rescale, stage_one_rms, unrescale, wrap_phase)


def test_wrap_phase_range_and_identity():
    x = np.array([0.0, math.pi - 1e-9, -math.pi, 3 * math.pi, -7.0, 6.9])
    wrapped = wrap_phase(x)
    assert np.all(wrapped >= -math.pi) and np.all(wrapped < math.pi)
    np.testing.assert_allclose(np.cos(wrapped), np.cos(x), atol=1e-12)
    np.testing.assert_allclose(np.sin(wrapped), np.sin(x), atol=1e-12)


def test_extended_partition_text_round_trip():
    text = "3x(1/8)+2x(1/4)+4x(1/2)+3x1+3x2+2x4"
    ep = ExtendedPartition.from_text(text)
    assert ep.to_text() == text
    assert ep.l_max == 3
    assert ep.n_slow == 9
    # no reuse: every slow sensor costs a qubit
    assert ep.n_total == 9 + 17
    # with reuse a qubit serves 2^l sensors of level l
    assert ExtendedPartition.from_text(text, reuse=True).n_total < ep.n_total


def test_rescale_example_accounting():
    # rescaled-frame counts (3,2,4,3,3,2) over k=0..5 at l_max=3
    part = Partition(((5, 2), (4, 3), (3, 3), (2, 4), (1, 2), (0, 3)))
    ep = unrescale(part, 3)
    assert ep.l_max == 3
    assert ep.fast.to_text() == "2x4+3x2+3x1"
    assert dict(ep.slow) == {3: 3, 2: 2, 1: 4}
    assert ep.n_total == 26
    res = rescale(ep, 3)
    assert res.partition == part
    assert res.scale_factor == 64.0
    assert res.prior_scale == 0.125
    assert unrescale(part, 3, reuse=True).n_total == 20


def test_rescale_rejects_deep_slow_levels():
    ep = ExtendedPartition.from_text("1x(1/4)+1x1")
    with pytest.raises(ValueError):
        rescale(ep, 1)


def test_rescaling_identity_on_random_triples():
    rng = np.random.default_rng(12)
    for _ in range(12):
        l_max = int(rng.integers(0, 3))
        n_prime = int(rng.integers(3, 7)) * 2 ** l_max
        parts = [p for p in enumerate_partitions(n_prime) if p.n_blocks <= 5]
        part = parts[int(rng.integers(0, len(parts)))]
        try:
            ep = unrescale(part, l_max)
        except ValueError:
            continue
        delta_phi = float(rng.uniform(0.3, 2.0)) * 2 ** l_max
        orig, resc = frame_pair(ep, l_max, delta_phi,
                                rotations=rng.normal(0.0, 0.5, 2 ** sum(
                                    m for _, m in part.blocks) - 1))
        ratio = bmse(orig) / bmse(resc)
        assert ratio == pytest.approx(4.0 ** l_max, rel=1e-10)


def test_estimate_P_on_exact_fractions():
    # deepest level unwrapped: pick enough levels that |phi / 2^levels| < pi
    for phi, levels, expected in ((6.9, 2, 1), (-7.0, 2, -1), (0.3, 1, 0),
                                  (13.0, 3, 2)):
        betas = np.array([wrap_phase(np.array([phi / 2 ** j]))[0]
                          for j in range(levels)] + [phi / 2 ** levels])
        assert estimate_P(betas.reshape(-1, 1), levels)[0] == expected


def test_estimate_P_single_noisy_level_unwinds_exactly():
    """With noise only at the top, the unwound estimate equals phi + noise."""
    rng = np.random.default_rng(4)
    phi = rng.uniform(-10.0, 10.0, 20_000)
    eps = rng.uniform(-0.49 * math.pi, 0.49 * math.pi, phi.size)
    betas = np.vstack([wrap_phase(phi + eps), phi / 2.0])
    unwound = betas[0] + 2.0 * math.pi * estimate_P(betas, 1)
    np.testing.assert_allclose(unwound, phi + eps, atol=1e-9)


def test_estimate_P_simultaneous_third_pi_noise():
    """Noise under pi/3 at every level keeps each halving correction exact,
    so the top estimate unwinds to phi + top-level noise."""
    rng = np.random.default_rng(9)
    levels = 3
    radius = math.pi / 3 * 0.99
    # keep the deepest level unwrapped: |phi| / 2^levels + radius < pi
    phi = rng.uniform(-16.0, 16.0, 20_000)
    betas = np.empty((levels + 1, phi.size))
    noise0 = rng.uniform(-radius, radius, phi.size)
    betas[0] = wrap_phase(phi + noise0)
    for j in range(1, levels):
        betas[j] = wrap_phase(phi / 2 ** j
                              + rng.uniform(-radius, radius, phi.size))
    betas[levels] = phi / 2 ** levels + rng.uniform(-radius, radius, phi.size)
    unwound = betas[0] + 2.0 * math.pi * estimate_P(betas, levels)
    np.testing.assert_allclose(unwound, phi + noise0, atol=1e-9)


def test_posterior_after_P_is_normalized_conditional():
    post = posterior_after_P(2.8, 1)
    assert abs(post.pweights.sum() - 1.0) < 1e-10
    assert post.support == (-math.pi, math.pi)
    # wide widths flatten toward the uniform density 1/(2 pi): the residual
    # variation across the window scales like (pi / delta_phi)^2
    wide = posterior_after_P(50.0, 0)
    assert wide.density.mean() == pytest.approx(1.0 / (2.0 * math.pi), rel=1e-3)
    assert np.ptp(wide.density) < 5e-3 * wide.density.mean()


def test_posterior_after_P_rejects_empty_bin():
    with pytest.raises(ValueError):
        posterior_after_P(0.1, 5)


def test_allocation_accounting_and_validation():
    alloc = UnwindAllocation(1, 8, VaryingBlockConfig(1), narrow_copies=1)
    assert alloc.n_slow == 32
    assert alloc.n_total == 32 + 2 + 9
    with pytest.raises(ValueError):
        UnwindAllocation(1, 0, VaryingBlockConfig(0), narrow_copies=1)
    with pytest.raises(ValueError):
        nonadaptive_unwind_bmse(10, gaussian_prior(1.4), alloc,
                                mc=MCConfig(samples=1000))


def test_stage_one_rms_shrinks_with_copies():
    prior = gaussian_prior(2.8)
    values = [stage_one_rms(prior, UnwindAllocation(2, m, VaryingBlockConfig(0)),
                            mc=MCConfig(samples=40_000, seed=2))
              for m in (2, 6, 12)]
    assert values[0] == pytest.approx(1.6977804634862164, rel=1e-9)
    assert values[1] == pytest.approx(0.5208638457785675, rel=1e-9)
    assert values[2] == pytest.approx(0.30805739832500356, rel=1e-9)
    assert values[0] > values[1] > values[2]


def test_adaptive_beats_nonadaptive_at_matched_allocation():
    prior = gaussian_prior(1.4)
    mc = MCConfig(samples=20_000, seed=5)
    adaptive = adaptive_unwind_bmse(
        44, prior, UnwindAllocation(1, 8, VaryingBlockConfig(1)), mc=mc)
    nonadaptive = nonadaptive_unwind_bmse(
        44, prior, UnwindAllocation(1, 8, VaryingBlockConfig(1),
                                    narrow_copies=1), mc=mc)
    assert adaptive.value == pytest.approx(0.05532483376366831, rel=1e-9)
    assert nonadaptive.value == pytest.approx(0.12159796784801827, rel=1e-9)
    gap = nonadaptive.value - adaptive.value
    spread = math.hypot(adaptive.standard_error, nonadaptive.standard_error)
    assert gap > 3.0 * spread


def test_best_unwind_partition_wide_prior_needs_no_slow_atoms():
    prior = gaussian_prior(0.7, max_frequency=10.0)
    ep, value = best_unwind_partition(
        10, prior, optimizer_kwargs={"restarts": 2, "seed": 0,
                                     "max_steps": 400})
    assert ep.l_max == 0
    assert ep.slow == ()
    assert 0.0 < value < 0.49


def test_best_baseline_allocation_fits_budget():
    prior = gaussian_prior(1.4)
    alloc, result = best_baseline_allocation(
        30, prior, protocol="adaptive", copy_grid=(4, 6),
        mc=MCConfig(samples=8_000, seed=1))
    assert alloc.n_total <= 30
    assert result.value > 0.0
