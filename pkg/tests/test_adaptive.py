import math
from dataclasses import replace

import numpy as np
import pytest

from ghzbayes.adaptive import (MAX_PLAN_STEPS, MeasurementPlan, bayes_estimators,
                               bmse, bmse_gradient, bmse_with_estimators,
                               branch_probability, mse_curve, new_plan,
                               optimize_plan, rank_partitions,
                               select_best_partition, staggered_rotations)
from ghzbayes.errors import BudgetExceeded
from ghzbayes.partitions import Partition
from ghzbayes.prior import gaussian_prior


@pytest.fixture(scope="module")
def small_plan():
    prior = gaussian_prior(0.7, max_frequency=4.0)
    plan = new_plan(Partition.from_text("1x4+1x2+1x1"), prior)
    rng = np.random.default_rng(7)
    return replace(plan, rotations=plan.rotations + rng.normal(0.0, 0.2, plan.rotations.size))


def _brute_branch_probability(plan: MeasurementPlan, branch, phi):
    """Chain-rule product of parity factors, assembled independently."""
    p = np.ones_like(phi)
    prefix = ""
    for level, outcome in enumerate(branch):
        f = plan.order[level]
        rot = plan.rotations[plan.rotation_index(prefix)]
        sign = 1.0 if outcome == "0" else -1.0
        p = p * 0.5 * (1.0 + sign * np.cos(f * (phi - rot)))
        prefix += outcome
    return p


def test_branch_probabilities_complete_and_match_brute_force(small_plan):
    phi = np.linspace(-1.5, 1.5, 7)
    total = np.zeros_like(phi)
    for idx in range(2 ** small_plan.n_steps):
        branch = format(idx, f"0{small_plan.n_steps}b")
        lib = branch_probability(small_plan, branch, phi)
        brute = _brute_branch_probability(small_plan, branch, phi)
        np.testing.assert_allclose(lib, brute, atol=1e-12)
        total += lib
    np.testing.assert_allclose(total, 1.0, atol=1e-12)


def test_bmse_matches_direct_posterior_assembly(small_plan):
    prior = small_plan.prior
    w = prior.pweights
    m2 = float(w @ prior.nodes ** 2)
    acc = 0.0
    for idx in range(2 ** small_plan.n_steps):
        branch = format(idx, f"0{small_plan.n_steps}b")
        p = _brute_branch_probability(small_plan, branch, prior.nodes)
        b = float(p @ w)
        a = float(p @ (w * prior.nodes))
        if b > 1e-300:
            acc += a * a / b
    assert bmse(small_plan) == pytest.approx(m2 - acc, rel=1e-12)


def test_gradient_matches_finite_differences(small_plan):
    value, grad = bmse_gradient(small_plan)
    assert value == pytest.approx(bmse(small_plan), rel=1e-12)
    rng = np.random.default_rng(3)
    for idx in rng.choice(grad.size, size=4, replace=False):
        h = 1e-6
        # plan construction freezes its rotation array, so copy per shift
        rot_up = small_plan.rotations.copy()
        rot_up[idx] += h
        rot_down = small_plan.rotations.copy()
        rot_down[idx] -= h
        up = bmse(replace(small_plan, rotations=rot_up))
        down = bmse(replace(small_plan, rotations=rot_down))
        assert grad[idx] == pytest.approx((up - down) / (2 * h), abs=1e-6)


def test_estimators_are_bayes_optimal(small_plan):
    table = bayes_estimators(small_plan)
    base = bmse_with_estimators(small_plan, table.estimators)
    assert base == pytest.approx(bmse(small_plan), rel=1e-12)
    rng = np.random.default_rng(11)
    for _ in range(5):
        bumped = table.estimators + rng.normal(0.0, 0.05, table.estimators.shape)
        assert bmse_with_estimators(small_plan, bumped) >= base - 1e-12


def test_mse_curve_integrates_to_bmse(small_plan):
    prior = small_plan.prior
    curve = mse_curve(small_plan, prior.nodes)
    integral = float(prior.pweights @ curve)
    assert integral == pytest.approx(bmse(small_plan), rel=1e-10)


def test_staggered_rotations_shape():
    order = (4.0, 2.0, 1.0)
    rot = staggered_rotations(order)
    assert rot.size == 2 ** len(order) - 1


def test_optimize_plan_never_worse_and_deterministic():
    prior = gaussian_prior(0.7, max_frequency=4.0)
    plan = new_plan(Partition.from_text("1x4+1x2+1x1"), prior)
    res1 = optimize_plan(plan, restarts=2, seed=0, max_steps=300)
    res2 = optimize_plan(plan, restarts=2, seed=0, max_steps=300)
    assert res1.bmse == res2.bmse
    assert res1.bmse <= res1.initial_bmse + 1e-15
    assert res1.bmse <= bmse(plan)


def test_plan_json_round_trip(small_plan):
    data = small_plan.to_json_dict()
    clone = MeasurementPlan.from_json_dict(data)
    assert clone.order == small_plan.order
    np.testing.assert_allclose(clone.rotations, small_plan.rotations)
    assert bmse(clone) == pytest.approx(bmse(small_plan), rel=1e-12)


def test_rank_partitions_orders_by_bound():
    prior = gaussian_prior(0.53, max_frequency=8.0)
    ranking, exhausted = rank_partitions(8, prior)
    assert not exhausted
    bounds = [b for _, b in ranking]
    assert bounds == sorted(bounds)
    totals = {p.n_total for p, _ in ranking}
    assert totals == {8}


def test_rank_partitions_budget_flag():
    prior = gaussian_prior(0.53, max_frequency=8.0)
    ranking, exhausted = rank_partitions(8, prior, budget=3)
    assert exhausted
    assert len(ranking) == 3


def test_select_best_partition_modes_agree_on_winner():
    prior = gaussian_prior(0.7, max_frequency=8.0)
    kwargs = {"optimizer_kwargs": {"restarts": 2, "seed": 0, "max_steps": 400}}
    top1 = select_best_partition(6, prior, mode="rank", **kwargs)
    topk = select_best_partition(6, prior, mode="optimize-top-k", top_k=3, **kwargs)
    assert topk.bmse <= top1.bmse + 1e-12
    assert topk.partition.n_total == 6


def test_plan_step_cap_enforced():
    prior = gaussian_prior(0.7, max_frequency=2.0)
    with pytest.raises(BudgetExceeded):
        new_plan(Partition.from_text(f"{MAX_PLAN_STEPS + 1}x1"), prior)
