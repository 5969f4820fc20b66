"""Dynamic-range extension with fractional-phase interrogations.

Slow sensors accumulate phi/2^l instead of phi and resolve the winding
number P of phi = 2*pi*P + theta.  A change of variables maps mixed
slow/fast layouts onto plain GHZ-block partitions, so the partition
ranking and rotation optimizer apply unchanged in the rescaled frame.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import erf

from . import adaptive
from .adaptive import MeasurementPlan, staggered_rotations
from .errors import BudgetExceeded
from .partitions import Partition
from .prior import PriorGrid, composite_gauss_legendre, default_node_count, \
    gaussian_density, gaussian_prior, sample_phases, uniform_prior
from .schemes import BmseResult, MCConfig, VaryingBlockConfig, _ErrMoments, \
    _mc_chunks, _varying_steps, varying_block_bmse, varying_block_prior

_TINY = 1e-300

# Deepest fractional level considered by the partition sweep.
MAX_SLOW_LEVEL = 6


def wrap_phase(x):
    """Fold onto [-pi, pi), half-open at +pi; the single modular convention."""
    return (np.asarray(x, dtype=float) + math.pi) % (2.0 * math.pi) - math.pi


# ---------------------------------------------------------------------------
# slow/fast layouts


@dataclass(frozen=True)
class ExtendedPartition:
    """GHZ-block partition extended with slow sensors.

    slow lists (l, copies): copies sensors each accumulating phi / 2^l,
    l >= 1, stored deepest level first.  fast is an ordinary partition.
    With reuse a physical qubit serves as 2^l slow sensors, so the slow
    part costs ceil(sum copies / 2^l) qubits (pooled); without reuse each
    slow sensor is its own qubit.
    """

    slow: tuple
    fast: Partition
    reuse: bool = False

    def __post_init__(self):
        slow = tuple((int(l), int(m)) for l, m in self.slow)
        ls = [l for l, _ in slow]
        if any(l < 1 for l in ls):
            raise ValueError(f"slow exponents must be >= 1: {ls}")
        if sorted(set(ls), reverse=True) != ls:
            raise ValueError(f"slow exponents must be distinct and descending: {ls}")
        if any(m < 1 for _, m in slow):
            raise ValueError("slow copy counts must be >= 1")
        object.__setattr__(self, "slow", slow)

    @property
    def l_max(self) -> int:
        return self.slow[0][0] if self.slow else 0

    @property
    def n_slow(self) -> int:
        """Slow sensor count (= slow qubit cost without reuse)."""
        return sum(m for _, m in self.slow)

    @property
    def n_total(self) -> int:
        fast = self.fast.n_total
        if not self.reuse:
            return self.n_slow + fast
        lm = self.l_max
        units = sum(m * 2 ** (lm - l) for l, m in self.slow)
        return fast + -(-units // 2 ** lm)

    def to_text(self) -> str:
        """E.g. '3x(1/8)+2x(1/4)+4x(1/2)+3x1+3x2+2x4' (ascending frequency)."""
        slow = [f"{m}x(1/{2 ** l})" for l, m in self.slow]
        fast = [f"{m}x{2 ** k}" for k, m in reversed(self.fast.blocks)]
        return "+".join(slow + fast)

    @classmethod
    def from_text(cls, text: str, reuse: bool = False) -> "ExtendedPartition":
        slow: dict[int, int] = {}
        fast: dict[int, int] = {}
        for token in text.strip().split("+"):
            mo = re.fullmatch(r"\s*(\d+)\s*x\s*\(\s*1\s*/\s*(\d+)\s*\)\s*", token)
            if mo is not None:
                m, den = int(mo.group(1)), int(mo.group(2))
                if den < 2 or den & (den - 1):
                    raise ValueError(f"slow denominator {den} is not a power of two")
                l = den.bit_length() - 1
                slow[l] = slow.get(l, 0) + m
                continue
            mo = re.fullmatch(r"\s*(\d+)\s*x\s*(\d+)\s*", token)
            if mo is None:
                raise ValueError(f"bad block token {token!r} in {text!r}")
            m, size = int(mo.group(1)), int(mo.group(2))
            if size < 1 or size & (size - 1):
                raise ValueError(f"block size {size} is not a power of two")
            k = size.bit_length() - 1
            fast[k] = fast.get(k, 0) + m
        if not fast:
            raise ValueError(f"no fast blocks in {text!r}")
        return cls(tuple(sorted(slow.items(), reverse=True)),
                   Partition(tuple(sorted(fast.items(), reverse=True))), reuse)


@dataclass(frozen=True)
class RescaleResult:
    """Pure-GHZ image of an extended partition under phi -> phi / 2^l_max."""

    partition: Partition
    scale_factor: float
    prior_scale: float
    n_prime: int


def rescale(ep: ExtendedPartition, l_max: int) -> RescaleResult:
    """Map slow level l to block exponent l_max - l and fast k to k + l_max.

    The estimation problems are equivalent: BMSE(original prior width) =
    scale_factor * BMSE(rescaled, prior width * prior_scale).
    """
    if l_max < 0:
        raise ValueError(f"l_max must be >= 0, got {l_max}")
    if ep.slow and ep.l_max > l_max:
        raise ValueError(f"slow exponent {ep.l_max} exceeds l_max={l_max}")
    counts: dict[int, int] = {}
    for l, m in ep.slow:
        k = l_max - l
        counts[k] = counts.get(k, 0) + m
    for k, m in ep.fast.blocks:
        counts[k + l_max] = counts.get(k + l_max, 0) + m
    part = Partition(tuple(sorted(counts.items(), reverse=True)))
    return RescaleResult(part, float(4 ** l_max), float(2.0 ** -l_max), part.n_total)


def unrescale(partition: Partition, l_max: int, reuse: bool = False) -> ExtendedPartition:
    """Inverse of rescale: blocks below 2^l_max qubits become slow sensors."""
    if l_max < 0:
        raise ValueError(f"l_max must be >= 0, got {l_max}")
    slow: list = []
    fast: list = []
    for k, m in partition.blocks:
        if k >= l_max:
            fast.append((k - l_max, m))
        else:
            slow.append((l_max - k, m))
    if not fast:
        raise ValueError("rescaled partition has no block of at least 2^l_max qubits")
    return ExtendedPartition(tuple(sorted(slow, reverse=True)),
                             Partition(tuple(fast)), reuse)


def frame_pair(ep: ExtendedPartition, l_max: int, delta_phi: float, *,
               rotations=None, node_count: int | None = None):
    """Measurement plans for both frames sharing one rotation schedule.

    Returns (original_plan, rescaled_plan).  The original plan senses
    fractional frequencies 2^-l directly under the wide prior; its
    partition field carries the rescaled block inventory, order is
    authoritative.  Rotations are given in the original frame.
    """
    res = rescale(ep, l_max)
    order = []
    for l, m in ep.slow:
        order.extend([2.0 ** -l] * m)
    for k, m in ep.fast.blocks:
        order.extend([float(2 ** k)] * m)
    order.sort(reverse=True)
    m_steps = len(order)
    if m_steps > adaptive.MAX_PLAN_STEPS:
        raise BudgetExceeded(
            f"{m_steps} steps exceed the exact cap {adaptive.MAX_PLAN_STEPS}")
    if rotations is None:
        rotations = staggered_rotations(order)
    rotations = np.asarray(rotations, dtype=float)
    top = max(order)
    if node_count is None:
        node_count = max(512, default_node_count(12.0 * delta_phi, top))
    orig_prior = gaussian_prior(delta_phi, node_count)
    orig = MeasurementPlan(res.partition, tuple(order), rotations, orig_prior)
    scale = res.prior_scale
    resc_prior = gaussian_prior(delta_phi * scale, node_count)
    resc_order = tuple(f / scale for f in order)
    resc = MeasurementPlan(res.partition, resc_order, rotations * scale, resc_prior)
    return orig, resc


# ---------------------------------------------------------------------------
# winding-number recursion


def estimate_P(betas, l_max: int):
    """Winding number from per-level folded estimates beta_j of phi / 2^j.

    betas[j] for j = 0..l_max; the deepest level is assumed unwrapped
    (P_{l_max} = 0) and each halving step adds a rounded integer
    correction (2 beta_j - beta_{j-1}) / 2pi.  Exact when each beta_j is
    within pi/3 of its noiseless value (pi/2 for a single noisy level).
    Accepts a vector per level and returns an integer array.
    """
    arr = np.asarray(betas, dtype=float)
    b = arr[:, None] if arr.ndim == 1 else arr
    if b.ndim != 2 or b.shape[0] != l_max + 1:
        raise ValueError(f"need {l_max + 1} levels of estimates, got shape {arr.shape}")
    if not np.all(np.isfinite(b)):
        raise ValueError("estimates must be finite")
    p = np.zeros(b.shape[1], dtype=np.int64)
    for j in range(l_max, 0, -1):
        corr = np.rint((2.0 * b[j] - b[j - 1]) / (2.0 * math.pi)).astype(np.int64)
        p = 2 * p + corr
    return int(p[0]) if arr.ndim == 1 else p


def posterior_after_P(delta_phi: float, p_m: int, *,
                      node_count: int | None = None,
                      max_frequency: float = 32.0) -> PriorGrid:
    """Conditional law of theta = phi - 2 pi P on [-pi, pi) given P = p_m.

    Truncated Gaussian; approaches the uniform density as delta_phi grows.
    """
    if delta_phi <= 0.0:
        raise ValueError(f"delta_phi must be positive, got {delta_phi}")
    if node_count is None:
        node_count = default_node_count(2.0 * math.pi, max_frequency)
    nodes, weights = composite_gauss_legendre(-math.pi, math.pi, node_count)
    s = math.sqrt(2.0) * delta_phi
    norm = 0.5 * (erf((2.0 * math.pi * p_m + math.pi) / s)
                  - erf((2.0 * math.pi * p_m - math.pi) / s))
    if norm < 1e-300:
        raise ValueError(f"no prior mass in winding bin {p_m} at width {delta_phi}")
    x = nodes + 2.0 * math.pi * p_m
    density = np.exp(-0.5 * (x / delta_phi) ** 2) \
        / (delta_phi * math.sqrt(2.0 * math.pi) * norm)
    return PriorGrid("unwound", delta_phi, (-math.pi, math.pi),
                     nodes, weights, density)


# ---------------------------------------------------------------------------
# baseline unwinding protocols


@dataclass(frozen=True)
class UnwindAllocation:
    """Qubit split for the baseline unwinding protocols.

    Levels j = 0..slow_levels each get slow_copies sensor pairs (one cosine
    plus one sine readout per pair) at fraction 2^-j.  narrow_copies 2-qubit
    GHZ states halve the post-P interval; the theta stage is the varying
    blocks schedule.  slow_copies = 0 degenerates to the plain theta stage.
    """

    slow_levels: int
    slow_copies: int
    varying: VaryingBlockConfig
    narrow_copies: int = 0
    reuse: bool = False

    def __post_init__(self):
        if self.slow_levels < 0:
            raise ValueError(f"slow_levels must be >= 0, got {self.slow_levels}")
        if self.slow_copies < 0 or self.narrow_copies < 0:
            raise ValueError("copy counts must be >= 0")
        if self.slow_copies == 0 and self.narrow_copies:
            raise ValueError("narrowing stage without a winding stage")

    @property
    def n_slow(self) -> int:
        """Qubit cost of the winding stage."""
        if self.slow_copies == 0:
            return 0
        units = 2 * self.slow_copies
        if not self.reuse:
            return units * (self.slow_levels + 1)
        pooled = sum(units * 2 ** (self.slow_levels - j)
                     for j in range(self.slow_levels + 1))
        return -(-pooled // 2 ** self.slow_levels)

    @property
    def n_total(self) -> int:
        return self.n_slow + 2 * self.narrow_copies + self.varying.n_total


def _simulate_winding(alloc: UnwindAllocation, phi: np.ndarray, rng) -> np.ndarray:
    """Dual-quadrature readouts at each fraction, then the P recursion."""
    m = alloc.slow_copies
    betas = np.empty((alloc.slow_levels + 1, phi.size))
    for j in range(alloc.slow_levels + 1):
        frac = phi / 2 ** j
        nx = rng.binomial(m, 0.5 * (1.0 + np.cos(frac)))
        ny = rng.binomial(m, 0.5 * (1.0 + np.sin(frac)))
        betas[j] = np.arctan2(2.0 * ny / m - 1.0, 2.0 * nx / m - 1.0)
    return estimate_P(betas, alloc.slow_levels)


def _stage_rows(steps, grid: np.ndarray):
    return [np.cos(f * grid - theta) for f, theta in steps]


def _stage_estimates(steps, rows, est_prior: PriorGrid, psi: np.ndarray, rng):
    """Posterior-mean readout of the varying schedule at true phases psi."""
    w = est_prior.pweights
    like = np.ones((psi.size, est_prior.nodes.size))
    for (f, theta), row in zip(steps, rows):
        p_even = 0.5 + 0.5 * np.cos(f * psi - theta)
        outcome = np.where(rng.random(psi.size) < p_even, 1.0, -1.0)
        like *= 0.5 + 0.5 * outcome[:, None] * row[None, :]
    den = like @ w
    num = like @ (w * est_prior.nodes)
    return np.where(den > _TINY, num / np.maximum(den, _TINY), 0.0)


def _check_allocation(n_total: int, alloc: UnwindAllocation):
    """Allocations may idle qubits (schedule sizes are coarse), never exceed."""
    if alloc.n_total > n_total:
        raise ValueError(
            f"allocation uses {alloc.n_total} qubits, only {n_total} available")


def nonadaptive_unwind_bmse(n_total: int, prior: PriorGrid,
                            allocation: UnwindAllocation, *,
                            classification_error: float = 0.0,
                            mc: MCConfig | None = None) -> BmseResult:
    """Winding stage, ideal half-interval narrowing, then the theta stage.

    The two-qubit narrowing stage acts as one extra recursion level that
    senses 2 phi without noise, so the chain resolves phi to a width-pi
    interval; within it the varying schedule estimates the residual under
    a uniform prior.  classification_error is the rate at which the
    narrowing bit lands in an adjacent interval (0 = ideal); resolution
    mistakes anywhere in the chain are charged at their full cost.
    """
    _check_allocation(n_total, allocation)
    if not 0.0 <= classification_error < 1.0:
        raise ValueError(f"classification_error must lie in [0, 1): "
                         f"{classification_error}")
    if allocation.slow_copies == 0:
        return varying_block_bmse(allocation.varying, prior, mc=mc)
    if mc is None:
        mc = MCConfig()
    cfg = allocation.varying
    est_prior = uniform_prior(-math.pi / 2, math.pi / 2,
                              default_node_count(math.pi, float(2 ** cfg.k_max)))
    steps = _varying_steps(cfg, True)
    rows = _stage_rows(steps, est_prior.nodes)
    moments = _ErrMoments()
    for rng, size in _mc_chunks(mc):
        phi = sample_phases(prior, rng, size)
        m = allocation.slow_copies
        levels = allocation.slow_levels
        betas = np.empty((levels + 2, size))
        betas[0] = wrap_phase(2.0 * phi)
        for j in range(levels + 1):
            frac = phi / 2 ** j
            nx = rng.binomial(m, 0.5 * (1.0 + np.cos(frac)))
            ny = rng.binomial(m, 0.5 * (1.0 + np.sin(frac)))
            betas[j + 1] = np.arctan2(2.0 * ny / m - 1.0, 2.0 * nx / m - 1.0)
        half_windings = estimate_P(betas, levels + 1)
        if classification_error > 0.0:
            hits = rng.random(size) < classification_error
            half_windings = half_windings + hits * rng.choice((-1, 1), size)
        psi = phi - math.pi * half_windings
        est = _stage_estimates(steps, rows, est_prior, psi, rng)
        moments.add((est - psi) ** 2)
    return moments.result(mc)


def _pilot_config(mc: MCConfig) -> MCConfig:
    return replace(mc, samples=max(2, mc.samples // 4), target_relative_se=None)


def stage_one_rms(prior: PriorGrid, allocation: UnwindAllocation,
                  mc: MCConfig | None = None) -> float:
    """RMS error of the slow-sensor estimate 2 pi P + beta_0 of phi."""
    if allocation.slow_copies == 0:
        return math.sqrt(prior.variance())
    if mc is None:
        mc = MCConfig()
    moments = _ErrMoments()
    for rng, size in _mc_chunks(mc):
        phi = sample_phases(prior, rng, size)
        m = allocation.slow_copies
        betas = np.empty((allocation.slow_levels + 1, size))
        for j in range(allocation.slow_levels + 1):
            frac = phi / 2 ** j
            nx = rng.binomial(m, 0.5 * (1.0 + np.cos(frac)))
            ny = rng.binomial(m, 0.5 * (1.0 + np.sin(frac)))
            betas[j] = np.arctan2(2.0 * ny / m - 1.0, 2.0 * nx / m - 1.0)
        p_hat = estimate_P(betas, allocation.slow_levels)
        est = 2.0 * math.pi * p_hat + betas[0]
        moments.add((est - phi) ** 2)
    return math.sqrt(moments.result(mc).value)


def adaptive_unwind_bmse(n_total: int, prior: PriorGrid,
                         allocation: UnwindAllocation, *,
                         mc: MCConfig | None = None) -> BmseResult:
    """Slow sensors estimate phi outright; GHZ blocks refine the residual.

    The slow stage returns phi_est = 2 pi P + beta_0; a pilot run
    calibrates its RMS error, which becomes the Gaussian effective prior
    width for the varying schedule run on phi - phi_est.
    """
    _check_allocation(n_total, allocation)
    if allocation.narrow_copies:
        raise ValueError("adaptive unwinding has no narrowing stage")
    if allocation.slow_copies == 0:
        return varying_block_bmse(allocation.varying, prior, mc=mc)
    if mc is None:
        mc = MCConfig()
    width = stage_one_rms(prior, allocation, _pilot_config(mc))
    cfg = allocation.varying
    est_prior = varying_block_prior(cfg, width)
    steps = _varying_steps(cfg, True)
    rows = _stage_rows(steps, est_prior.nodes)
    moments = _ErrMoments()
    for rng, size in _mc_chunks(mc):
        phi = sample_phases(prior, rng, size)
        m = allocation.slow_copies
        betas = np.empty((allocation.slow_levels + 1, size))
        for j in range(allocation.slow_levels + 1):
            frac = phi / 2 ** j
            nx = rng.binomial(m, 0.5 * (1.0 + np.cos(frac)))
            ny = rng.binomial(m, 0.5 * (1.0 + np.sin(frac)))
            betas[j] = np.arctan2(2.0 * ny / m - 1.0, 2.0 * nx / m - 1.0)
        p_hat = estimate_P(betas, allocation.slow_levels)
        phi_est = 2.0 * math.pi * p_hat + betas[0]
        psi = phi - phi_est
        est = _stage_estimates(steps, rows, est_prior, psi, rng)
        moments.add((est - psi) ** 2)
    return moments.result(mc)


def best_baseline_allocation(n_total: int, prior: PriorGrid, *,
                             protocol: str = "adaptive",
                             copy_grid=range(2, 13),
                             mc: MCConfig | None = None):
    """Grid search over winding depth and copies for a baseline protocol.

    Returns (UnwindAllocation, BmseResult) minimizing the MC BMSE across
    slow_levels and per-level copies from copy_grid; the theta stage is
    the largest varying schedule that fits the remaining qubits.
    """
    if protocol not in ("adaptive", "nonadaptive"):
        raise ValueError(f"unknown protocol {protocol!r}")
    if mc is None:
        mc = MCConfig(samples=50_000)
    delta_phi = prior.delta_phi
    max_levels = min(8, max(1, math.ceil(math.log2(max(delta_phi, 0.5) / 0.25))))
    narrow = 0 if protocol == "adaptive" else 1
    best: tuple | None = None
    for levels in range(1, max_levels + 1):
        for copies in copy_grid:
            probe = UnwindAllocation(levels, copies, VaryingBlockConfig(0), narrow)
            base = probe.n_total - probe.varying.n_total
            k_max = -1
            while VaryingBlockConfig(k_max + 1).n_total + base <= n_total:
                k_max += 1
            if k_max < 0:
                continue
            alloc = UnwindAllocation(levels, copies, VaryingBlockConfig(k_max),
                                     narrow)
            if protocol == "adaptive":
                res = adaptive_unwind_bmse(n_total, prior, alloc, mc=mc)
            else:
                res = nonadaptive_unwind_bmse(n_total, prior, alloc, mc=mc)
            if best is None or res.value < best[1].value:
                best = (alloc, res)
    if best is None:
        raise ValueError(f"no allocation fits {n_total} qubits")
    return best


# ---------------------------------------------------------------------------
# proposed protocol: optimize in the rescaled frame


def best_unwind_partition(n_total: int, prior: PriorGrid, reuse: bool = False,
                          *, k_cap: int | None = None, budget: int | None = None,
                          max_descent: int = 8, optimize: bool = True,
                          optimizer_kwargs: dict | None = None):
    """Sweep the winding depth; pick partitions in the rescaled frame.

    For each depth l the prior shrinks by 2^-l and the qubit budget maps
    to a rescaled size; partitions of that size are ranked under the
    shrunk prior and the best one whose original-frame cost fits is kept
    (the size steps down, at most max_descent times, while a better bound
    remains possible).  The overall winner's rotations are then optimized
    when its step count allows.  Returns (ExtendedPartition, bmse), with
    bmse scaled back to the original frame.
    """
    if n_total < 1:
        raise ValueError(f"n_total must be >= 1, got {n_total}")
    delta_phi = prior.delta_phi
    l_hi = 0
    while delta_phi / 2 ** l_hi > 0.7 * (1.0 + 1e-9) and l_hi < MAX_SLOW_LEVEL:
        l_hi += 1
    best: tuple | None = None  # (scaled bound, ep, partition, l_max)
    for l_max in range(l_hi + 1):
        shrunk = delta_phi / 2 ** l_max
        scale = 4.0 ** l_max
        n_prime = n_total * 2 ** l_max
        for _ in range(max_descent):
            if n_prime < n_total:
                break
            sub_prior = gaussian_prior(shrunk,
                                       max_frequency=float(min(n_prime, 64)))
            ranking, _ = adaptive.rank_partitions(n_prime, sub_prior,
                                                  k_cap=k_cap, budget=budget)
            if best is not None and scale * ranking[0][1] >= best[0]:
                break
            for cand, bound in ranking:
                try:
                    ep = unrescale(cand, l_max, reuse)
                except ValueError:
                    continue
                if ep.n_total > n_total:
                    continue
                if best is None or scale * bound < best[0]:
                    best = (scale * bound, ep, cand, l_max)
                break
            n_prime -= 1
    assert best is not None
    bound, ep, part, l_max = best
    if not optimize or part.n_blocks > adaptive.MAX_PLAN_STEPS:
        return ep, bound
    sub_prior = gaussian_prior(delta_phi / 2 ** l_max,
                               max_frequency=float(part.max_block_size))
    plan = adaptive.new_plan(part, sub_prior)
    res = adaptive.optimize_plan(plan, **(optimizer_kwargs or {}))
    return ep, 4.0 ** l_max * res.bmse
