"""Adaptive parity-measurement trees over GHZ blocks and their optimization.

A plan measures the blocks of a partition one at a time, largest first.  Before
each parity measurement the accumulated phase is offset by a rotation angle
that may depend on every earlier outcome, so a plan with M blocks carries
2^M - 1 angles arranged as a binary tree (heap order, root first).  A block
sensing frequency f contributes the factor

    p(even) = (1 + C * cos(f * (phi - rot))) / 2        (odd: minus)

with contrast C = 1 in the noiseless case.  Branch outcome probabilities are
products of these factors along the tree path; the Bayesian mean squared error
and its exact gradient with respect to every rotation are evaluated by one
forward/backward sweep over the tree, vectorized across the prior grid and
chunked so the largest supported tree (M = 17, 131072 branches) stays within
a fixed memory budget.

Gradients use the bounded product form: the derivative of a branch probability
with respect to a rotation is the partial product along the path times
(C*f/2) * sin(f*(phi - rot)), never an explicit tan or cot, so branches with
vanishing factors stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BudgetExceeded
from .oqi import optimal_L, phase_kernels
from .partitions import Partition, enumerate_partitions, count_partitions, frequency_amplitudes
from .prior import PriorGrid, gaussian_prior, uniform_prior, default_node_count

# Exact branch enumeration is limited to this many measurement steps.
MAX_PLAN_STEPS = 17

# Largest (branches x grid nodes) block materialized at once (~33 MB float64).
_CHUNK_ELEMENTS = 1 << 22

_TINY_MASS = 1e-300


@dataclass(frozen=True)
class MeasurementPlan:
    """Rotation schedule for measuring a partition's blocks adaptively.

    order lists per-step sensing frequencies, block sizes in qubits for
    ordinary plans (largest first); rotations is the angle tree in heap order
    (index 2^level - 1 + prefix).
    """

    partition: Partition
    order: tuple
    rotations: np.ndarray = field(repr=False)
    prior: PriorGrid = field(repr=False)

    def __post_init__(self):
        order = tuple(float(f) for f in self.order)
        object.__setattr__(self, "order", order)
        m = len(order)
        if m < 1:
            raise ValueError("plan needs at least one measurement step")
        if m > MAX_PLAN_STEPS:
            raise BudgetExceeded(
                f"plan has {m} steps; exact branch enumeration supports at most {MAX_PLAN_STEPS}")
        rot = np.ascontiguousarray(np.asarray(self.rotations, dtype=float))
        if rot.shape != (2 ** m - 1,):
            raise ValueError(f"expected {2 ** m - 1} rotation angles, got shape {rot.shape}")
        rot.flags.writeable = False
        object.__setattr__(self, "rotations", rot)

    @property
    def n_steps(self) -> int:
        return len(self.order)

    @property
    def n_branches(self) -> int:
        return 2 ** len(self.order)

    def rotation_index(self, prefix: str) -> int:
        """Heap index of the rotation applied after observing `prefix`."""
        level = len(prefix)
        if level >= self.n_steps:
            raise ValueError(f"prefix {prefix!r} too long for {self.n_steps}-step plan")
        offset = int(prefix, 2) if prefix else 0
        return 2 ** level - 1 + offset

    def with_rotations(self, rotations) -> "MeasurementPlan":
        return replace(self, rotations=np.array(rotations, dtype=float))

    def to_json_dict(self) -> dict:
        rot = {}
        for level in range(self.n_steps):
            for i in range(2 ** level):
                prefix = format(i, f"0{level}b") if level else ""
                rot[prefix] = float(self.rotations[2 ** level - 1 + i])
        prior = self.prior
        if prior.kind == "gaussian":
            pspec = {"kind": "gaussian", "delta_phi": prior.delta_phi,
                     "node_count": int(prior.nodes.size)}
        elif prior.kind == "uniform":
            pspec = {"kind": "uniform", "lo": prior.support[0], "hi": prior.support[1],
                     "node_count": int(prior.nodes.size)}
        else:
            raise ValueError(f"cannot serialize prior of kind {prior.kind!r}")
        return {"partition": self.partition.to_json(),
                "order": list(self.order),
                "rotations": rot,
                "prior": pspec}

    @classmethod
    def from_json_dict(cls, data: dict) -> "MeasurementPlan":
        partition = Partition.from_json(data["partition"])
        order = tuple(float(f) for f in data["order"])
        m = len(order)
        rotations = np.zeros(2 ** m - 1)
        for prefix, angle in data["rotations"].items():
            level = len(prefix)
            offset = int(prefix, 2) if prefix else 0
            rotations[2 ** level - 1 + offset] = float(angle)
        pspec = data["prior"]
        if pspec["kind"] == "gaussian":
            prior = gaussian_prior(pspec["delta_phi"], pspec["node_count"])
        elif pspec["kind"] == "uniform":
            prior = uniform_prior(pspec["lo"], pspec["hi"], pspec["node_count"])
        else:
            raise ValueError(f"unknown prior kind {pspec['kind']!r}")
        return cls(partition, order, rotations, prior)


def plan_prior(partition: Partition, delta_phi: float,
               node_count: int | None = None) -> PriorGrid:
    """Gaussian prior gridded to resolve the partition's largest block."""
    if node_count is None:
        node_count = default_node_count(12.0 * delta_phi, partition.max_block_size)
    return gaussian_prior(delta_phi, node_count)


def staggered_rotations(order) -> np.ndarray:
    """Dual-quadrature start: siblings alternate 0 and pi/(2 f) per level."""
    m = len(order)
    rot = np.zeros(2 ** m - 1)
    for level in range(m):
        f = order[level]
        idx = np.arange(2 ** level)
        rot[2 ** level - 1 + idx] = (idx % 2) * (math.pi / (2.0 * f))
    return rot


def new_plan(partition: Partition, prior: PriorGrid, *, init: str = "staggered",
             seed: int | None = None) -> MeasurementPlan:
    """Fresh plan with largest-first order and a staggered or seeded start."""
    order = partition.block_sizes()
    rot = staggered_rotations(order)
    if init == "random":
        rng = np.random.default_rng(seed)
        for level in range(len(order)):
            f = order[level]
            sl = slice(2 ** level - 1, 2 ** (level + 1) - 1)
            rot[sl] += rng.uniform(-math.pi / (2 * f), math.pi / (2 * f), 2 ** level)
    elif init != "staggered":
        raise ValueError(f"unknown init {init!r}")
    return MeasurementPlan(partition, order, rot, prior)


# ---------------------------------------------------------------------------
# tree evaluation engine


def _split_level(m: int, grid_size: int) -> int:
    """Levels above this are iterated in Python; below, fully vectorized."""
    depth = max(1, int(math.floor(math.log2(max(_CHUNK_ELEMENTS // max(grid_size, 1), 2)))))
    return max(0, m - depth)


def _level_factors(f, contrast, rot_slice, cos_f, sin_f, need_deriv=False):
    """Even/odd probability factors (and d(even)/d(rot)) for one level.

    cos_f, sin_f are cos(f*phi), sin(f*phi) over the grid; rot_slice holds the
    level's rotation angles.  Returns arrays of shape (nodes, grid).
    """
    cr = np.cos(f * rot_slice)[:, None]
    sr = np.sin(f * rot_slice)[:, None]
    osc = cos_f[None, :] * cr
    osc += sin_f[None, :] * sr
    even = 0.5 + (0.5 * contrast) * osc
    odd = 1.0 - even
    if not need_deriv:
        return even, odd, None
    deriv = sin_f[None, :] * cr
    deriv -= cos_f[None, :] * sr
    deriv *= 0.5 * contrast * f
    return even, odd, deriv


class _TreeContext:
    def __init__(self, plan: MeasurementPlan, contrasts=None):
        self.freqs = np.asarray(plan.order, dtype=float)
        self.m = len(plan.order)
        self.rotations = plan.rotations
        prior = plan.prior
        self.phi = prior.nodes
        self.w = prior.pweights
        self.wphi = self.w * self.phi
        self.m2 = float(self.w @ (self.phi ** 2))
        self.cos_f = np.cos(self.freqs[:, None] * self.phi[None, :])
        self.sin_f = np.sin(self.freqs[:, None] * self.phi[None, :])
        if contrasts is None:
            self.contrasts = np.ones(self.m)
        else:
            self.contrasts = np.asarray(contrasts, dtype=float)
            if self.contrasts.shape != (self.m,):
                raise ValueError(f"need {self.m} contrast factors, got {self.contrasts.shape}")

    def level_rotations(self, level: int, lo: int = 0, hi: int | None = None) -> np.ndarray:
        base = 2 ** level - 1
        if hi is None:
            hi = 2 ** level
        return self.rotations[base + lo:base + hi]

    def factors(self, level, node_lo, node_hi, need_deriv=False):
        return _level_factors(self.freqs[level], self.contrasts[level],
                              self.level_rotations(level, node_lo, node_hi),
                              self.cos_f[level], self.sin_f[level], need_deriv)


def _forward_subtree(ctx: _TreeContext, split: int, top_index: int, f_root: np.ndarray):
    """Descend from a split-level node to level M-1, storing each level's F."""
    levels = [f_root.reshape(1, -1)]
    for level in range(split, ctx.m - 1):
        width = 2 ** (level - split)
        lo = top_index * width
        even, odd, _ = ctx.factors(level, lo, lo + width)
        f = levels[-1]
        nxt = np.empty((2 * width, f.shape[1]))
        np.multiply(f, even, out=nxt[0::2])
        np.multiply(f, odd, out=nxt[1::2])
        levels.append(nxt)
    return levels


def _leaf_integrals(ctx: _TreeContext, split: int, top_index: int, levels):
    """a, b integrals for the 2^(M-split) leaves under one split node."""
    level = ctx.m - 1
    width = 2 ** (level - split)
    lo = top_index * width
    even, odd, _ = ctx.factors(level, lo, lo + width)
    f = levels[-1]
    a = np.empty(2 * width)
    b = np.empty(2 * width)
    z = f * even
    a[0::2] = z @ ctx.wphi
    b[0::2] = z @ ctx.w
    np.multiply(f, odd, out=z)
    a[1::2] = z @ ctx.wphi
    b[1::2] = z @ ctx.w
    return a, b


def _backward_subtree(ctx: _TreeContext, split: int, top_index: int, levels,
                      e, grad):
    """Gradient entries for one subtree; returns root-level (A, B) vectors.

    A, B carry sum_n e_n * R and sum_n e_n^2 * R over leaves below each node,
    where R is the partial product of factors strictly below the node.
    """
    m = ctx.m
    level = m - 1
    width = 2 ** (level - split)
    lo = top_index * width
    even, odd, deriv = ctx.factors(level, lo, lo + width, need_deriv=True)
    e_even = e[0::2, None]
    e_odd = e[1::2, None]
    fd = levels[-1] * deriv
    diff_a = e_even - e_odd
    diff_b = e_even ** 2 - e_odd ** 2
    grad[2 ** level - 1 + lo:2 ** level - 1 + lo + width] = -(
        2.0 * ((fd * diff_a) @ ctx.wphi) - (fd * diff_b) @ ctx.w)
    a_vec = even * e_even
    a_vec += odd * e_odd
    b_vec = even * (e_even ** 2)
    b_vec += odd * (e_odd ** 2)
    for level in range(m - 2, split - 1, -1):
        width = 2 ** (level - split)
        lo = top_index * width
        even, odd, deriv = ctx.factors(level, lo, lo + width, need_deriv=True)
        ae, ao = a_vec[0::2], a_vec[1::2]
        be, bo = b_vec[0::2], b_vec[1::2]
        fd = levels[level - split] * deriv
        grad[2 ** level - 1 + lo:2 ** level - 1 + lo + width] = -(
            2.0 * ((fd * (ae - ao)) @ ctx.wphi) - (fd * (be - bo)) @ ctx.w)
        a_vec = even * ae
        a_vec += odd * ao
        b_vec = even * be
        b_vec += odd * bo
    return a_vec[0], b_vec[0]


def _tree_pass(plan: MeasurementPlan, contrasts=None, need_grad=False):
    """Branch integrals a_n, b_n (and BMSE gradient) for a full plan."""
    ctx = _TreeContext(plan, contrasts)
    m = ctx.m
    grid = ctx.phi.size
    split = _split_level(m, grid)
    # top of the tree: full per-level arrays, small because 2^split is small
    tops = [np.ones((1, grid))]
    for level in range(split):
        even, odd, _ = ctx.factors(level, 0, 2 ** level)
        f = tops[-1]
        nxt = np.empty((2 ** (level + 1), grid))
        np.multiply(f, even, out=nxt[0::2])
        np.multiply(f, odd, out=nxt[1::2])
        tops.append(nxt)
    a = np.empty(2 ** m)
    b = np.empty(2 ** m)
    grad = np.empty(2 ** m - 1) if need_grad else None
    sub_a = np.empty((2 ** split, grid)) if (need_grad and split) else None
    sub_b = np.empty((2 ** split, grid)) if (need_grad and split) else None
    leaves_per = 2 ** (m - split)
    for p in range(2 ** split):
        levels = _forward_subtree(ctx, split, p, tops[-1][p])
        sl = slice(p * leaves_per, (p + 1) * leaves_per)
        a[sl], b[sl] = _leaf_integrals(ctx, split, p, levels)
        if need_grad:
            e = np.where(b[sl] > _TINY_MASS, a[sl] / np.maximum(b[sl], _TINY_MASS), 0.0)
            va, vb = _backward_subtree(ctx, split, p, levels, e, grad)
            if split:
                sub_a[p], sub_b[p] = va, vb
    if need_grad and split:
        a_vec, b_vec = sub_a, sub_b
        for level in range(split - 1, -1, -1):
            even, odd, deriv = ctx.factors(level, 0, 2 ** level, need_deriv=True)
            ae, ao = a_vec[0::2], a_vec[1::2]
            be, bo = b_vec[0::2], b_vec[1::2]
            fd = tops[level] * deriv
            grad[2 ** level - 1:2 ** (level + 1) - 1] = -(
                2.0 * ((fd * (ae - ao)) @ ctx.wphi) - (fd * (be - bo)) @ ctx.w)
            a_vec = even * ae + odd * ao
            b_vec = even * be + odd * bo
    return ctx, a, b, grad


def _bmse_from_integrals(m2, a, b):
    mask = b > _TINY_MASS
    return m2 - float(np.sum(a[mask] ** 2 / b[mask]))


# ---------------------------------------------------------------------------
# public evaluation API


def branch_probability(plan: MeasurementPlan, branch, phi, *, contrasts=None):
    """Probability of an outcome bit sequence at phase phi (scalar or array).

    branch is a sequence of 0 (even parity) / 1 (odd) of length n_steps, or a
    bit string like "010".
    """
    bits = [int(c) for c in branch]
    if len(bits) != plan.n_steps or any(c not in (0, 1) for c in bits):
        raise ValueError(f"branch must be {plan.n_steps} bits of 0/1, got {branch!r}")
    phi = np.asarray(phi, dtype=float)
    if contrasts is None:
        contrasts = np.ones(plan.n_steps)
    p = np.ones_like(phi)
    prefix = 0
    for level, bit in enumerate(bits):
        f = plan.order[level]
        rot = plan.rotations[2 ** level - 1 + prefix]
        osc = contrasts[level] * np.cos(f * (phi - rot))
        p = p * (0.5 + 0.5 * osc if bit == 0 else 0.5 - 0.5 * osc)
        prefix = (prefix << 1) | bit
    return p if p.ndim else float(p)


@dataclass(frozen=True)
class BranchTable:
    """Per-branch estimators and prior-predictive masses for a plan.

    probabilities holds p(branch | phi) on the prior grid when the full table
    fits the memory budget, else None (use probability_chunks to stream).
    """

    plan: MeasurementPlan
    estimators: np.ndarray = field(repr=False)
    posterior_mass: np.ndarray = field(repr=False)
    probabilities: np.ndarray | None = field(repr=False, default=None)

    def probability_chunks(self, contrasts=None):
        """Yield (branch_offset, block) covering all branches in order."""
        ctx = _TreeContext(self.plan, contrasts)
        split = _split_level(ctx.m, ctx.phi.size)
        tops = np.ones((1, ctx.phi.size))
        for level in range(split):
            even, odd, _ = ctx.factors(level, 0, 2 ** level)
            nxt = np.empty((2 ** (level + 1), ctx.phi.size))
            np.multiply(tops, even, out=nxt[0::2])
            np.multiply(tops, odd, out=nxt[1::2])
            tops = nxt
        for p in range(2 ** split):
            levels = _forward_subtree(ctx, split, p, tops[p])
            level = ctx.m - 1
            width = 2 ** (level - split)
            lo = p * width
            even, odd, _ = ctx.factors(level, lo, lo + width)
            f = levels[-1]
            block = np.empty((2 * width, ctx.phi.size))
            np.multiply(f, even, out=block[0::2])
            np.multiply(f, odd, out=block[1::2])
            yield p * 2 * width, block


def bayes_estimators(plan: MeasurementPlan, *, contrasts=None) -> BranchTable:
    """Optimal per-branch phase estimators and branch masses under the prior."""
    ctx, a, b, _ = _tree_pass(plan, contrasts)
    e = np.where(b > _TINY_MASS, a / np.maximum(b, _TINY_MASS), 0.0)
    table = BranchTable(plan, e, b)
    if plan.n_branches * ctx.phi.size <= _CHUNK_ELEMENTS:
        probs = np.vstack([blk for _, blk in table.probability_chunks(contrasts)])
        table = BranchTable(plan, e, b, probs)
    return table


def bmse(plan: MeasurementPlan, *, contrasts=None) -> float:
    """Bayesian MSE of the plan with optimal estimators."""
    ctx, a, b, _ = _tree_pass(plan, contrasts)
    return _bmse_from_integrals(ctx.m2, a, b)


def bmse_gradient(plan: MeasurementPlan, *, contrasts=None):
    """(bmse, d bmse / d rotation) with estimators held at their optimum."""
    ctx, a, b, grad = _tree_pass(plan, contrasts, need_grad=True)
    return _bmse_from_integrals(ctx.m2, a, b), grad


def bmse_with_estimators(plan: MeasurementPlan, estimators, *, contrasts=None) -> float:
    """Bayesian MSE with caller-supplied (possibly suboptimal) estimators."""
    e = np.asarray(estimators, dtype=float)
    if e.shape != (plan.n_branches,):
        raise ValueError(f"need {plan.n_branches} estimators, got shape {e.shape}")
    ctx, a, b, _ = _tree_pass(plan, contrasts)
    return ctx.m2 - 2.0 * float(e @ a) + float((e ** 2) @ b)


def mse_curve(plan: MeasurementPlan, phi_values, *, estimators=None, contrasts=None):
    """MSE(phi) = sum_n p(n|phi) (phi - e_n)^2 at arbitrary phase values.

    Estimators default to the Bayes-optimal ones derived from the plan prior.
    """
    if estimators is None:
        estimators = bayes_estimators(plan, contrasts=contrasts).estimators
    e = np.asarray(estimators, dtype=float)
    phi = np.atleast_1d(np.asarray(phi_values, dtype=float))
    eval_prior = PriorGrid("curve", 1.0, (phi.min(), phi.max()),
                           phi.copy(), np.ones_like(phi), np.ones_like(phi))
    ctx = _TreeContext(replace(plan, prior=eval_prior), contrasts)
    split = _split_level(ctx.m, phi.size)
    tops = np.ones((1, phi.size))
    for level in range(split):
        even, odd, _ = ctx.factors(level, 0, 2 ** level)
        nxt = np.empty((2 ** (level + 1), phi.size))
        np.multiply(tops, even, out=nxt[0::2])
        np.multiply(tops, odd, out=nxt[1::2])
        tops = nxt
    s1 = np.zeros(phi.size)
    s2 = np.zeros(phi.size)
    width = 2 ** (ctx.m - 1 - split)
    for p in range(2 ** split):
        levels = _forward_subtree(ctx, split, p, tops[p])
        lo = p * width
        even, odd, _ = ctx.factors(ctx.m - 1, lo, lo + width)
        f = levels[-1]
        sl = slice(p * 2 * width, (p + 1) * 2 * width)
        e_even = e[sl][0::2]
        e_odd = e[sl][1::2]
        z = f * even
        s1 += e_even @ z
        s2 += (e_even ** 2) @ z
        np.multiply(f, odd, out=z)
        s1 += e_odd @ z
        s2 += (e_odd ** 2) @ z
    return phi ** 2 - 2.0 * phi * s1 + s2


# ---------------------------------------------------------------------------
# optimization


@dataclass(frozen=True)
class OptimizeResult:
    plan: MeasurementPlan
    bmse: float
    steps: int
    converged: bool
    restart_bmses: tuple
    initial_bmse: float


class _Adam:
    """Standard Adam update with bias correction."""

    def __init__(self, dim, step=0.02, beta1=0.9, beta2=0.999, eps=1e-8):
        self.step, self.beta1, self.beta2, self.eps = step, beta1, beta2, eps
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.t = 0

    def update(self, x, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad ** 2
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return x - self.step * mhat / (np.sqrt(vhat) + self.eps)


def _run_adam(plan, contrasts, step, max_steps, gtol, window_tol, window):
    rot = plan.rotations.copy()
    adam = _Adam(rot.size, step=step)
    best_rot = rot.copy()
    cur = replace(plan, rotations=rot)
    best, grad = bmse_gradient(cur, contrasts=contrasts)
    history = [best]
    steps = 0
    converged = False
    for steps in range(1, max_steps + 1):
        if np.max(np.abs(grad)) < gtol:
            converged = True
            break
        rot = adam.update(rot, grad)
        cur = replace(plan, rotations=rot)
        val, grad = bmse_gradient(cur, contrasts=contrasts)
        if val < best:
            best = val
            best_rot = rot.copy()
        history.append(best)
        if len(history) > window:
            old = history[-window - 1]
            if (old - best) <= window_tol * max(abs(best), 1e-300):
                converged = True
                break
    return best_rot, best, steps, converged


def optimize_plan(plan: MeasurementPlan, *, contrasts=None, step: float = 0.02,
                  max_steps: int = 2000, restarts: int = 8, seed: int = 0,
                  gtol: float = 1e-6, window_tol: float = 1e-10,
                  window: int = 50) -> OptimizeResult:
    """Adam ascent of the rotation tree; never returns worse than the input.

    Restart 0 starts from the plan as given; later restarts perturb a
    staggered start with a seeded uniform offset per node, scaled to the
    level's oscillation period.
    """
    initial = bmse(plan, contrasts=contrasts)
    best_rot = plan.rotations.copy()
    best = initial
    restart_bmses = []
    total_steps = 0
    any_converged = False
    for r in range(max(1, restarts)):
        if r == 0:
            start = plan
        else:
            rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(r,)))
            rot = staggered_rotations(plan.order)
            for level in range(plan.n_steps):
                f = plan.order[level]
                sl = slice(2 ** level - 1, 2 ** (level + 1) - 1)
                rot[sl] += rng.uniform(-math.pi / (2 * f), math.pi / (2 * f), 2 ** level)
            start = replace(plan, rotations=rot)
        rot, val, steps, conv = _run_adam(start, contrasts, step, max_steps,
                                          gtol, window_tol, window)
        restart_bmses.append(val)
        total_steps += steps
        any_converged = any_converged or conv
        if val < best:
            best = val
            best_rot = rot
    out = replace(plan, rotations=best_rot)
    return OptimizeResult(out, best, total_steps, any_converged,
                          tuple(restart_bmses), initial)


# ---------------------------------------------------------------------------
# partition selection


@dataclass(frozen=True)
class SelectionResult:
    partition: Partition
    plan: MeasurementPlan | None
    bmse: float
    ranking: tuple  # (partition, optimal-measurement bmse) sorted best first
    budget_exhausted: bool
    skipped_large: bool  # a better-ranked partition exceeded MAX_PLAN_STEPS


def rank_partitions(n_total: int, prior: PriorGrid, *, k_cap: int | None = None,
                    budget: int | None = None):
    """Rank all partitions of n_total by their optimal-measurement BMSE.

    Returns (ranking, budget_exhausted); ranking entries are (partition, bmse)
    best first, ties toward fewer blocks then canonical text order.
    """
    parts = enumerate_partitions(n_total, k_cap, budget)
    exhausted = budget is not None and count_partitions(n_total, k_cap) > len(parts)
    kernels = phase_kernels(prior, n_total + 1)
    scored = []
    for part in parts:
        amps = frequency_amplitudes(part).amplitudes
        rho = np.outer(amps, amps).astype(complex)
        solve = optimal_L(rho, prior, kernels=kernels)
        scored.append((part, solve.bmse))
    scored.sort(key=lambda t: (round(t[1], 14), t[0].n_blocks, t[0].to_text()))
    return scored, exhausted


def select_best_partition(n_total: int, prior: PriorGrid, *, mode: str = "rank",
                          top_k: int = 3, k_cap: int | None = None,
                          budget: int | None = None, contrasts_for=None,
                          optimizer_kwargs: dict | None = None) -> SelectionResult:
    """Pick the best partition of n_total for the prior.

    mode "rank" optimizes only the top-ranked feasible partition;
    "optimize-top-k" optimizes the k best-ranked; "optimize-all" optimizes
    every enumerated partition (only sensible for small n_total).
    """
    if mode not in ("rank", "optimize-all", "optimize-top-k"):
        raise ValueError(f"unknown selection mode {mode!r}")
    kwargs = dict(optimizer_kwargs or {})
    ranking, exhausted = rank_partitions(n_total, prior, k_cap=k_cap, budget=budget)
    feasible = [(p, v) for p, v in ranking if p.n_blocks <= MAX_PLAN_STEPS]
    skipped = len(feasible) < len(ranking) and (not feasible or feasible[0][0] is not ranking[0][0])
    if not feasible:
        raise BudgetExceeded(
            f"every partition of {n_total} exceeds {MAX_PLAN_STEPS} measurement steps")
    if mode == "rank":
        candidates = feasible[:1]
    elif mode == "optimize-top-k":
        candidates = feasible[:top_k]
    else:
        candidates = feasible
    best = None
    for part, _ in candidates:
        plan = new_plan(part, prior)
        contrasts = contrasts_for(part) if contrasts_for is not None else None
        res = optimize_plan(plan, contrasts=contrasts, **kwargs)
        if best is None or res.bmse < best[1]:
            best = (res.plan, res.bmse, part)
    return SelectionResult(best[2], best[0], best[1], tuple(ranking), exhausted, skipped)
