"""Reference protocols and closed-form baselines.

Everything the proposed adaptive scheme is benchmarked against lives here:

* coherent-spin-state readout (the standard quantum limit at finite N),
* a single GHZ state with a rotated parity readout,
* the fixed-block scheme: M copies each of 1-, 2-, ..., 2^k_max-qubit GHZ
  states with dual-quadrature parity counts, decoded either by the optimal
  Bayesian estimator or by the bit-by-bit binary-digit estimator,
* the varying-block scheme: non-adaptive rotation schedules with copy counts
  m_k = m_top + mu * (k_max - k),
* large-N saturation floors (phase-slip plateaus) for both limits,
* the quantum Cramer-Rao bound of a partition, and
* the sine-state / Fourier-readout variance check.

Exact outcome enumeration is used whenever the joint outcome lattice is small
enough; otherwise seeded Monte Carlo with standard-error reporting.  MC
evaluations are deterministic given MCConfig.seed.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln, xlogy

from . import adaptive
from .adaptive import MeasurementPlan
from .errors import BudgetExceeded
from .partitions import Partition
from .prior import (
    PriorGrid,
    composite_gauss_legendre,
    default_node_count,
    gaussian_density,
    gaussian_prior,
    sample_phases,
)

# Joint outcome lattices up to this size are enumerated exactly.
EXACT_OUTCOME_CAP = 10_000_000

# Published power-law fit to the optimal-interferometer width at
# delta_phi = 0.7 over intermediate qubit numbers.
OQI_FIT_COEFF = 1.55
OQI_FIT_POWER = 0.83

_TINY = 1e-300

# Relative wrap-sum truncation: Gaussian images beyond this many deviations
# contribute < 1e-14 of the sum.
_WRAP_SIGMAS = 9.0


def oqi_rbmse_fit(n_total: int) -> float:
    """Fitted optimal-interferometer width at delta_phi = 0.7: 1.55 / N^0.83."""
    return OQI_FIT_COEFF / float(n_total) ** OQI_FIT_POWER


def fixed_block_rbmse_prediction(n_total: int) -> float:
    """Analytic large-N width prediction for the fixed-block scheme.

    The scheme carries a sqrt(log N) overhead over Heisenberg scaling; the
    prediction anchors that overhead to the fitted OQI width:
    (8/pi^2) * sqrt(ln N) * oqi_rbmse_fit(N).
    """
    n = float(n_total)
    return (8.0 / math.pi ** 2) * math.sqrt(math.log(n)) * oqi_rbmse_fit(n_total)


def corrected_hl_rbmse(n_total: int) -> float:
    """Heisenberg-limit width for a full-interval flat prior: pi / N."""
    return math.pi / float(n_total)


def metrological_gain_db(gain: float) -> float:
    """Variance-ratio gain expressed in decibels: 10 * log10(gain)."""
    if not gain > 0.0:
        raise ValueError(f"gain must be positive, got {gain}")
    return 10.0 * math.log10(gain)


# ---------------------------------------------------------------------------
# Monte Carlo plumbing


@dataclass(frozen=True)
class MCConfig:
    """Sampling budget for Monte Carlo BMSE estimates.

    target_relative_se, when set, marks the result as budget-limited if the
    achieved standard error exceeds target_relative_se * value.
    """

    samples: int = 200_000
    seed: int = 0
    chunk: int = 8192
    target_relative_se: float | None = None

    def __post_init__(self):
        if self.samples < 2:
            raise ValueError("MC needs at least 2 samples")
        if self.chunk < 1:
            raise ValueError("chunk must be positive")


@dataclass(frozen=True)
class BmseResult:
    """A BMSE value with provenance: exact enumeration or MC with its error."""

    value: float
    standard_error: float = 0.0
    samples: int = 0
    exact: bool = True
    budget_ok: bool = True

    @property
    def relative_se(self) -> float:
        if self.value <= 0.0:
            return math.inf
        return self.standard_error / self.value

    def __float__(self) -> float:
        return self.value


class _ErrMoments:
    """Streaming mean and standard error of squared estimation errors."""

    def __init__(self):
        self.n = 0
        self.s1 = 0.0
        self.s2 = 0.0

    def add(self, sq_errors: np.ndarray):
        self.n += sq_errors.size
        self.s1 += float(np.sum(sq_errors))
        self.s2 += float(np.sum(sq_errors ** 2))

    def result(self, mc: MCConfig) -> BmseResult:
        mean = self.s1 / self.n
        var = max(self.s2 / self.n - mean ** 2, 0.0)
        se = math.sqrt(var / max(self.n - 1, 1))
        ok = True
        if mc.target_relative_se is not None:
            ok = se <= mc.target_relative_se * max(mean, _TINY)
        return BmseResult(mean, se, self.n, exact=False, budget_ok=ok)


def _mc_chunks(mc: MCConfig):
    """Yield (rng, chunk_size) pairs covering mc.samples deterministically."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=mc.seed))
    remaining = mc.samples
    while remaining > 0:
        size = min(mc.chunk, remaining)
        remaining -= size
        yield rng, size


def _binom_pmf(n, m: int, p):
    """Binomial pmf, vectorized, safe at p = 0 and p = 1."""
    n = np.asarray(n)
    p = np.asarray(p, dtype=float)
    logc = gammaln(m + 1) - gammaln(n + 1) - gammaln(m - n + 1)
    return np.exp(logc + xlogy(n, p) + xlogy(m - n, 1.0 - p))


# ---------------------------------------------------------------------------
# folded prior kernels: estimator integrals for 2pi-periodic outcome models
# collapse onto [-pi, pi) regardless of the prior's support


def _folded_kernels(prior: PriorGrid, node_count: int):
    """Quadrature grid on [-pi, pi] plus wrap-summed prior moments.

    Returns (theta, u, k0, k1, k2) where k0 = sum_P rho(theta + 2 pi P) and
    k1, k2 weight the images by phi and phi^2.  Only analytic prior kinds
    (gaussian, uniform) can be folded; others raise ValueError.
    """
    if prior.kind == "gaussian":
        half_support = 6.0 * prior.delta_phi

        def density(x):
            return gaussian_density(x, prior.delta_phi)
    elif prior.kind == "uniform":
        lo, hi = prior.support
        half_support = max(abs(lo), abs(hi))

        def density(x):
            return np.where((x >= lo) & (x <= hi), 1.0 / (hi - lo), 0.0)
    else:
        raise ValueError(f"cannot fold prior of kind {prior.kind!r}")
    theta, u = composite_gauss_legendre(-math.pi, math.pi, node_count)
    p_max = int(math.ceil((half_support + math.pi) / (2.0 * math.pi)))
    k0 = np.zeros_like(theta)
    k1 = np.zeros_like(theta)
    k2 = np.zeros_like(theta)
    for wrap in range(-p_max, p_max + 1):
        phi = theta + 2.0 * math.pi * wrap
        rho = density(phi)
        k0 += rho
        k1 += phi * rho
        k2 += phi ** 2 * rho
    return theta, u, k0, k1, k2


# ---------------------------------------------------------------------------
# coherent spin state (single-quadrature binomial readout)


@dataclass(frozen=True)
class CssStatistics:
    """CSS readout summary: bmse plus the pieces it is assembled from.

    variance_reduction = prior_second_moment - bmse, computed directly as the
    estimator sum, so downstream effective-uncertainty formulas avoid the
    catastrophic cancellation of re-deriving it from bmse.
    """

    bmse: float
    variance_reduction: float
    prior_second_moment: float


def css_statistics(n_total: int, prior: PriorGrid,
                   node_count: int | None = None) -> CssStatistics:
    """Exact Bayesian readout statistics for an N-atom coherent spin state.

    The outcome model is binomial over x = 0..N excited atoms with success
    probability sin^2(phi/2 + pi/4).  Gaussian and uniform priors of any
    width are handled by folding onto [-pi, pi); other prior kinds integrate
    directly on their own grid (the caller must supply adequate resolution).
    """
    if n_total < 1:
        raise ValueError(f"n_total must be >= 1, got {n_total}")
    if prior.kind in ("gaussian", "uniform"):
        if node_count is None:
            node_count = max(512, default_node_count(
                2.0 * math.pi, 4.0 * math.sqrt(n_total)))
        theta, u, k0, k1, k2 = _folded_kernels(prior, node_count)
        w0 = u * k0
        w1 = u * k1
        m2 = float(u @ k2)
    else:
        theta = prior.nodes
        w0 = prior.pweights
        w1 = w0 * theta
        m2 = float(w0 @ theta ** 2)
    q = np.sin(0.5 * theta + 0.25 * math.pi) ** 2
    x = np.arange(n_total + 1)
    pmf = _binom_pmf(x[:, None], n_total, q[None, :])
    b = pmf @ w0
    a = pmf @ w1
    mask = b > _TINY
    reduction = float(np.sum(a[mask] ** 2 / b[mask]))
    return CssStatistics(m2 - reduction, reduction, m2)


def css_bmse(n_total: int, prior: PriorGrid, node_count: int | None = None) -> float:
    """Bayesian MSE of the N-atom coherent-spin-state readout."""
    return css_statistics(n_total, prior, node_count).bmse


# ---------------------------------------------------------------------------
# single GHZ state with rotated parity readout


def ghz_parity_bmse(n_total: int, prior: PriorGrid, *, numeric: bool = False) -> float:
    """Bayesian MSE of one N-qubit GHZ state read out at quadrature.

    The parity is rotated to the sensitive point, giving outcome
    probabilities (1 +- sin(N phi)) / 2.  For Gaussian priors the closed form
    dphi^2 - N^2 dphi^4 exp(-N^2 dphi^2) is returned unless numeric=True
    forces the two-outcome quadrature evaluation (other prior kinds always
    use it, on an internally refined grid for analytic kinds).
    """
    if n_total < 1:
        raise ValueError(f"n_total must be >= 1, got {n_total}")
    if prior.kind == "gaussian" and not numeric:
        d2 = prior.delta_phi ** 2
        return d2 - n_total ** 2 * d2 ** 2 * math.exp(-n_total ** 2 * d2)
    if prior.kind == "gaussian":
        # untruncated Gaussian on a wide grid: tails beyond 8.7 deviations
        # carry < 1e-15 of the second moment, so the closed form is matched
        # at full precision
        d = prior.delta_phi
        half = 8.7 * d
        nodes = default_node_count(2.0 * half, float(n_total))
        phi, u = composite_gauss_legendre(-half, half, nodes)
        w = u * np.exp(-0.5 * (phi / d) ** 2) / (d * math.sqrt(2.0 * math.pi))
    else:
        w = prior.pweights
        phi = prior.nodes
    m2 = float(w @ phi ** 2)
    s = np.sin(n_total * phi)
    gain = 0.0
    for sign in (1.0, -1.0):
        p = 0.5 * (1.0 + sign * s)
        b = float(w @ p)
        a = float((w * phi) @ p)
        if b > _TINY:
            gain += a ** 2 / b
    return m2 - gain


# ---------------------------------------------------------------------------
# fixed-block scheme


def solve_fixed_block_M(k_max: int, *, exact: bool = False):
    """Copies-per-block solving M = (16/pi^2) ln(M (2^(k_max+1) - 1)).

    Natural logarithm; the larger fixed point is returned, rounded to the
    nearest integer unless exact=True.  k_max = 0 has no fixed point.
    """
    if k_max < 0:
        raise ValueError(f"k_max must be >= 0, got {k_max}")
    c = 16.0 / math.pi ** 2
    r = 2.0 ** (k_max + 1) - 1.0

    def f(m):
        return m - c * math.log(m * r)

    if f(c) >= 0.0:
        raise ValueError(f"k_max={k_max}: the copy-count equation has no fixed point")
    root = brentq(f, c, 200.0, xtol=1e-13)
    if exact:
        return float(root)
    return int(round(root))


@dataclass(frozen=True)
class FixedBlockConfig:
    """M copies each of 1-, 2-, ..., 2^k_max-qubit GHZ blocks, M even.

    Per block size, M/2 copies are read in each of the two quadratures.
    """

    k_max: int
    m_copies: int

    def __post_init__(self):
        if self.k_max < 0:
            raise ValueError(f"k_max must be >= 0, got {self.k_max}")
        if self.m_copies < 2 or self.m_copies % 2:
            raise ValueError(f"m_copies must be a positive even count, got {self.m_copies}")

    @classmethod
    def for_k_max(cls, k_max: int) -> "FixedBlockConfig":
        """Copies from the implicit equation, bumped to the nearest even count."""
        real = solve_fixed_block_M(k_max, exact=True)
        m = int(round(real))
        if m % 2:
            m = 2 * int(round(real / 2.0))
        return cls(k_max, m)

    @property
    def n_total(self) -> int:
        return self.m_copies * (2 ** (self.k_max + 1) - 1)

    @property
    def quadrature_copies(self) -> int:
        return self.m_copies // 2

    @property
    def outcome_lattice_size(self) -> int:
        return (self.quadrature_copies + 1) ** (2 * (self.k_max + 1))

    def to_partition(self) -> Partition:
        return Partition(tuple((k, self.m_copies) for k in range(self.k_max, -1, -1)))


def fixed_block_prior(cfg: FixedBlockConfig, delta_phi: float,
                      node_count: int | None = None) -> PriorGrid:
    """Gaussian prior gridded for the scheme's fastest outcome structure.

    The count distribution varies on the scale of the largest block frequency
    times the per-quadrature copy count, so resolve that product.
    """
    f_eff = float(cfg.quadrature_copies * 2 ** cfg.k_max)
    if node_count is None:
        node_count = default_node_count(12.0 * delta_phi, f_eff)
    return gaussian_prior(delta_phi, node_count)


def _fixed_block_tables(cfg: FixedBlockConfig, phi: np.ndarray):
    """Per-block-size dual-quadrature count pmf tables over the phase grid.

    Element [k][q][n, j] is the probability of n even-parity outcomes among
    the M/2 copies of the 2^k-qubit block read in quadrature q at phi_j.
    """
    m2 = cfg.quadrature_copies
    counts = np.arange(m2 + 1)
    tables = []
    for k in range(cfg.k_max + 1):
        angle = (2 ** k) * phi
        px = 0.5 * (1.0 + np.cos(angle))
        py = 0.5 * (1.0 + np.sin(angle))
        tables.append((_binom_pmf(counts[:, None], m2, px[None, :]),
                       _binom_pmf(counts[:, None], m2, py[None, :])))
    return tables


def fixed_block_outcome_probs(cfg: FixedBlockConfig, phi: float) -> np.ndarray:
    """Joint pmf over the full (n_x, n_y) outcome lattice at a single phase.

    Lattice axes run k = 0..k_max, each contributing an (M/2+1)^2 factor;
    the flattened order matches fixed_block_bmse's exact enumeration.  Only
    sensible for small configs; guarded by EXACT_OUTCOME_CAP.
    """
    if cfg.outcome_lattice_size > EXACT_OUTCOME_CAP:
        raise BudgetExceeded(
            f"outcome lattice has {cfg.outcome_lattice_size} cells; cap is {EXACT_OUTCOME_CAP}")
    tables = _fixed_block_tables(cfg, np.asarray([float(phi)]))
    joint = np.ones(1)
    for tx, ty in tables:
        pair = (tx[:, None, 0] * ty[None, :, 0]).ravel()
        joint = (joint[:, None] * pair[None, :]).ravel()
    return joint


def _bit_by_bit_decode(nx: np.ndarray, ny: np.ndarray, m_copies: int) -> np.ndarray:
    """Vectorized binary-digit decoder.

    nx, ny have shape (k_max+1, ...) of even-parity counts per block size,
    ascending k.  Returns phases in [-pi, pi).
    """
    c = 2.0 * nx / m_copies - 0.5
    s = 2.0 * ny / m_copies - 0.5
    t = np.arctan2(s, c)
    k_max = t.shape[0] - 1
    # bit j from the pair of neighboring per-frequency estimates
    acc = t[k_max] / 2.0 ** k_max
    for j in range(1, k_max + 1):
        z = np.rint((2.0 * t[j - 1] - t[j]) / (2.0 * math.pi)).astype(int) % 2
        acc = acc + 2.0 * math.pi * z * 2.0 ** (-j)
    return (acc + math.pi) % (2.0 * math.pi) - math.pi


def bit_by_bit_estimate(counts, m_copies: int) -> float:
    """Binary-digit phase estimate from dual-quadrature counts.

    counts is a sequence of (n_x, n_y) pairs, one per block size ascending
    k = 0..k_max; each count is the number of even-parity outcomes among the
    M/2 copies read in that quadrature.  Each frequency's phase is estimated
    as arg((2 n_x / M - 1/2) + i (2 n_y / M - 1/2)); neighboring estimates
    fix the binary digits, the finest estimate fixes the remainder, and the
    assembled phase is wrapped to [-pi, pi).
    """
    arr = np.asarray(counts, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"counts must be (k_max+1, 2), got shape {arr.shape}")
    m2 = m_copies // 2
    if np.any(arr < 0) or np.any(arr > m2):
        raise ValueError(f"counts must lie in [0, {m2}]")
    return float(_bit_by_bit_decode(arr[:, 0], arr[:, 1], m_copies))


def _fixed_block_exact(cfg: FixedBlockConfig, prior: PriorGrid, estimator: str) -> BmseResult:
    w = prior.pweights
    phi = prior.nodes
    wphi = w * phi
    m2 = float(w @ phi ** 2)
    tables = _fixed_block_tables(cfg, phi)
    grid = phi.size
    mq = cfg.quadrature_copies
    counts1 = np.arange(mq + 1)
    pair_x = np.repeat(counts1, mq + 1)
    pair_y = np.tile(counts1, mq + 1)
    pairs = pair_x.size
    # fold block sizes into one materialized joint until the row budget hits;
    # remaining block sizes are looped outcome by outcome
    row_cap = max(pairs, (1 << 22) // grid)
    joint = np.ones((1, grid))
    lead_x = np.zeros((0, 1), dtype=int)
    lead_y = np.zeros((0, 1), dtype=int)
    merged = 0
    for k in range(cfg.k_max + 1):
        if joint.shape[0] * pairs > row_cap:
            break
        tx, ty = tables[k]
        pair_tbl = tx[pair_x] * ty[pair_y]
        rows = joint.shape[0]
        joint = (joint[:, None, :] * pair_tbl[None, :, :]).reshape(rows * pairs, grid)
        lead_x = np.vstack([np.repeat(lead_x, pairs, axis=1),
                            np.tile(pair_x, rows)[None, :]])
        lead_y = np.vstack([np.repeat(lead_y, pairs, axis=1),
                            np.tile(pair_y, rows)[None, :]])
        merged += 1
    gain = 0.0
    s_ea = 0.0
    s_e2b = 0.0
    total_mass = 0.0

    def flush(rows_probs, cx, cy):
        nonlocal gain, s_ea, s_e2b, total_mass
        b = rows_probs @ w
        a = rows_probs @ wphi
        total_mass += float(np.sum(b))
        if estimator == "bayes":
            mask = b > _TINY
            gain += float(np.sum(a[mask] ** 2 / b[mask]))
        else:
            e = _bit_by_bit_decode(cx, cy, cfg.m_copies)
            s_ea += float(e @ a)
            s_e2b += float((e ** 2) @ b)

    tail = list(range(merged, cfg.k_max + 1))
    if not tail:
        flush(joint, lead_x, lead_y)
    else:
        n_rows = joint.shape[0]
        for combo in itertools.product(range(pairs), repeat=len(tail)):
            weight_row = np.ones(grid)
            const_x = []
            const_y = []
            for k, pair_i in zip(tail, combo):
                tx, ty = tables[k]
                weight_row = weight_row * tx[pair_x[pair_i]] * ty[pair_y[pair_i]]
                const_x.append(pair_x[pair_i])
                const_y.append(pair_y[pair_i])
            cx = np.vstack([lead_x] + [np.full((1, n_rows), v, dtype=int) for v in const_x])
            cy = np.vstack([lead_y] + [np.full((1, n_rows), v, dtype=int) for v in const_y])
            flush(joint * weight_row[None, :], cx, cy)
    if abs(total_mass - 1.0) > 1e-6:
        raise ArithmeticError(
            f"outcome mass {total_mass} deviates from 1; refine the prior grid")
    if estimator == "bayes":
        value = m2 - gain
    else:
        value = m2 - 2.0 * s_ea + s_e2b
    return BmseResult(value, 0.0, 0, exact=True)


def _fixed_block_mc(cfg: FixedBlockConfig, prior: PriorGrid, estimator: str,
                    mc: MCConfig) -> BmseResult:
    w = prior.pweights
    phi_grid = prior.nodes
    wphi = w * phi_grid
    tables = _fixed_block_tables(cfg, phi_grid)
    mq = cfg.quadrature_copies
    moments = _ErrMoments()
    for rng, size in _mc_chunks(mc):
        phi = sample_phases(prior, rng, size)
        nx = np.empty((cfg.k_max + 1, size), dtype=int)
        ny = np.empty((cfg.k_max + 1, size), dtype=int)
        for k in range(cfg.k_max + 1):
            angle = (2 ** k) * phi
            nx[k] = rng.binomial(mq, 0.5 * (1.0 + np.cos(angle)))
            ny[k] = rng.binomial(mq, 0.5 * (1.0 + np.sin(angle)))
        if estimator == "bayes":
            like = np.ones((size, phi_grid.size))
            for k in range(cfg.k_max + 1):
                tx, ty = tables[k]
                like *= tx[nx[k]]
                like *= ty[ny[k]]
            den = like @ w
            num = like @ wphi
            est = np.where(den > _TINY, num / np.maximum(den, _TINY), 0.0)
        else:
            est = _bit_by_bit_decode(nx, ny, cfg.m_copies)
        moments.add((phi - est) ** 2)
    return moments.result(mc)


def fixed_block_bmse(cfg: FixedBlockConfig, prior: PriorGrid,
                     estimator: str = "bayes", mc: MCConfig | None = None) -> BmseResult:
    """Bayesian MSE of the fixed-block dual-quadrature scheme.

    estimator "bayes" uses optimal per-outcome estimators; "bit-by-bit" uses
    the binary-digit decoder.  Without an MCConfig the joint outcome lattice
    is enumerated exactly (refusing lattices above EXACT_OUTCOME_CAP); with
    one, outcomes are sampled and the standard error reported.
    """
    if estimator not in ("bayes", "bit-by-bit"):
        raise ValueError(f"unknown estimator {estimator!r}")
    if mc is None:
        if cfg.outcome_lattice_size > EXACT_OUTCOME_CAP:
            raise BudgetExceeded(
                f"outcome lattice {cfg.outcome_lattice_size} exceeds "
                f"{EXACT_OUTCOME_CAP}; pass an MCConfig")
        return _fixed_block_exact(cfg, prior, estimator)
    return _fixed_block_mc(cfg, prior, estimator, mc)


# ---------------------------------------------------------------------------
# varying-block scheme


@dataclass(frozen=True)
class VaryingBlockConfig:
    """Non-adaptive GHZ-block schedule with linearly growing copy counts.

    Block size 2^k is repeated m_top + mu * (k_max - k) times; copy j of a
    size-2^k block is measured with the rotation theta_j = pi j / m_k applied
    to the accumulated phase 2^k phi.
    """

    k_max: int
    m_top: int = 2
    mu: int = 3

    def __post_init__(self):
        if self.k_max < 0:
            raise ValueError(f"k_max must be >= 0, got {self.k_max}")
        if self.m_top < 1 or self.mu < 0:
            raise ValueError("need m_top >= 1 and mu >= 0")

    def copies(self, k: int) -> int:
        if not 0 <= k <= self.k_max:
            raise ValueError(f"k must lie in [0, {self.k_max}], got {k}")
        return self.m_top + self.mu * (self.k_max - k)

    @property
    def block_counts(self) -> tuple:
        """(k, copies) pairs, largest block first."""
        return tuple((k, self.copies(k)) for k in range(self.k_max, -1, -1))

    @property
    def n_total(self) -> int:
        return sum(m * 2 ** k for k, m in self.block_counts)

    @property
    def n_steps(self) -> int:
        return sum(m for _, m in self.block_counts)

    def rotation_angles(self, k: int) -> np.ndarray:
        m = self.copies(k)
        return math.pi * np.arange(m) / m

    def to_partition(self) -> Partition:
        return Partition(self.block_counts)

    @staticmethod
    def suitable_n(k_max: int) -> int:
        """Total qubits of the default schedule: 5 * 2^(k_max+1) - 3 k_max - 8."""
        return 5 * 2 ** (k_max + 1) - 3 * k_max - 8


def varying_block_prior(cfg: VaryingBlockConfig, delta_phi: float,
                        node_count: int | None = None) -> PriorGrid:
    """Gaussian prior gridded to resolve the largest block frequency."""
    if node_count is None:
        node_count = default_node_count(12.0 * delta_phi, float(2 ** cfg.k_max))
    return gaussian_prior(delta_phi, node_count)


def _varying_steps(cfg: VaryingBlockConfig, with_rotations: bool):
    """Flat (frequency, absolute rotation) schedule, largest blocks first."""
    steps = []
    for k, m in cfg.block_counts:
        angles = cfg.rotation_angles(k) if with_rotations else np.zeros(m)
        for theta in angles:
            steps.append((float(2 ** k), float(theta)))
    return steps


def varying_block_plan(cfg: VaryingBlockConfig, prior: PriorGrid,
                       with_rotations: bool = True) -> MeasurementPlan:
    """The schedule as a (non-adaptive) measurement plan, exact-eval sized.

    Every tree node of a level carries the same angle, since the scheme never
    branches on outcomes.  Plans require n_steps <= the exact-enumeration cap.
    """
    steps = _varying_steps(cfg, with_rotations)
    m = len(steps)
    order = tuple(f for f, _ in steps)
    rotations = np.zeros(2 ** m - 1)
    for level, (f, theta) in enumerate(steps):
        # the engine rotates phase as f*(phi - rot): rot = theta / f
        rotations[2 ** level - 1:2 ** (level + 1) - 1] = theta / f
    return MeasurementPlan(cfg.to_partition(), order, rotations, prior)


def _varying_mc(cfg: VaryingBlockConfig, prior: PriorGrid, with_rotations: bool,
                mc: MCConfig) -> BmseResult:
    steps = _varying_steps(cfg, with_rotations)
    w = prior.pweights
    phi_grid = prior.nodes
    wphi = w * phi_grid
    rows = [np.cos(f * phi_grid - theta) for f, theta in steps]
    moments = _ErrMoments()
    for rng, size in _mc_chunks(mc):
        phi = sample_phases(prior, rng, size)
        like = np.ones((size, phi_grid.size))
        for (f, theta), row in zip(steps, rows):
            p_even = 0.5 + 0.5 * np.cos(f * phi - theta)
            outcome = np.where(rng.random(size) < p_even, 1.0, -1.0)
            like *= 0.5 + 0.5 * outcome[:, None] * row[None, :]
        den = like @ w
        num = like @ wphi
        est = np.where(den > _TINY, num / np.maximum(den, _TINY), 0.0)
        moments.add((phi - est) ** 2)
    return moments.result(mc)


def varying_block_bmse(cfg: VaryingBlockConfig, prior: PriorGrid,
                       with_rotations: bool = True,
                       mc: MCConfig | None = None) -> BmseResult:
    """Bayesian MSE of the varying-block schedule.

    Exact branch enumeration whenever the step count permits it and no
    MCConfig is given; otherwise seeded Monte Carlo.
    """
    if mc is None:
        if cfg.n_steps > adaptive.MAX_PLAN_STEPS:
            raise BudgetExceeded(
                f"{cfg.n_steps} steps exceed the exact cap "
                f"{adaptive.MAX_PLAN_STEPS}; pass an MCConfig")
        plan = varying_block_plan(cfg, prior, with_rotations)
        return BmseResult(adaptive.bmse(plan), 0.0, 0, exact=True)
    return _varying_mc(cfg, prior, with_rotations, mc)


# ---------------------------------------------------------------------------
# large-N saturation floors


def plateau_hl(delta_phi: float, node_count: int = 4096) -> float:
    """Large-N floor of the Heisenberg-limited BMSE for a Gaussian prior.

    Residual variance once the phase is known perfectly modulo 2 pi: the
    wrap-summed posterior over the image lattice keeps the 2 pi ambiguity.
    """
    if not delta_phi > 0.0:
        raise ValueError(f"delta_phi must be positive, got {delta_phi}")
    theta, u = composite_gauss_legendre(-math.pi, math.pi, node_count)
    k_range = int(math.ceil((_WRAP_SIGMAS * delta_phi + math.pi) / (2.0 * math.pi)))
    num = np.zeros_like(theta)
    den = np.zeros_like(theta)
    inv2d2 = 0.5 / delta_phi ** 2
    for k in range(-k_range, k_range + 1):
        phik = theta + 2.0 * math.pi * k
        g = np.exp(-phik ** 2 * inv2d2)
        num += phik * g
        den += g
    norm = 1.0 / math.sqrt(2.0 * math.pi * delta_phi ** 2)
    integral = norm * float(u @ (num ** 2 / den))
    return delta_phi ** 2 - integral


def plateau_sql(delta_phi: float, node_count: int = 4096) -> float:
    """Large-N floor of the coherent-spin-state BMSE for a Gaussian prior.

    The single-quadrature readout cannot distinguish phi from pi - phi, so
    each wrap image contributes both reflections.
    """
    if not delta_phi > 0.0:
        raise ValueError(f"delta_phi must be positive, got {delta_phi}")
    theta, u = composite_gauss_legendre(-math.pi / 2.0, math.pi / 2.0, node_count)
    k_range = 1 + int(math.ceil((_WRAP_SIGMAS * delta_phi + math.pi) / (2.0 * math.pi)))
    num = np.zeros_like(theta)
    den = np.zeros_like(theta)
    inv2d2 = 0.5 / delta_phi ** 2
    for k in range(-k_range, k_range + 1):
        phik = theta + 2.0 * math.pi * k
        mirror = math.pi - phik
        g = np.exp(-phik ** 2 * inv2d2)
        h = np.exp(-mirror ** 2 * inv2d2)
        num += phik * g + mirror * h
        den += g + h
    norm = 1.0 / math.sqrt(2.0 * math.pi * delta_phi ** 2)
    integral = norm * float(u @ (num ** 2 / den))
    return delta_phi ** 2 - integral


# ---------------------------------------------------------------------------
# bounds and sanity checks


def qcrb_bound(partition: Partition) -> float:
    """Quantum Cramer-Rao lower bound on the MSE: 1 / sum_k m_k 2^(2k)."""
    total = sum(m * 4 ** k for k, m in partition.blocks)
    return 1.0 / float(total)


def sine_qft_distribution(n_total: int, phi: float) -> np.ndarray:
    """Outcome pmf of the Fourier-basis readout of the phase-evolved sine state."""
    if n_total < 1:
        raise ValueError(f"n_total must be >= 1, got {n_total}")
    dim = n_total + 1
    m = np.arange(dim)
    psi = np.sqrt(2.0 / (dim + 1)) * np.sin(math.pi * (m + 1) / (dim + 1))
    evolved = psi * np.exp(-1j * phi * m)
    amps = np.exp(2j * math.pi * np.outer(m, m) / dim) @ evolved / math.sqrt(dim)
    return np.abs(amps) ** 2


def sine_qft_check(n_total: int, phi: float):
    """(mean, variance) of the Fourier-readout index for the sine state.

    The variance approaches 1/4 for large N; the mean tracks N phi / (2 pi).
    """
    if n_total < 16:
        raise ValueError(f"n_total must be >= 16, got {n_total}")
    p = sine_qft_distribution(n_total, phi)
    k = np.arange(p.size)
    mean = float(p @ k)
    var = float(p @ (k - mean) ** 2)
    return mean, var
