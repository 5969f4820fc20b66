"""Clock stability: posterior widths translated into Allan deviations.

A local oscillator with linewidth gamma_lo accumulates phase for a Ramsey
time T, giving a Gaussian prior of width delta_phi = gamma_lo * T per
interrogation cycle.  The fractional-frequency Allan deviation over a total
time tau composed of tau/T cycles is

    sigma_y(tau; T) = (1 / (omega_a * sqrt(tau T)))
                      * sqrt(eff_var(T) + (tau / T) * slip_var(gamma_lo T))

where eff_var is the effective posterior variance of the chosen readout
protocol (prior information removed) and slip_var the 2 pi k mis-assignment
penalty.  The reported stability minimizes over T on a logarithmic grid with
golden-section refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import erf

from .prior import composite_gauss_legendre, default_node_count
from .schemes import _binom_pmf

__all__ = [
    "PROTOCOLS",
    "ClockConfig",
    "AllanPoint",
    "slip_variance",
    "effective_uncertainty",
    "allan_deviation",
    "optimal_interrogation",
    "allan_curve",
    "fundamental_limit",
]

PROTOCOLS = ("uncorrelated", "ghz", "best-classical", "oqc")

_TINY = 1e-300
_EXP_MAX = 709.0
# base Ramsey-time grid in units of the oscillator coherence time 1/gamma_lo:
# 200 log-spaced points per decade spanning [1e-4, 1e+2]
_GRID_LO, _GRID_HI = -4.0, 2.0
_GRID_PER_DECADE = 200
_BASE_GT = np.logspace(_GRID_LO, _GRID_HI,
                       int((_GRID_HI - _GRID_LO) * _GRID_PER_DECADE) + 1)
_LOG_BASE_GT = np.log(_BASE_GT)
# prior widths beyond this are never competitive (the slip penalty dominates)
# and the informative part of the readout has saturated, so wider table
# entries reuse the capped value
_WIDTH_CAP = 3.0
# below this width a single fold branch carries all prior mass and the
# shared [-pi, pi) grid under-resolves the density, so a dedicated narrow
# grid is used instead
_NARROW_WIDTH = 0.02


@dataclass(frozen=True)
class ClockConfig:
    """Oscillator, atom, and protocol parameters for one clock."""

    gamma_lo: float
    gamma_ind: float
    omega_a: float
    n_atoms: int
    protocol: str = "uncorrelated"

    def __post_init__(self) -> None:
        if not (math.isfinite(self.gamma_lo) and self.gamma_lo > 0.0):
            raise ValueError(f"gamma_lo must be positive: {self.gamma_lo}")
        if not (math.isfinite(self.gamma_ind) and self.gamma_ind >= 0.0):
            raise ValueError(f"gamma_ind must be >= 0: {self.gamma_ind}")
        if not (math.isfinite(self.omega_a) and self.omega_a > 0.0):
            raise ValueError(f"omega_a must be positive: {self.omega_a}")
        if self.n_atoms < 1:
            raise ValueError(f"n_atoms must be >= 1, got {self.n_atoms}")
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"protocol must be one of {PROTOCOLS}: "
                             f"{self.protocol!r}")


@dataclass(frozen=True)
class AllanPoint:
    """One point of a stability curve: the minimizing T and its sigma_y."""

    tau: float
    t_opt: float
    sigma_y: float


def slip_variance(delta_phi: float) -> float:
    """Mean-squared 2 pi k error of a phase known only modulo 2 pi.

    For phi ~ N(0, delta_phi^2) estimated within [-pi, pi), the residual
    (2 k pi)^2 penalty summed over fold bins k; the series is truncated once
    terms drop below 1e-15.
    """
    if not delta_phi > 0.0:
        raise ValueError(f"delta_phi must be positive: {delta_phi}")
    scale = 1.0 / (math.sqrt(2.0) * delta_phi)
    total = 0.0
    k = 1
    while True:
        ks = np.arange(k, k + 64, dtype=float)
        terms = (2.0 * ks * math.pi) ** 2 * (
            erf((2.0 * ks + 1.0) * math.pi * scale)
            - erf((2.0 * ks - 1.0) * math.pi * scale))
        total += float(terms.sum())
        if terms[-1] < 1e-15:
            break
        k += 64
    return total


_slip_cached = lru_cache(maxsize=65536)(slip_variance)


def effective_uncertainty(bmse: float, delta_phi: float) -> float:
    """Posterior width with the prior information subtracted out.

    [(bmse)^{-1} - (delta_phi)^{-2}]^{-1/2}: the uncertainty the measurement
    alone would leave, meaningful only for an informative readout
    (bmse < delta_phi^2).
    """
    if not delta_phi > 0.0:
        raise ValueError(f"delta_phi must be positive: {delta_phi}")
    if not 0.0 < bmse < delta_phi ** 2:
        raise ValueError(f"bmse must lie in (0, delta_phi^2): bmse={bmse}, "
                         f"delta_phi^2={delta_phi ** 2}")
    return 1.0 / math.sqrt(1.0 / bmse - 1.0 / delta_phi ** 2)


def fundamental_limit(tau: float, n_atoms: int, gamma_ind: float,
                      omega_a: float) -> float:
    """Stability floor set by individual-particle decay."""
    if tau <= 0.0 or n_atoms < 1 or gamma_ind <= 0.0 or omega_a <= 0.0:
        raise ValueError("tau, n_atoms, gamma_ind, omega_a must be positive")
    return math.sqrt(2.0 * gamma_ind / (tau * n_atoms)) / omega_a


# ---------------------------------------------------------------------------
# spin-coherent readout: slip-free effective variance, tabulated per width


@lru_cache(maxsize=8)
def _css_shared(n_atoms: int):
    nodes = max(512, default_node_count(
        2.0 * math.pi, 4.0 * math.sqrt(n_atoms)))
    theta, u = composite_gauss_legendre(-math.pi, math.pi, nodes)
    q = np.sin(0.5 * theta + 0.25 * math.pi) ** 2
    pmf = _binom_pmf(np.arange(n_atoms + 1)[:, None], n_atoms, q[None, :])
    return theta, u, pmf


def _css_eff2_one(n_atoms: int, width: float) -> float:
    """Slip-free effective variance at one prior width.

    The binomial likelihood is 2 pi periodic, so integrals split into fold
    branches; keeping the branch label in the outcome removes the fold
    ambiguity from the estimator (slips are charged separately by
    slip_variance).  bmse * m2 / reduction is the cancellation-free form of
    the effective variance.
    """
    width = min(width, _WIDTH_CAP)
    if width < _NARROW_WIDTH:
        # all prior mass sits in one fold branch, on scales the shared
        # [-pi, pi) grid cannot resolve
        half = 8.0 * width
        count = max(512, default_node_count(
            2.0 * half, 4.0 * math.sqrt(n_atoms)))
        theta, u = composite_gauss_legendre(-half, half, count)
        q = np.sin(0.5 * theta + 0.25 * math.pi) ** 2
        pmf = _binom_pmf(np.arange(n_atoms + 1)[:, None], n_atoms,
                         q[None, :])
        j_max = 0
    else:
        theta, u, pmf = _css_shared(n_atoms)
        j_max = int(math.ceil((8.0 * width + math.pi) / (2.0 * math.pi)))
    norm = 1.0 / (width * math.sqrt(2.0 * math.pi))
    m2 = 0.0
    reduction = 0.0
    for j in range(-j_max, j_max + 1):
        phi = theta + 2.0 * math.pi * j
        w0 = u * norm * np.exp(-0.5 * (phi / width) ** 2)
        b = pmf @ w0
        a = pmf @ (w0 * phi)
        m2 += float(w0 @ phi ** 2)
        mask = b > _TINY
        reduction += float(np.sum(a[mask] ** 2 / b[mask]))
    if reduction <= 0.0:
        return math.inf
    return (m2 - reduction) * m2 / reduction


@lru_cache(maxsize=8)
def _css_eff2_table(n_atoms: int) -> np.ndarray:
    return np.log([_css_eff2_one(n_atoms, gt) for gt in _BASE_GT])


def _css_eff2(n_atoms: int, width):
    """Table interpolation (log-log), clamped at both grid ends."""
    return np.exp(np.interp(np.log(width), _LOG_BASE_GT,
                            _css_eff2_table(n_atoms)))


# ---------------------------------------------------------------------------
# per-protocol effective variance and the stability objective


def _effective_variance(cfg: ClockConfig, t: float) -> float:
    """Effective posterior variance of one cycle of length t."""
    n = cfg.n_atoms
    width = cfg.gamma_lo * t
    if cfg.protocol == "oqc":
        # idealized: individual decay neglected for this bound
        return (math.pi / n) ** 2
    if cfg.protocol == "best-classical":
        decay = 2.0 * cfg.gamma_ind * t
        return math.inf if decay > _EXP_MAX else math.exp(decay) / n
    if cfg.protocol == "ghz":
        x = (n * width) ** 2
        # log-safe closed form (e^x - x)/n^2; contrast decays n-fold faster
        log_eff2 = x + (math.log1p(-x * math.exp(-x)) if x < _EXP_MAX else 0.0)
        log_eff2 += 2.0 * n * cfg.gamma_ind * t - 2.0 * math.log(n)
        return math.inf if log_eff2 > _EXP_MAX else math.exp(log_eff2)
    decay = 2.0 * cfg.gamma_ind * t
    if decay > _EXP_MAX:
        return math.inf
    return float(_css_eff2(n, width)) * math.exp(decay)


def _slips_suppressed(cfg: ClockConfig) -> bool:
    # phase unwinding extends the dynamic range for these protocols
    return cfg.protocol in ("best-classical", "oqc")


def _sigma_y(cfg: ClockConfig, tau: float, t: float) -> float:
    eff2 = _effective_variance(cfg, t)
    if not math.isfinite(eff2):
        return math.inf
    slip = 0.0 if _slips_suppressed(cfg) else _slip_cached(cfg.gamma_lo * t)
    return math.sqrt(eff2 + (tau / t) * slip) / (cfg.omega_a *
                                                 math.sqrt(tau * t))


def _t_grid(cfg: ClockConfig, tau: float) -> np.ndarray:
    base = _BASE_GT / cfg.gamma_lo
    hi = base[-1]
    if tau > hi:
        extra_decades = math.log10(tau / hi)
        count = int(math.ceil(extra_decades * _GRID_PER_DECADE)) + 1
        base = np.concatenate([base, np.logspace(
            math.log10(hi), math.log10(tau), count + 1)[1:]])
    grid = base[base <= tau]
    if grid.size == 0 or grid[-1] < tau:
        grid = np.append(grid, tau)
    return grid


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_refine(cfg: ClockConfig, tau: float, lo: float,
                   hi: float) -> tuple[float, float]:
    """Minimize sigma_y over log T in [lo, hi]; returns (t, sigma_y)."""
    a, b = math.log(lo), math.log(hi)
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc = _sigma_y(cfg, tau, math.exp(c))
    fd = _sigma_y(cfg, tau, math.exp(d))
    for _ in range(40):
        if b - a < 1e-12:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = _sigma_y(cfg, tau, math.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = _sigma_y(cfg, tau, math.exp(d))
    t = math.exp(0.5 * (a + b))
    return t, _sigma_y(cfg, tau, t)


def optimal_interrogation(cfg: ClockConfig, tau: float) -> AllanPoint:
    """Best Ramsey time and the resulting Allan deviation at total time tau."""
    if not (math.isfinite(tau) and tau > 0.0):
        raise ValueError(f"tau must be positive and finite: {tau}")
    grid = _t_grid(cfg, tau)
    values = np.array([_sigma_y(cfg, tau, float(t)) for t in grid])
    i = int(np.argmin(values))
    lo = float(grid[max(i - 1, 0)])
    hi = float(grid[min(i + 1, grid.size - 1)])
    t_ref, s_ref = _golden_refine(cfg, tau, lo, hi)
    if values[i] < s_ref:
        t_ref, s_ref = float(grid[i]), float(values[i])
    return AllanPoint(tau=tau, t_opt=t_ref, sigma_y=s_ref)


def allan_deviation(cfg: ClockConfig, tau: float) -> float:
    """Allan deviation minimized over the interrogation time."""
    return optimal_interrogation(cfg, tau).sigma_y


def allan_curve(cfg: ClockConfig,
                taus: "np.ndarray | list[float]") -> tuple[AllanPoint, ...]:
    """Stability curve over a set of total interrogation times."""
    return tuple(optimal_interrogation(cfg, float(tau)) for tau in taus)
