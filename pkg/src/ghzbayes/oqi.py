"""Optimal Bayesian interferometer benchmark in the collective frequency basis.

A symmetric probe state of n_total qubits lives in the (n_total+1)-dimensional
frequency basis; phase accumulation multiplies matrix element (a, b) by
e^(-i phi (a-b)).  For a fixed probe, the best measurement-plus-estimator is a
Hermitian operator L solving the anticommutator equation {L, rho_bar} =
2 rho_bar', where rho_bar and rho_bar' are the prior-averaged state and its
first-moment-weighted average.  Alternating the L solve with a probe update
(extremal eigenvector of the estimator-risk operator) converges to the optimal
interferometer; its Bayesian mean squared error lower-bounds every physical
scheme at the same qubit number and prior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import toeplitz

from .prior import PriorGrid, gaussian_prior, default_node_count

# relative eigenvalue-sum cutoff of the anticommutator pseudo-inverse
PINV_CUTOFF = 1e-12


@dataclass(frozen=True)
class PhaseKernels:
    """Prior integrals of e^(+-i phi d) needed for averaging states.

    t0[a, b] = integral P(phi) e^(-i phi (a-b));  t1 carries an extra phi.
    """

    dim: int
    t0: np.ndarray = field(repr=False)
    t1: np.ndarray = field(repr=False)
    delta_sq: float


def phase_kernels(prior: PriorGrid, dim: int) -> PhaseKernels:
    d = np.arange(dim)
    phases = np.exp(-1j * np.outer(d, prior.nodes))
    w = prior.pweights
    c0 = phases @ w
    c1 = phases @ (w * prior.nodes)
    t0 = toeplitz(c0, np.conj(c0))
    t1 = toeplitz(c1, np.conj(c1))
    var = float(w @ prior.nodes ** 2)
    return PhaseKernels(dim, t0, t1, var)


def propagate(rho: np.ndarray, phi: float) -> np.ndarray:
    """Apply phase accumulation: element (a, b) gains e^(-i phi (a-b))."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"rho must be square, got shape {rho.shape}")
    a = np.arange(rho.shape[0])
    return rho * np.exp(-1j * phi * (a[:, None] - a[None, :]))


def _check_state(rho: np.ndarray):
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"rho must be square, got shape {rho.shape}")
    if not np.allclose(rho, rho.conj().T, atol=1e-10):
        raise ValueError("rho must be Hermitian")
    tr = complex(np.trace(rho)).real
    if abs(tr - 1.0) > 1e-8:
        raise ValueError(f"rho must have unit trace, got {tr}")


@dataclass(frozen=True)
class EstimatorSolve:
    """Result of the anticommutator solve for a fixed probe state."""

    L: np.ndarray = field(repr=False)
    bmse: float
    truncated: bool  # pseudo-inverse dropped eigenvalue pairs below cutoff


def optimal_L(rho: np.ndarray, prior: PriorGrid, *,
              kernels: PhaseKernels | None = None) -> EstimatorSolve:
    """Best measurement-estimator operator for probe rho under the prior.

    Solves {L, rho_bar} = 2 rho_bar' in the eigenbasis of rho_bar with a
    pseudo-inverse (relative cutoff PINV_CUTOFF on eigenvalue-pair sums) and
    returns the achieved bmse = var(prior) - Tr(rho_bar L^2).
    """
    rho = np.asarray(rho, dtype=complex)
    _check_state(rho)
    dim = rho.shape[0]
    if kernels is None or kernels.dim < dim:
        kernels = phase_kernels(prior, dim)
    t0 = kernels.t0[:dim, :dim]
    t1 = kernels.t1[:dim, :dim]
    rho_bar = rho * t0
    rho_bar_p = rho * t1
    lam, vec = np.linalg.eigh(rho_bar)
    lam = np.clip(lam, 0.0, None)
    pair_sums = lam[:, None] + lam[None, :]
    cutoff = PINV_CUTOFF * max(lam.max(), np.finfo(float).tiny)
    keep = pair_sums > cutoff
    rp_eig = vec.conj().T @ rho_bar_p @ vec
    l_eig = np.where(keep, 2.0 * rp_eig, 0.0)
    np.divide(l_eig, pair_sums, out=l_eig, where=keep)
    # bmse = var - Tr(rho_bar L^2), evaluated in the eigenbasis
    gain = float(np.einsum("i,ij->", lam, np.abs(l_eig) ** 2).real)
    L = vec @ l_eig @ vec.conj().T
    return EstimatorSolve(L, kernels.delta_sq - gain, bool(np.any(~keep)))


def sine_state(n_total: int) -> np.ndarray:
    """Sine-profile amplitudes over 0..n_total; near-optimal wide-prior probe."""
    m = np.arange(n_total + 1)
    return np.sqrt(2.0 / (n_total + 2)) * np.sin(np.pi * (m + 1) / (n_total + 2))


@dataclass(frozen=True)
class OqiSolution:
    dim: int
    rho: np.ndarray = field(repr=False)
    L: np.ndarray = field(repr=False)
    bmse: float
    iterations: int
    converged: bool
    truncated: bool
    bmse_trace: tuple = field(repr=False, default=())


def _iterate(rho, kernels, tol, max_iter):
    dim = kernels.dim
    t0c = np.conj(kernels.t0)
    t1c = np.conj(kernels.t1)
    trace = []
    solve = None
    for it in range(1, max_iter + 1):
        solve = optimal_L(rho, None, kernels=kernels)
        trace.append(solve.bmse)
        if len(trace) > 1:
            rel = abs(trace[-2] - trace[-1]) / max(abs(trace[-1]), 1e-300)
            if rel < tol:
                return rho, solve, it, True, trace
        # probe update: minimal eigenvector of the estimator-risk operator
        L = solve.L
        x = (L @ L) * t0c - 2.0 * L * t1c
        w, v = np.linalg.eigh(x)
        psi = v[:, 0]
        rho = np.outer(psi, psi.conj())
    return rho, solve, max_iter, False, trace


def solve_oqi(n_total: int, prior: PriorGrid, *, tol: float = 1e-10,
              max_iter: int = 1000, restarts: int = 1, seed: int = 0) -> OqiSolution:
    """Minimal Bayesian MSE over all n_total-qubit symmetric probes.

    Alternates estimator solves with probe updates from a sine-profile start;
    extra restarts perturb the start with seeded random states and keep the
    best converged answer.
    """
    if n_total < 1:
        raise ValueError(f"n_total must be >= 1, got {n_total}")
    kernels = phase_kernels(prior, n_total + 1)
    starts = [sine_state(n_total).astype(complex)]
    for r in range(1, restarts):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(r,)))
        psi = rng.standard_normal(n_total + 1) + 1j * rng.standard_normal(n_total + 1)
        starts.append(psi / np.linalg.norm(psi))
    best = None
    for psi in starts:
        rho0 = np.outer(psi, psi.conj())
        rho, solve, its, conv, trace = _iterate(rho0, kernels, tol, max_iter)
        sol = OqiSolution(n_total + 1, rho, solve.L, solve.bmse, its, conv,
                          solve.truncated, tuple(trace))
        if best is None or sol.bmse < best.bmse:
            best = sol
    return best


def oqi_prior_for(n_total: int, delta_phi: float, node_count: int | None = None) -> PriorGrid:
    """Gaussian prior gridded finely enough for frequency differences up to n_total."""
    if node_count is None:
        node_count = default_node_count(12.0 * delta_phi, n_total)
    return gaussian_prior(delta_phi, node_count)
