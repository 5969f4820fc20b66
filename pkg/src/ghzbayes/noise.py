"""Noise channels folded into parity contrast, and gain-decay fitting.

Amplitude damping during interrogation, bit-flip readout errors, and
preparation infidelity all act on a GHZ block by shrinking the contrast of
its parity fringe; the outcome probabilities stay (1 +- C cos(k(phi-rot)))/2.
That is why plan evaluation under noise reduces to the noiseless engine with
per-step contrast factors.  Error-detected readout (keeping only outcomes in
the code space) is modeled with its explicit three-outcome law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import adaptive
from .adaptive import MeasurementPlan, OptimizeResult


@dataclass(frozen=True)
class NoiseModel:
    """Per-qubit noise rates folded into per-block parity contrast.

    p_a is the amplitude-decay probability per qubit over the interrogation,
    p_e the bit-flip probability per qubit at readout, f0 the effective
    preparation fidelity per qubit.  A k-qubit block keeps contrast
    (1-p_a)^(k/2) * (1-2*p_e)^k * f0^k.
    """

    p_a: float = 0.0
    p_e: float = 0.0
    f0: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.p_a <= 1.0:
            raise ValueError(f"p_a must lie in [0, 1], got {self.p_a}")
        if not 0.0 <= self.p_e <= 0.5:
            raise ValueError(f"p_e must lie in [0, 1/2], got {self.p_e}")
        if not 0.0 < self.f0 <= 1.0:
            raise ValueError(f"f0 must lie in (0, 1], got {self.f0}")

    @property
    def is_identity(self) -> bool:
        return self.p_a == 0.0 and self.p_e == 0.0 and self.f0 == 1.0

    def contrast(self, k):
        """Parity contrast retained by a block of k qubits."""
        k = np.asarray(k, dtype=float)
        c = ((1.0 - self.p_a) ** (0.5 * k)
             * (1.0 - 2.0 * self.p_e) ** k
             * self.f0 ** k)
        return float(c) if c.ndim == 0 else c

    def contrasts_for(self, order) -> np.ndarray:
        """Per-step contrast factors for a plan's sensing-frequency order."""
        return np.asarray(self.contrast(np.asarray(order, dtype=float)), dtype=float)


IDENTITY = NoiseModel()


def damped_parity_probs(k: int, p_a: float, phi, rotation: float = 0.0):
    """(p_even, p_odd) for a k-qubit block under amplitude damping.

    The damping commutes with the phase encoding, so only the fringe contrast
    (1-p_a)^(k/2) is affected.  Vectorized over phi.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not 0.0 <= p_a <= 1.0:
        raise ValueError(f"p_a must lie in [0, 1], got {p_a}")
    fringe = (1.0 - p_a) ** (0.5 * k) * np.cos(k * (np.asarray(phi, dtype=float) - rotation))
    return 0.5 * (1.0 + fringe), 0.5 * (1.0 - fringe)


def bitflip_contrast(k: int, p_e: float) -> float:
    """Contrast (1-2*p_e)^k left by independent per-qubit readout bit flips.

    Equals the even-minus-odd binomial flip-count sum exactly.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not 0.0 <= p_e <= 0.5:
        raise ValueError(f"p_e must lie in [0, 1/2], got {p_e}")
    return (1.0 - 2.0 * p_e) ** k


def error_detected_parity_probs(k: int, p_a: float, phi):
    """(p_even, p_odd, p_discard) for damped readout with error detection.

    Outcomes outside the code space (any qubit decayed) are discarded with
    probability (1 - (1-p_a)^k)/2; the kept outcomes follow
    (1 + (1-p_a)^k +- 2(1-p_a)^(k/2) cos(k phi))/4.  Vectorized over phi.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if not 0.0 <= p_a <= 1.0:
        raise ValueError(f"p_a must lie in [0, 1], got {p_a}")
    phi = np.asarray(phi, dtype=float)
    keep = (1.0 - p_a) ** k
    fringe = 2.0 * (1.0 - p_a) ** (0.5 * k) * np.cos(k * phi)
    p_even = 0.25 * (1.0 + keep + fringe)
    p_odd = 0.25 * (1.0 + keep - fringe)
    p_discard = 0.5 * (1.0 - keep) * np.ones_like(phi)
    if phi.ndim == 0:
        return float(p_even), float(p_odd), float(p_discard)
    return p_even, p_odd, p_discard


def noisy_plan_bmse(plan: MeasurementPlan, noise: NoiseModel, *,
                    prior=None) -> float:
    """BMSE of a plan evaluated under contrast-damping noise.

    Estimators are re-derived for the noisy outcome model.  An identity
    noise model reproduces the noiseless BMSE exactly.  prior, when given,
    replaces the plan's prior before evaluation.
    """
    if prior is not None:
        plan = MeasurementPlan(plan.partition, plan.order, plan.rotations, prior)
    return adaptive.bmse(plan, contrasts=noise.contrasts_for(plan.order))


def reoptimize_under_noise(plan: MeasurementPlan, noise: NoiseModel,
                           **optimizer_kwargs) -> OptimizeResult:
    """Re-run rotation optimization with the noisy outcome model."""
    return adaptive.optimize_plan(
        plan, contrasts=noise.contrasts_for(plan.order), **optimizer_kwargs)


def fit_gain_decay(points, variable: str = "f0"):
    """Least-squares exponential-decay fit of gain points; returns (A, B).

    points is a sequence of (x, gain) pairs.  variable "f0" fits
    gain = A * exp(-B * (1 - f0)); variable "p_e" fits
    gain = A * exp(-2 * B * p_e).  The fit is linear in log space.
    """
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise ValueError("need at least 3 (x, gain) pairs")
    x, gain = pts[:, 0], pts[:, 1]
    if np.any(gain <= 0.0):
        raise ValueError("gains must be positive for a log-space fit")
    if variable == "f0":
        t = 1.0 - x
        scale = 1.0
    elif variable == "p_e":
        t = x
        scale = 2.0
    else:
        raise ValueError(f"unknown variable {variable!r}")
    slope, intercept = np.polyfit(t, np.log(gain), 1)
    return math.exp(intercept), -slope / scale
