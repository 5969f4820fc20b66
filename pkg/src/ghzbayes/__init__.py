"""Bayesian phase estimation with blocks of GHZ states.

Library layout:

- prior:      prior densities on composite Gauss-Legendre quadrature grids
- partitions: power-of-two block partitions and frequency-basis spectra
- oqi:        optimal-interferometer benchmark (best probe + measurement)
- adaptive:   adaptive parity-measurement trees and their optimization
- schemes:    non-adaptive reference schemes, plateaus, and bounds
- noise:      dephasing/damping/preparation noise and error detection
- unwind:     phase unwinding for priors wider than the invertible range
- clock:      Allan deviation of an atomic clock run with these protocols
- cli:        command line front end (`ghzbayes` or `python -m ghzbayes`)
"""

from .errors import BudgetExceeded
from .prior import PriorGrid, gaussian_prior, uniform_prior, composite_gauss_legendre
from .partitions import (Partition, FrequencySpectrum, enumerate_partitions,
                         count_partitions, frequency_amplitudes)
from .oqi import OqiSolution, optimal_L, propagate, solve_oqi, sine_state
from .adaptive import (MeasurementPlan, BranchTable, OptimizeResult, SelectionResult,
                       new_plan, branch_probability, bayes_estimators, bmse,
                       bmse_gradient, bmse_with_estimators, mse_curve,
                       optimize_plan, rank_partitions, select_best_partition)
from .schemes import (MCConfig, BmseResult, CssStatistics, FixedBlockConfig,
                      VaryingBlockConfig, css_statistics, css_bmse,
                      ghz_parity_bmse, solve_fixed_block_M, fixed_block_bmse,
                      bit_by_bit_estimate, varying_block_prior,
                      varying_block_plan, varying_block_bmse, plateau_hl,
                      plateau_sql, qcrb_bound, metrological_gain_db,
                      fixed_block_rbmse_prediction, corrected_hl_rbmse,
                      oqi_rbmse_fit, sine_qft_distribution, sine_qft_check)
from .noise import (NoiseModel, damped_parity_probs, bitflip_contrast,
                    error_detected_parity_probs, noisy_plan_bmse,
                    reoptimize_under_noise, fit_gain_decay)
from .unwind import (ExtendedPartition, RescaleResult, UnwindAllocation,
                     rescale, unrescale, frame_pair, estimate_P,
                     posterior_after_P, stage_one_rms, adaptive_unwind_bmse,
                     nonadaptive_unwind_bmse, best_baseline_allocation,
                     best_unwind_partition)
from .clock import (ClockConfig, AllanPoint, slip_variance,
                    effective_uncertainty, fundamental_limit,
                    optimal_interrogation, allan_deviation, allan_curve)

__version__ = "0.1.0"
