"""Modeling and correcting detector dead time in periodic photon counting."""

from .correction import (CorrectionResult, InverseProblem, corrected_histogram,
                         forward_operator, gate_vector, gradient, init_fixed_point,
                         lipschitz_bound, objective, solve_mchc)
from .errors import (CapacityError, ConfigError, ConvergenceError, DeadTimeError,
                     DegenerateModelError, DegenerateResultError, InsufficientDataError,
                     InvalidIntervalError, UnsupportedModeError)
from .estimators import (Method, References, estimate_background_ml, estimate_depth,
                         estimate_lambda_ml, estimate_signal, log_matched_filter,
                         shift_correction_offset, wrap_delay)
from .markov import (StationaryResult, TransitionKernel, build_kernel, detection_pdf,
                     fisher_information, fisher_tau_to_depth, spectral_gap,
                     stationary_distribution, transition_pdf)
from .scene import (BinGrid, SceneModel, arrival_pdf, bin_masses, cumulative_intensity,
                    intensity_at)
from .simulate import (BinnedHistogram, EventSequence, apply_dead_time, bin_detections,
                       interdetection_periods, low_flux_keep_prob, sample_arrivals, thin)

__version__ = "0.1.0"
