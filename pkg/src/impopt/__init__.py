"""Online optimization with internal-model controllers.

Tracks the minimizers of time-varying linearly constrained quadratic (and
mildly non-quadratic) problems with controllers designed from the internal
model of the problem data, certified by a robust LMI.
"""

from .algorithms import Algorithm, StepSizes, TrackingTrace, run, tune_step_sizes
from .lmi import LmiCertificate, LmiInfeasible, LmiInstance, LmiNumericalError, solve_lmi
from .problems import (QuadraticStream, SpectralBounds, StreamParams, build_stream,
                       oracle_trajectory)
from .signals import Polynomial, SignalKind, SignalSpec, internal_model, multi_harmonic_model
from .synthesis import (ControllerRealization, EigenInterval, SynthesisFailure, eigen_interval,
                        synthesize, tau_select, verify_robust_stability)

__version__ = "0.1.0"
