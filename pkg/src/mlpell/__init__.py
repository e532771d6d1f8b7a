"""Multilevel Picard (MLP) estimators for semilinear elliptic PDEs."""
from .core import (DiffusionMatrix, LyapunovFunction, ManufacturedForcing, Nonlinearity, Problem,
                   ValidationReport, Variant, apply_diffusion, contraction_factor, lipschitz_probe,
                   lyapunov_trace_bound, lyapunov_value, validate_problem)
from .costs import cost_bound, cost_recursion_exact
from .mlp import (CostTally, MlpEstimate, MlpParams, NonFiniteError, SampleBudgetExceeded,
                  compiled_available, empirical_rmse, mlp_estimate, mlp_replicate)
from .randomness import DrawTally, StreamKey, derive_stream, sample_exponential, sample_point

__version__ = "0.1.0"
