"""Exact numerical laboratory for score-based discrete diffusion on small sequence spaces."""

from .errors import (
    CapacityError,
    DomainError,
    HypothesisError,
    KernelError,
    LabError,
    ModeError,
    NumericError,
    SupportError,
    UsageError,
)
from .space import SequenceSpace
from .rates import RateSpec, Schedule, apply_generator, cumulative_beta, token_rate
from .evolve import (
    Distribution,
    approx_reverse,
    closed_form_kernel,
    closed_form_marginal,
    duality_residual,
    exact_reverse,
    forward_marginal,
    forward_trajectory,
    solve_kbe,
)
from .score import ExactScore, LossReport, PerturbedScore, bregman, exact_score

__version__ = "0.1.0"
