"""Few-step residual-shifting diffusion super-resolution with LR-guided noise prediction."""

from .diffusion import (
    NoiseStrategy,
    ReverseMoments,
    deterministic_state,
    forward_marginal,
    forward_transition,
    init_state,
    optimal_noise,
    posterior_params,
    reverse_moments,
    reverse_step,
)
from .errors import LPNSRError
from .estimators import RegressionUpsampler, ResidualShiftSR
from .schedule import DiffusionSchedule, build_schedule

__version__ = "0.1.0"

__all__ = [
    "DiffusionSchedule",
    "LPNSRError",
    "NoiseStrategy",
    "RegressionUpsampler",
    "ResidualShiftSR",
    "ReverseMoments",
    "build_schedule",
    "deterministic_state",
    "forward_marginal",
    "forward_transition",
    "init_state",
    "optimal_noise",
    "posterior_params",
    "reverse_moments",
    "reverse_step",
]
