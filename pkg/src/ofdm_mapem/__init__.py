"""Joint MAP-EM estimation of sparse OFDM channels and carrier frequency offset."""

from .base import SparseChannelEstimator
from .estimator import EmOptions, EmResult, ReparamState, map_em, ml_em
from .harness import SweepReport, TrialResult, detect_symbols, nmse, run_monte_carlo
from .posterior import ObservedFrame, SymbolPrior, posterior_batch, posterior_sequential
from .signal_model import ChannelImpulseResponse, simulate_received
from .simulator import ExperimentConfig, FrameInstance, generate_frame, load_instance, persist_instance

__all__ = [
    "ChannelImpulseResponse",
    "EmOptions",
    "EmResult",
    "ExperimentConfig",
    "FrameInstance",
    "ObservedFrame",
    "ReparamState",
    "SparseChannelEstimator",
    "SweepReport",
    "SymbolPrior",
    "TrialResult",
    "detect_symbols",
    "generate_frame",
    "load_instance",
    "map_em",
    "ml_em",
    "nmse",
    "persist_instance",
    "posterior_batch",
    "posterior_sequential",
    "run_monte_carlo",
    "simulate_received",
]
