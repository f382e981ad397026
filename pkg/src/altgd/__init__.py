"""Alternating gradient descent and its competitors on network matrix games."""

from .dynamics import (
    ALGORITHMS,
    Budget,
    JointState,
    LearningRates,
    Trajectory,
    run,
    step_2alt_gd,
    step_alt_gd_multi,
    step_opt_gd,
    step_opt_gd_cached,
    step_round_gd,
    step_sim_gd,
)
from .game import (
    BilinearGame,
    MetaGame,
    NetworkGame,
    classify_game,
    learning_rate_threshold,
    make_network_game,
    nash_residual,
    reduce_to_meta,
    shift_linear_payouts,
    spectral_norm,
    weighted_norm,
)

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS", "BilinearGame", "Budget", "JointState", "LearningRates", "MetaGame",
    "NetworkGame", "Trajectory", "classify_game", "learning_rate_threshold",
    "make_network_game", "nash_residual", "reduce_to_meta", "run", "shift_linear_payouts",
    "spectral_norm", "step_2alt_gd", "step_alt_gd_multi", "step_opt_gd", "step_opt_gd_cached",
    "step_round_gd", "step_sim_gd", "weighted_norm",
]
