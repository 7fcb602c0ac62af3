"""Generalized linear contextual bandits with doubly robust Thompson sampling.

The submodules are usable on their own:

* ``glm``: mean functions, the ridge-GLM solver and Gram matrices
* ``estimators``: pseudo-rewards and the NMLE / imputation / DDR estimator chain
* ``policies``: DDRTS-GLM plus GLM-UCB, TS(GLM) and uniform baselines
* ``environments``: synthetic contexts, rewards, regret and replay logs
* ``harness``: seeded runs, grid search and aggregation
"""
from .environments import (
    ReplayLog,
    SyntheticEnvironment,
    SyntheticSpec,
    generate_replay_log,
    min_eigen_diagnostic,
    read_replay_log,
    replay_evaluate,
    write_replay_log,
)
from .estimators import EstimatorState, History, pseudo_rewards, update_state
from .glm import ContextSet, GramMatrix, MeanFunction, linear_mean, logistic_mean, solve_ridge_glm
from .harness import ExperimentConfig, aggregate, grid_search, run_episode, run_experiment
from .policies import PolicyConfig, adjust_probs, ddrts_hyperparams, ddrts_select, make_policy

__version__ = "0.1.0"

__all__ = [
    "ContextSet", "EstimatorState", "ExperimentConfig", "GramMatrix", "History", "MeanFunction",
    "PolicyConfig", "ReplayLog", "SyntheticEnvironment", "SyntheticSpec", "adjust_probs",
    "aggregate", "ddrts_hyperparams", "ddrts_select", "generate_replay_log", "grid_search",
    "linear_mean", "logistic_mean", "make_policy", "min_eigen_diagnostic", "pseudo_rewards",
    "read_replay_log", "replay_evaluate", "run_episode", "run_experiment", "solve_ridge_glm",
    "update_state", "write_replay_log",
]
