"""Bounded MLE, imputation and double doubly-robust (DDR) estimators.

The chain for round ``t`` is

1. ``bounded_mle``: selected-arm GLM fit, radially projected onto ``|beta| <= S``;
2. ``imputation_estimator``: ridge GLM over all ``N t`` contexts with
   pseudo-rewards imputed from the bounded MLE;
3. ``ddr_estimator``: ridge GLM over the same rows with *every* past
   pseudo-reward rebuilt from the latest imputation estimate.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .glm import (
    ContextSet,
    GLMConvergenceError,
    GramMatrix,
    gram_update,
    MeanFunction,
    SolverConfig,
    solve_ridge_glm,
)

# Fallback ridge for the selected-arm MLE, which need not exist early on.
NMLE_RIDGE = 1e-6


@dataclass(frozen=True)
class RoundRecord:
    context_set: ContextSet
    chosen_arm: int
    reward: float
    selection_probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.selection_probs, dtype=float)
        n = self.context_set.n_arms
        if p.shape != (n,):
            raise ValueError(f"expected {n} selection probabilities, got shape {p.shape}")
        if not 0 <= self.chosen_arm < n:
            raise ValueError(f"chosen arm {self.chosen_arm} outside [0, {n})")
        if abs(p.sum() - 1.0) > 1e-9 or np.any(p <= 0):
            raise ValueError("selection probabilities must be positive and sum to 1")
        if not np.isfinite(self.reward):
            raise ValueError("reward must be finite")
        p.setflags(write=False)
        object.__setattr__(self, "selection_probs", p)


class History:
    """Append-only log of rounds, stored as stacked arrays.

    Arms are 0-based internally. ``reward_bound`` (``B``) and ``min_prob``
    are only used to validate incoming records.
    """

    def __init__(self, n_arms: int, dim: int, reward_bound: float = 1.0,
                 min_prob: float = 0.0, capacity: int = 64):
        self.n_arms = int(n_arms)
        self.dim = int(dim)
        self.reward_bound = float(reward_bound)
        self.min_prob = float(min_prob)
        capacity = max(int(capacity), 1)
        self._contexts = np.empty((capacity, self.n_arms, self.dim))
        self._arms = np.empty(capacity, dtype=np.int64)
        self._rewards = np.empty(capacity)
        self._probs = np.empty((capacity, self.n_arms))
        self._len = 0

    def __len__(self) -> int:
        return self._len

    def _grow(self):
        cap = 2 * self._arms.size
        for name in ("_contexts", "_arms", "_rewards", "_probs"):
            old = getattr(self, name)
            new = np.empty((cap,) + old.shape[1:], dtype=old.dtype)
            new[: self._len] = old[: self._len]
            setattr(self, name, new)

    def append(self, record: RoundRecord) -> None:
        cs = record.context_set
        if cs.contexts.shape != (self.n_arms, self.dim):
            raise ValueError(
                f"context set of shape {cs.contexts.shape}, history expects {(self.n_arms, self.dim)}"
            )
        if abs(record.reward) > self.reward_bound:
            raise ValueError(f"|reward| = {abs(record.reward)} exceeds bound {self.reward_bound}")
        if np.any(record.selection_probs < self.min_prob - 1e-12):
            raise ValueError(f"selection probability below floor {self.min_prob}")
        if self._len == self._arms.size:
            self._grow()
        k = self._len
        self._contexts[k] = cs.contexts
        self._arms[k] = record.chosen_arm
        self._rewards[k] = record.reward
        self._probs[k] = record.selection_probs
        self._len += 1

    def record(self, k: int) -> RoundRecord:
        return RoundRecord(ContextSet(self._contexts[k], k + 1), int(self._arms[k]),
                           float(self._rewards[k]), self._probs[k])

    @property
    def contexts(self) -> np.ndarray:
        """All contexts, shape (t, N, d)."""
        return self._contexts[: self._len]

    @property
    def arms(self) -> np.ndarray:
        return self._arms[: self._len]

    @property
    def rewards(self) -> np.ndarray:
        return self._rewards[: self._len]

    @property
    def probs(self) -> np.ndarray:
        return self._probs[: self._len]

    @property
    def selected_contexts(self) -> np.ndarray:
        """Contexts of the played arms, shape (t, d)."""
        return self.contexts[np.arange(self._len), self.arms]

    @property
    def flat_contexts(self) -> np.ndarray:
        """All contexts stacked row-wise, shape (t * N, d)."""
        return self.contexts.reshape(-1, self.dim)


# ---------------------------------------------------------------------------
# Pseudo-rewards
# ---------------------------------------------------------------------------


def pseudo_reward(record: RoundRecord, arm: int, imputer, mf: MeanFunction) -> float:
    """Inverse-propensity corrected reward of ``arm`` at the round of ``record``.

    ``{1 - I(a=i)/pi_i} mu(x_i' imputer) + I(a=i)/pi_i * Y``
    """
    pi = float(record.selection_probs[arm])
    if pi <= 0:
        raise ValueError(f"selection probability of arm {arm} is zero")
    imputed = float(mf.mu(np.dot(record.context_set.contexts[arm], imputer)))
    ind = 1.0 if record.chosen_arm == arm else 0.0
    return (1.0 - ind / pi) * imputed + ind / pi * record.reward


def pseudo_rewards(history: History, imputer, mf: MeanFunction) -> np.ndarray:
    """Pseudo-rewards of every arm in every round, shape (t, N), one imputer for all rounds."""
    t = len(history)
    imputed = mf.mu(history.contexts @ np.asarray(imputer, dtype=float))
    rows = np.arange(t)
    pi = history.probs[rows, history.arms]
    if np.any(pi <= 0):
        raise ValueError("zero selection probability for a played arm")
    out = imputed.copy()
    out[rows, history.arms] = (1.0 - 1.0 / pi) * imputed[rows, history.arms] + history.rewards / pi
    return out


def per_round_pseudo_rewards(history: History, imputers, mf: MeanFunction) -> np.ndarray:
    """Pseudo-rewards with round ``tau`` imputed from ``imputers[tau]`` (plain DR targets)."""
    imputers = np.asarray(imputers, dtype=float)
    t = len(history)
    imputed = mf.mu(np.einsum("tnd,td->tn", history.contexts, imputers[:t]))
    rows = np.arange(t)
    pi = history.probs[rows, history.arms]
    out = imputed.copy()
    out[rows, history.arms] = (1.0 - 1.0 / pi) * imputed[rows, history.arms] + history.rewards / pi
    return out


# ---------------------------------------------------------------------------
# The estimator chain
# ---------------------------------------------------------------------------


def project_to_ball(beta, radius: float) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    norm = float(np.linalg.norm(beta))
    if norm > radius:
        return beta * (radius / norm)
    return beta


def _solve(X, y, lam, mf, init, cfg: SolverConfig, what: str, t: int, dim: int):
    try:
        return solve_ridge_glm(X, y, lam, mf, init=init, tol=cfg.tol, max_iter=cfg.max_iter,
                               dim=dim, armijo=cfg.armijo)
    except GLMConvergenceError as exc:
        raise GLMConvergenceError(f"{what} at round {t}: {exc}", exc.residual, exc.beta) from exc


def bounded_mle(history: History, s_bound: float, mf: MeanFunction,
                solver_cfg: SolverConfig = SolverConfig(), init=None,
                ridge: float = NMLE_RIDGE) -> np.ndarray:
    """Selected-arm GLM estimate projected onto the ball of radius ``s_bound``."""
    if len(history) == 0:
        raise ValueError("bounded MLE needs at least one round")
    raw = _solve(history.selected_contexts, history.rewards, ridge, mf, init, solver_cfg,
                 "bounded MLE", len(history), history.dim)
    return project_to_ball(raw, s_bound)


def _bounded_mle_raw(history, mf, solver_cfg, init, ridge=NMLE_RIDGE):
    return _solve(history.selected_contexts, history.rewards, ridge, mf, init, solver_cfg,
                  "bounded MLE", len(history), history.dim)


def imputation_estimator(history: History, nmle, lam: float, mf: MeanFunction,
                         solver_cfg: SolverConfig = SolverConfig(), init=None) -> np.ndarray:
    """Ridge GLM over all ``N t`` contexts with pseudo-rewards imputed from ``nmle``."""
    targets = pseudo_rewards(history, nmle, mf).reshape(-1)
    return _solve(history.flat_contexts, targets, lam, mf, init, solver_cfg,
                  "imputation estimator", len(history), history.dim)


def ddr_estimator(history: History, imputer, lam: float, mf: MeanFunction,
                  solver_cfg: SolverConfig = SolverConfig(), init=None) -> np.ndarray:
    """DDR estimate: every past pseudo-reward is rebuilt from the current ``imputer``."""
    targets = pseudo_rewards(history, imputer, mf).reshape(-1)
    return _solve(history.flat_contexts, targets, lam, mf, init, solver_cfg,
                  "DDR estimator", len(history), history.dim)


def ddr_score(history: History, beta, imputer, lam: float, mf: MeanFunction) -> np.ndarray:
    """``U_t(beta)``, evaluated directly from the history."""
    targets = pseudo_rewards(history, imputer, mf)
    resid = targets - mf.mu(history.contexts @ np.asarray(beta, dtype=float))
    return np.einsum("tn,tnd->d", resid, history.contexts) - lam * np.asarray(beta)


def dr_estimator(history: History, imputers, lam: float, mf: MeanFunction,
                 solver_cfg: SolverConfig = SolverConfig(), init=None) -> np.ndarray:
    """Plain DR estimate with per-round imputers; kept for comparison with DDR."""
    targets = per_round_pseudo_rewards(history, imputers, mf).reshape(-1)
    return _solve(history.flat_contexts, targets, lam, mf, init, solver_cfg,
                  "DR estimator", len(history), history.dim)


@dataclass
class EstimatorState:
    """Current outputs of the estimator chain plus the Gram matrix ``V_t``."""

    bounded_mle: np.ndarray
    imputation: np.ndarray
    ddr: np.ndarray
    gram: GramMatrix
    bound_s: float
    ridge: float
    t: int = 0
    raw_mle: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def initial(cls, dim: int, bound_s: float, ridge: float) -> "EstimatorState":
        z = np.zeros(dim)
        return cls(z.copy(), z.copy(), z.copy(), GramMatrix.initial(dim, ridge),
                   float(bound_s), float(ridge), 0, z.copy())

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "bound_s": self.bound_s,
            "ridge": self.ridge,
            "bounded_mle": self.bounded_mle.tolist(),
            "imputation": self.imputation.tolist(),
            "ddr": self.ddr.tolist(),
            "raw_mle": None if self.raw_mle is None else self.raw_mle.tolist(),
            "gram": self.gram.matrix.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "EstimatorState":
        return cls(
            bounded_mle=np.asarray(data["bounded_mle"], dtype=float),
            imputation=np.asarray(data["imputation"], dtype=float),
            ddr=np.asarray(data["ddr"], dtype=float),
            gram=GramMatrix(np.asarray(data["gram"], dtype=float), float(data["ridge"])),
            bound_s=float(data["bound_s"]),
            ridge=float(data["ridge"]),
            t=int(data["t"]),
            raw_mle=None if data.get("raw_mle") is None else np.asarray(data["raw_mle"], dtype=float),
        )

    @classmethod
    def from_json(cls, text: str) -> "EstimatorState":
        return cls.from_dict(json.loads(text))


def update_state(state: EstimatorState, history: History, mf: MeanFunction,
                 solver_cfg: SolverConfig = SolverConfig(), *,
                 gram_mode: str = "exact", refit: bool = True,
                 nmle_ridge: float = NMLE_RIDGE) -> EstimatorState:
    """Run one round of the chain after the latest record has been appended.

    The Gram matrix reweights contexts by ``mu'(x' beta_hat_{t-1})`` using the
    DDR estimate held in ``state``. ``gram_mode="exact"`` reweights every
    stored context; ``"frozen"`` only adds the newest round's contexts
    (weights fixed at insertion time, an approximation). With ``refit=False``
    the Gram matrix is updated but the estimators are carried over.
    """
    t = len(history)
    prev = state.ddr
    if gram_mode == "exact":
        X = history.flat_contexts
        gram = GramMatrix.from_contexts(X, mf.mu_prime(X @ prev), state.ridge)
    elif gram_mode == "frozen":
        new = history.contexts[t - 1]
        gram = gram_update(state.gram, new, mf.mu_prime(new @ prev))
    else:
        raise ValueError(f"unknown gram mode {gram_mode!r}")
    if not refit:
        return EstimatorState(state.bounded_mle, state.imputation, state.ddr, gram,
                              state.bound_s, state.ridge, t, state.raw_mle)
    raw = _bounded_mle_raw(history, mf, solver_cfg, state.raw_mle, nmle_ridge)
    nmle = project_to_ball(raw, state.bound_s)
    imp = imputation_estimator(history, nmle, state.ridge, mf, solver_cfg, init=state.imputation)
    ddr = ddr_estimator(history, imp, state.ridge, mf, solver_cfg, init=state.ddr)
    return EstimatorState(nmle, imp, ddr, gram, state.bound_s, state.ridge, t, raw)
