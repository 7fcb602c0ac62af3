"""Arm-selection policies.

Functional building blocks (``sample_candidates``, ``adjust_probs``,
``ddrts_select`` ...) plus stateful policy objects sharing one interface::

    arm, info = policy.select(context_set, rng)
    policy.update(context_set, arm, reward, info)

Arms are 0-based everywhere in the library; only file formats are 1-based.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .estimators import NMLE_RIDGE, EstimatorState, History, RoundRecord, update_state
from .glm import ContextSet, GramMatrix, MeanFunction, SolverConfig, logistic_mean, solve_ridge_glm


class ConfigError(ValueError):
    """Invalid policy or experiment configuration."""


def _check_gamma(n_arms: int, gamma: float) -> None:
    if not (1.0 / (n_arms + 1) <= gamma < 1.0 / n_arms):
        raise ConfigError(
            f"gamma={gamma} outside [1/(N+1), 1/N) = [{1 / (n_arms + 1):.6g}, {1 / n_arms:.6g})"
        )


@dataclass(frozen=True)
class PolicyConfig:
    """Hyperparameters of DDRTS-GLM.

    ``gamma`` defaults to ``1/(N+1)`` when left as ``None``.
    """

    n_arms: int
    v: float = 0.1
    lam: float = 1.0
    gamma: float | None = None
    delta: float = 0.1
    s_bound: float = 1.0
    mc_samples: int = 1000
    solver: SolverConfig = field(default_factory=SolverConfig)
    gram_mode: str = "exact"
    update_every: int = 1
    nmle_ridge: float = NMLE_RIDGE

    def __post_init__(self):
        if self.gamma is None:
            object.__setattr__(self, "gamma", 1.0 / (self.n_arms + 1))
        _check_gamma(self.n_arms, self.gamma)
        if self.v < 0:
            raise ConfigError("v must be nonnegative")
        if self.lam <= 0:
            raise ConfigError("lambda must be positive")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if self.s_bound <= 0:
            raise ConfigError("S must be positive")
        if self.mc_samples < 100:
            raise ConfigError("mc_samples must be at least 100")
        if self.gram_mode not in ("exact", "frozen"):
            raise ConfigError(f"gram_mode must be 'exact' or 'frozen', got {self.gram_mode!r}")
        if self.update_every < 1:
            raise ConfigError("update_every must be >= 1")


@dataclass(frozen=True)
class SelectionProbabilities:
    raw: np.ndarray
    adjusted: np.ndarray
    epsilon: float


def ddrts_hyperparams(n_arms: int, gamma: float, delta: float, t: int,
                      mf: MeanFunction) -> dict:
    """Theoretical exploration scale ``v`` and resampling cap ``M_t``.

    ``v = (kappa/L1) * {2 log(N / (1 - gamma N))}^{-1/2}`` and
    ``M_t = ceil(log(t^2/delta) / log(1/(1-gamma)))``.
    """
    _check_gamma(n_arms, gamma)
    if not 0 < delta < 1:
        raise ConfigError("delta must lie in (0, 1)")
    if t < 1:
        raise ConfigError("t must be >= 1")
    v = (mf.kappa / mf.l1) / math.sqrt(2.0 * math.log(n_arms / (1.0 - gamma * n_arms)))
    m_t = math.log(t * t / delta) / math.log(1.0 / (1.0 - gamma))
    return {"v": v, "m_t": int(math.ceil(m_t - 1e-12))}


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def _argmax_low(values, axis=-1):
    # np.argmax returns the first maximal index, i.e. ties go to the lowest arm.
    return np.argmax(values, axis=axis)


def sample_coefficients(mean, gram: GramMatrix, v: float, rng, size: int = 1,
                        chol: np.ndarray | None = None) -> np.ndarray:
    """Draw ``size`` vectors from ``N(mean, v^2 gram^{-1})``.

    With ``gram = R R'`` the draw is ``mean + v R'^{-1} z``.
    """
    mean = np.asarray(mean, dtype=float)
    z = rng.standard_normal((size, mean.size))
    if v == 0:
        return np.broadcast_to(mean, z.shape).copy()
    r = gram.cholesky() if chol is None else chol
    return mean + v * linalg.solve_triangular(r, z.T, lower=True, trans="T").T


def _linear_draws(estimator, gram, contexts, v, rng, size, chol=None):
    """Sampled ``x_i' beta_i`` for ``size`` joint draws, shape (size, N).

    Arms draw independent coefficient vectors, so each projection is exactly
    ``N(x_i' beta_hat, v^2 x_i' V^{-1} x_i)`` and independent across arms;
    drawing these scalars directly is equivalent to projecting full draws.
    """
    contexts = np.asarray(contexts, dtype=float)
    base = contexts @ np.asarray(estimator, dtype=float)
    z = rng.standard_normal((size, contexts.shape[0]))
    if v == 0:
        return np.broadcast_to(base, z.shape).copy()
    r = gram.cholesky() if chol is None else chol
    w = linalg.solve_triangular(r, contexts.T, lower=True)
    scale = v * np.sqrt(np.sum(w * w, axis=0))
    return base + z * scale


def sample_candidates(estimator, gram: GramMatrix, context_set: ContextSet, v: float, rng,
                      mf: MeanFunction | None = None, chol=None):
    """One Thompson draw: an independent coefficient vector per arm.

    Returns ``(sampled_rewards, candidate)`` where ``sampled_rewards[i] =
    mu(x_i' beta_i)`` and ``candidate`` is the argmax (lowest index on ties).
    """
    mf = mf or logistic_mean()
    x = context_set.contexts
    n = x.shape[0]
    betas = sample_coefficients(estimator, gram, v, rng, size=n, chol=chol)
    rewards = mf.mu(np.einsum("nd,nd->n", x, betas))
    return rewards, int(_argmax_low(rewards))


def estimate_selection_probs(estimator, gram: GramMatrix, context_set: ContextSet, v: float,
                             mc_samples: int, rng, chol=None):
    """Monte-Carlo selection probabilities from one batch of ``mc_samples`` joint draws.

    Returns ``(raw, first_candidate)``; the candidate is the argmax of the
    batch's first draw so one batch serves both purposes.
    """
    if mc_samples < 1:
        raise ValueError("mc_samples must be positive")
    x = context_set.contexts
    draws = _linear_draws(estimator, gram, x, v, rng, mc_samples, chol)
    # mu is monotone, so the argmax can be taken on the linear scale
    winners = _argmax_low(draws, axis=1)
    raw = np.bincount(winners, minlength=x.shape[0]) / float(mc_samples)
    return raw, int(winners[0])


def adjust_probs(raw, gamma: float) -> SelectionProbabilities:
    """Floor small probabilities at ``gamma/2`` and share the rest equally among the others."""
    raw = np.asarray(raw, dtype=float)
    n = raw.size
    _check_gamma(n, gamma)
    keep = raw > gamma
    k = int(keep.sum())
    if k == 0:
        raise AssertionError("no arm above gamma although raw probabilities sum to one")
    eps = (1.0 - (n - k) * gamma / 2.0 - k * gamma) / k
    adjusted = np.where(keep, gamma + eps, gamma / 2.0)
    return SelectionProbabilities(raw, adjusted, float(eps))


@dataclass(frozen=True)
class DDRTSChoice:
    arm: int
    probs: SelectionProbabilities
    resamples: int


def ddrts_select(state: EstimatorState, context_set: ContextSet, cfg: PolicyConfig, t: int,
                 rng, mf: MeanFunction | None = None, sampler=None) -> DDRTSChoice:
    """Thompson candidate with resampling while its probability is at most ``gamma``.

    ``sampler(rng) -> (raw, candidate)`` may replace the Monte-Carlo batch
    (used to force the resampling branch in tests).
    """
    if t < 2:
        raise ValueError("round 1 is played uniformly at random")
    mf = mf or logistic_mean()
    n_arms = context_set.n_arms
    m_t = ddrts_hyperparams(n_arms, cfg.gamma, cfg.delta, t, mf)["m_t"]
    if sampler is None:
        chol = state.gram.cholesky()

        def sampler(r):
            return estimate_selection_probs(state.ddr, state.gram, context_set, cfg.v,
                                            cfg.mc_samples, r, chol=chol)

    n = 1
    while True:
        raw, cand = sampler(rng)
        if raw[cand] <= cfg.gamma and n <= m_t:
            n += 1
            continue
        break
    return DDRTSChoice(int(cand), adjust_probs(raw, cfg.gamma), n - 1)


def glm_ucb_select(history: History, context_set: ContextSet, alpha: float,
                   mf: MeanFunction, solver_cfg: SolverConfig = SolverConfig(),
                   init=None, ridge: float = 1.0):
    """Upper-confidence arm: ``argmax mu(x' beta) + alpha ||x||_{A^{-1}}``.

    ``beta`` is the ridge-GLM fit on the played arms; ``A = sum x x' + I``.
    Returns ``(arm, beta)``.
    """
    beta, gram = _selected_fit(history, context_set.dim, mf, solver_cfg, init, ridge)
    x = context_set.contexts
    scores = mf.mu(x @ beta) + alpha * gram.norm_inv(x)
    return int(_argmax_low(scores)), beta


def ts_glm_select(history: History, context_set: ContextSet, v: float, mf: MeanFunction,
                  rng, solver_cfg: SolverConfig = SolverConfig(), init=None, ridge: float = 1.0):
    """One shared draw ``beta ~ N(beta_hat, v^2 A^{-1})``; play ``argmax mu(x' beta)``.

    Returns ``(arm, beta_hat)``.
    """
    beta, gram = _selected_fit(history, context_set.dim, mf, solver_cfg, init, ridge)
    draw = sample_coefficients(beta, gram, v, rng, size=1)[0]
    return int(_argmax_low(mf.mu(context_set.contexts @ draw))), beta


def _selected_fit(history, dim, mf, solver_cfg, init, ridge):
    if history is None or len(history) == 0:
        X = np.empty((0, dim))
        y = np.empty(0)
    else:
        X = history.selected_contexts
        y = history.rewards
    beta = solve_ridge_glm(X, y, ridge, mf, init=init, tol=solver_cfg.tol,
                           max_iter=solver_cfg.max_iter, dim=dim)
    return beta, GramMatrix.from_contexts(X, np.ones(X.shape[0]), ridge)


def uniform_random_select(context_set: ContextSet, rng) -> int:
    return int(rng.integers(context_set.n_arms))


# ---------------------------------------------------------------------------
# Policy objects
# ---------------------------------------------------------------------------


class Policy:
    """Common interface; subclasses keep their own history."""

    name = "policy"

    def __init__(self, n_arms: int, dim: int, mf: MeanFunction | None = None):
        self.n_arms = n_arms
        self.dim = dim
        self.mf = mf or logistic_mean()
        self.t = 0
        self.history = History(n_arms, dim, reward_bound=np.inf)

    def select(self, context_set: ContextSet, rng) -> tuple[int, dict]:
        raise NotImplementedError

    def update(self, context_set: ContextSet, arm: int, reward: float, info: dict) -> None:
        probs = info.get("probs")
        if probs is None:
            probs = np.full(self.n_arms, 1.0 / self.n_arms)
        self.history.append(RoundRecord(context_set, arm, reward, probs))
        self.t += 1

    @property
    def metadata(self) -> dict:
        return {"policy": self.name}


class UniformRandomPolicy(Policy):
    name = "uniform"

    def select(self, context_set, rng):
        return uniform_random_select(context_set, rng), {}


class DDRTSPolicy(Policy):
    """DDRTS-GLM: Thompson sampling around the DDR estimate."""

    name = "ddrts"

    def __init__(self, cfg: PolicyConfig, dim: int, mf: MeanFunction | None = None,
                 reward_bound: float = 1.0):
        super().__init__(cfg.n_arms, dim, mf)
        self.cfg = cfg
        self.history = History(cfg.n_arms, dim, reward_bound=reward_bound, min_prob=cfg.gamma / 2)
        self.state = EstimatorState.initial(dim, cfg.s_bound, cfg.lam)

    def select(self, context_set, rng):
        if self.t == 0:
            arm = uniform_random_select(context_set, rng)
            return arm, {"probs": np.full(self.n_arms, 1.0 / self.n_arms), "resamples": 0}
        choice = ddrts_select(self.state, context_set, self.cfg, self.t + 1, rng, self.mf)
        return choice.arm, {"probs": choice.probs.adjusted, "raw_probs": choice.probs.raw,
                            "resamples": choice.resamples}

    def update(self, context_set, arm, reward, info):
        super().update(context_set, arm, reward, info)
        refit = self.t == 1 or (self.t % self.cfg.update_every == 0)
        self.state = update_state(self.state, self.history, self.mf, self.cfg.solver,
                                  gram_mode=self.cfg.gram_mode, refit=refit,
                                  nmle_ridge=self.cfg.nmle_ridge)

    @property
    def metadata(self):
        return {
            "policy": self.name,
            "v": self.cfg.v,
            "lambda": self.cfg.lam,
            "gamma": self.cfg.gamma,
            "delta": self.cfg.delta,
            "s_bound": self.cfg.s_bound,
            "mc_samples": self.cfg.mc_samples,
            "gram_mode": self.cfg.gram_mode,
            "gram_approximation": self.cfg.gram_mode != "exact",
            "update_every": self.cfg.update_every,
        }


class _SelectedDataPolicy(Policy):
    def __init__(self, n_arms, dim, mf=None, solver_cfg: SolverConfig = SolverConfig(),
                 ridge: float = 1.0):
        super().__init__(n_arms, dim, mf)
        self.solver_cfg = solver_cfg
        self.ridge = ridge
        self.beta = np.zeros(dim)


class GLMUCBPolicy(_SelectedDataPolicy):
    name = "glm_ucb"

    def __init__(self, n_arms, dim, alpha: float, **kw):
        super().__init__(n_arms, dim, **kw)
        self.alpha = alpha

    def select(self, context_set, rng):
        if self.t == 0:
            return uniform_random_select(context_set, rng), {}
        arm, self.beta = glm_ucb_select(self.history, context_set, self.alpha, self.mf,
                                        self.solver_cfg, init=self.beta, ridge=self.ridge)
        return arm, {}

    @property
    def metadata(self):
        return {"policy": self.name, "alpha": self.alpha, "ridge": self.ridge}


class TSGLMPolicy(_SelectedDataPolicy):
    name = "ts_glm"

    def __init__(self, n_arms, dim, v: float, **kw):
        super().__init__(n_arms, dim, **kw)
        self.v = v

    def select(self, context_set, rng):
        if self.t == 0:
            return uniform_random_select(context_set, rng), {}
        arm, self.beta = ts_glm_select(self.history, context_set, self.v, self.mf, rng,
                                       self.solver_cfg, init=self.beta, ridge=self.ridge)
        return arm, {}

    @property
    def metadata(self):
        return {"policy": self.name, "v": self.v, "ridge": self.ridge}


POLICY_PARAM = {"ddrts": "v", "ts_glm": "v", "glm_ucb": "alpha", "uniform": None}


def make_policy(name: str, n_arms: int, dim: int, mf: MeanFunction | None = None,
                **params) -> Policy:
    """Build a policy by name; ``params`` are its hyperparameters."""
    if name == "ddrts":
        solver = params.pop("solver", SolverConfig())
        reward_bound = params.pop("reward_bound", 1.0)
        if "lambda" in params:
            params["lam"] = params.pop("lambda")
        cfg = PolicyConfig(n_arms=n_arms, solver=solver, **params)
        return DDRTSPolicy(cfg, dim, mf, reward_bound=reward_bound)
    if name == "glm_ucb":
        return GLMUCBPolicy(n_arms, dim, mf=mf, **params)
    if name == "ts_glm":
        return TSGLMPolicy(n_arms, dim, mf=mf, **params)
    if name == "uniform":
        if params:
            raise ConfigError(f"uniform policy takes no parameters, got {sorted(params)}")
        return UniformRandomPolicy(n_arms, dim, mf)
    raise ConfigError(f"unknown policy {name!r}; choose from {sorted(POLICY_PARAM)}")
