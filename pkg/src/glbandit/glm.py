"""Mean functions, Gram matrices and the ridge-GLM Newton solver.

Every estimator in the package reduces to the penalized score equation

    sum_k {y_k - mu(x_k' beta)} x_k - lam * beta = 0

for a canonical-link GLM, which :func:`solve_ridge_glm` solves by globalized
Newton iterations on the convex objective

    sum_k {b(x_k' beta) - y_k x_k' beta} + lam/2 ||beta||^2.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import linalg, optimize, special


class GLMConvergenceError(RuntimeError):
    """Newton iterations stopped before the score norm reached ``tol``."""

    def __init__(self, message: str, residual: float, beta: np.ndarray | None = None):
        super().__init__(f"{message} (residual norm {residual:.3e})")
        self.residual = residual
        self.beta = beta


@dataclass(frozen=True)
class MeanFunction:
    """Inverse link bundle for a canonical-link GLM.

    ``cumulant`` is the log-partition ``b`` with ``b' = mu``; ``kappa``, ``l1``
    and ``l2`` bound ``mu'`` from below, ``mu'`` from above and ``|mu''|`` on
    the admissible range of linear predictors.
    """

    name: str
    mu: Callable[[np.ndarray], np.ndarray]
    mu_prime: Callable[[np.ndarray], np.ndarray]
    cumulant: Callable[[np.ndarray], np.ndarray]
    kappa: float
    l1: float
    l2: float
    radius: float = field(default=0.0)

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not self.l1 >= self.kappa:
            raise ValueError("l1 must dominate kappa")
        if self.l2 < 0:
            raise ValueError("l2 must be nonnegative")


def _logistic_prime(z):
    p = special.expit(z)
    return p * (1.0 - p)


def _softplus(z):
    return np.logaddexp(0.0, z)


def kappa_for_radius(mu_prime: Callable[[np.ndarray], np.ndarray], radius: float) -> float:
    """Infimum of ``mu_prime`` over ``[-radius, radius]``.

    A dense grid scan (step at most ``1e-3 * radius``) locates the minimum,
    then a bounded scalar search refines it inside the neighbouring cells.
    """
    radius = float(radius)
    if radius < 0 or not np.isfinite(radius):
        raise ValueError(f"radius must be a finite nonnegative number, got {radius}")
    if radius == 0.0:
        value = float(np.asarray(mu_prime(np.array([0.0])))[0])
    else:
        grid = np.linspace(-radius, radius, 2001)
        vals = np.asarray(mu_prime(grid), dtype=float)
        k = int(np.argmin(vals))
        value = float(vals[k])
        lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
        if hi > lo:
            res = optimize.minimize_scalar(
                lambda z: float(np.asarray(mu_prime(np.array([z])))[0]),
                bounds=(lo, hi),
                method="bounded",
                options={"xatol": 1e-10 * max(radius, 1.0)},
            )
            value = min(value, float(res.fun))
    if not value > 0:
        raise ValueError(
            f"mean function derivative is not bounded away from zero on [-{radius}, {radius}]"
        )
    return value


@lru_cache(maxsize=32)
def logistic_mean(radius: float = 1.0) -> MeanFunction:
    """Logistic inverse link ``1 / (1 + exp(-z))`` (Bernoulli rewards).

    ``radius`` is the bound on ``|x' beta|`` used to compute ``kappa``.
    """
    return MeanFunction(
        name="logistic",
        mu=special.expit,
        mu_prime=_logistic_prime,
        cumulant=_softplus,
        kappa=kappa_for_radius(_logistic_prime, radius),
        l1=0.25,
        l2=1.0 / (6.0 * np.sqrt(3.0)),
        radius=float(radius),
    )


@lru_cache(maxsize=32)
def linear_mean(radius: float = 1.0) -> MeanFunction:
    """Identity link (Gaussian rewards); the solver reduces to ridge regression."""

    def mu_prime(z):
        return np.ones_like(np.asarray(z, dtype=float))

    return MeanFunction(
        name="linear",
        mu=lambda z: np.asarray(z, dtype=float) * 1.0,
        mu_prime=mu_prime,
        cumulant=lambda z: 0.5 * np.square(z),
        kappa=kappa_for_radius(mu_prime, radius),
        l1=1.0,
        l2=0.0,
        radius=float(radius),
    )


MEAN_FUNCTIONS = {"logistic": logistic_mean, "linear": linear_mean}


def get_mean_function(name: str, radius: float = 1.0) -> MeanFunction:
    try:
        factory = MEAN_FUNCTIONS[name]
    except KeyError:
        raise ValueError(f"unknown mean function {name!r}; choose from {sorted(MEAN_FUNCTIONS)}")
    return factory(radius)


@dataclass(frozen=True)
class ContextSet:
    """Contexts of all ``N`` arms observed at round ``t`` (1-based)."""

    contexts: np.ndarray
    t: int = 1

    def __post_init__(self):
        x = np.array(self.contexts, dtype=float)
        if x.ndim != 2:
            raise ValueError(f"contexts must be an (N, d) array, got shape {x.shape}")
        if x.shape[1] < 1 or x.shape[0] < 1:
            raise ValueError("need at least one arm and one feature")
        if not np.all(np.isfinite(x)):
            raise ValueError("contexts must be finite")
        if np.any(np.linalg.norm(x, axis=1) > 1.0 + 1e-9):
            raise ValueError("every context must lie in the unit ball")
        if self.t < 1:
            raise ValueError("round index starts at 1")
        x.setflags(write=False)
        object.__setattr__(self, "contexts", x)

    @property
    def n_arms(self) -> int:
        return self.contexts.shape[0]

    @property
    def dim(self) -> int:
        return self.contexts.shape[1]


# ---------------------------------------------------------------------------
# Newton solver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-8
    max_iter: int = 100
    armijo: float = 1e-4


def glm_objective(X, y, beta, lam, mf: MeanFunction, weights=None) -> float:
    """Penalized negative log-likelihood ``sum w{b(x'beta) - y x'beta} + lam/2 |beta|^2``."""
    z = X @ beta
    terms = mf.cumulant(z) - y * z
    if weights is not None:
        terms = weights * terms
    return float(np.sum(terms) + 0.5 * lam * (beta @ beta))


def glm_score(X, y, beta, lam, mf: MeanFunction, weights=None) -> np.ndarray:
    """Left side of the penalized score equation."""
    r = y - mf.mu(X @ beta)
    if weights is not None:
        r = weights * r
    return X.T @ r - lam * beta


def solve_ridge_glm(
    contexts,
    targets,
    lam: float,
    mf: MeanFunction,
    init=None,
    tol: float = 1e-8,
    max_iter: int = 100,
    *,
    weights=None,
    dim: int | None = None,
    armijo: float = 1e-4,
    trace: list | None = None,
) -> np.ndarray:
    """Solve ``sum_k w_k {y_k - mu(x_k' beta)} x_k - lam beta = 0``.

    Parameters
    ----------
    contexts : array-like, shape (n, d)
        Covariate rows. ``n`` may be zero, in which case ``dim`` (or ``init``)
        fixes the dimension.
    targets : array-like, shape (n,)
        Responses; any finite reals are accepted (pseudo-rewards leave [0, 1]).
    lam : float
        Ridge penalty. ``lam = 0`` requires a nonsingular Hessian.
    init : array-like, optional
        Warm start, defaults to the zero vector.
    weights : array-like, optional
        Nonnegative per-row weights.
    trace : list, optional
        If given, the objective value after every accepted step is appended.

    Returns
    -------
    beta : ndarray, shape (d,)
        A point whose score norm is at most ``tol``.

    Raises
    ------
    GLMConvergenceError
        If ``max_iter`` Newton steps do not reach ``tol``.
    """
    X = np.asarray(contexts, dtype=float)
    y = np.asarray(targets, dtype=float).reshape(-1)
    if init is not None:
        beta = np.array(init, dtype=float).reshape(-1)
        d = beta.size
    elif X.ndim == 2 and X.shape[0] > 0:
        d = X.shape[1]
        beta = np.zeros(d)
    elif dim is not None:
        d = int(dim)
        beta = np.zeros(d)
    elif X.ndim == 2:
        d = X.shape[1]
        beta = np.zeros(d)
    else:
        raise ValueError("cannot infer dimension from an empty problem; pass dim or init")
    X = X.reshape(-1, d)
    if X.shape[0] != y.size:
        raise ValueError(f"{X.shape[0]} context rows but {y.size} targets")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("contexts and targets must be finite")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    w = None
    if weights is not None:
        w = np.asarray(weights, dtype=float).reshape(-1)
        if w.size != y.size or np.any(w < 0):
            raise ValueError("weights must be nonnegative with one entry per row")

    eye = np.eye(d)
    f = glm_objective(X, y, beta, lam, mf, w)
    grad = -glm_score(X, y, beta, lam, mf, w)
    res = float(np.linalg.norm(grad))
    if trace is not None:
        trace.append(f)
    for _ in range(max_iter):
        if res <= tol:
            return beta
        h = mf.mu_prime(X @ beta)
        if w is not None:
            h = h * w
        hess = (X.T * h) @ X + lam * eye
        try:
            step = -linalg.solve(hess, grad, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            raise GLMConvergenceError("singular Hessian", res, beta)
        slope = float(grad @ step)
        s = 1.0
        slack = 1e2 * np.finfo(float).eps * (abs(f) + 1.0)
        while True:
            cand = beta + s * step
            f_new = glm_objective(X, y, cand, lam, mf, w)
            if f_new <= f + armijo * s * slope + slack:
                break
            s *= 0.5
            if s < 1e-12:
                raise GLMConvergenceError("line search failed", res, beta)
        beta, f = cand, f_new
        grad = -glm_score(X, y, beta, lam, mf, w)
        res = float(np.linalg.norm(grad))
        if trace is not None:
            trace.append(f)
    if res <= tol:
        return beta
    raise GLMConvergenceError(f"no convergence after {max_iter} Newton steps", res, beta)


# ---------------------------------------------------------------------------
# Gram matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GramMatrix:
    """Symmetric positive-definite ``sum w x x' + ridge * I``."""

    matrix: np.ndarray
    ridge: float

    @classmethod
    def initial(cls, dim: int, ridge: float) -> "GramMatrix":
        if ridge <= 0:
            raise ValueError("ridge must be positive")
        return cls(ridge * np.eye(dim), float(ridge))

    @classmethod
    def from_contexts(cls, contexts, weights, ridge: float) -> "GramMatrix":
        X = np.asarray(contexts, dtype=float)
        w = np.asarray(weights, dtype=float).reshape(-1)
        if np.any(w < 0):
            raise ValueError("Gram weights must be nonnegative")
        d = X.shape[-1]
        X = X.reshape(-1, d)
        m = (X.T * w) @ X + ridge * np.eye(d)
        return cls(0.5 * (m + m.T), float(ridge))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def cholesky(self) -> np.ndarray:
        """Lower Cholesky factor ``R`` with ``R R' = matrix``."""
        return linalg.cholesky(self.matrix, lower=True)

    def inverse(self) -> np.ndarray:
        c = linalg.cho_factor(self.matrix, lower=True)
        return linalg.cho_solve(c, np.eye(self.dim))

    def norm_inv(self, x) -> np.ndarray:
        """``sqrt(x' G^{-1} x)`` for each row of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        w = linalg.solve_triangular(self.cholesky(), x.T, lower=True)
        return np.sqrt(np.sum(w * w, axis=0))


def gram_update(g: GramMatrix, contexts, weights) -> GramMatrix:
    """Return ``g + sum_i weights[i] x_i x_i'`` as a new matrix."""
    X = np.asarray(contexts, dtype=float)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if X.size == 0:
        return g
    X = X.reshape(-1, g.dim)
    if w.size != X.shape[0]:
        raise ValueError(f"{X.shape[0]} contexts but {w.size} weights")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("Gram weights must be finite and nonnegative")
    m = g.matrix + (X.T * w) @ X
    return GramMatrix(0.5 * (m + m.T), g.ridge)
