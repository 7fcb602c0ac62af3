"""
Fitting a ridge-penalized logistic model
========================================

The solver behind every estimator in the package: Newton steps with a
backtracking line search on the penalized negative log-likelihood.
"""

import numpy as np

from glbandit.glm import glm_score, logistic_mean, solve_ridge_glm

rng = np.random.default_rng(0)
mf = logistic_mean()

# contexts inside the unit ball and Bernoulli responses from a known coefficient
X = rng.uniform(-1, 1, (500, 3))
X /= np.maximum(1.0, np.linalg.norm(X, axis=1))[:, None]
beta_true = np.array([2.0, -1.0, 0.5])
y = (rng.random(500) < mf.mu(X @ beta_true)).astype(float)

# the objective trace shows the monotone decrease enforced by the line search
trace = []
beta = solve_ridge_glm(X, y, lam=1.0, mf=mf, trace=trace)
print("estimate     ", np.round(beta, 3))
print("truth        ", beta_true)
print("objective    ", np.round(trace, 4))
print("score norm   ", np.linalg.norm(glm_score(X, y, beta, 1.0, mf)))

# kappa: the smallest slope of the mean function on the relevant interval
print("kappa(r=1)   ", round(mf.kappa, 6), " L1 =", mf.l1)
