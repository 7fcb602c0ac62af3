"""
How well do contexts cover every direction?
===========================================

The smallest eigenvalue of the average context second moment. For contexts
uniform on the unit ball it is 1/(d+2). The synthetic arm distribution,
with its large arm-specific means, is much less isotropic.
"""

import numpy as np

from glbandit.environments import SyntheticSpec, min_eigen_diagnostic, synthetic_sampler, uniform_ball

rng = np.random.default_rng(0)
for d in (3, 5, 10):
    value = min_eigen_diagnostic(uniform_ball(d), 50_000, 1, rng)
    print(f"uniform ball d={d:2d}: {value:.4f}  (1/(d+2) = {1 / (d + 2):.4f})")

spec = SyntheticSpec(10, 5)
print("synthetic N=10 d=5:", round(min_eigen_diagnostic(synthetic_sampler(spec), 20_000, 10, rng), 4))
