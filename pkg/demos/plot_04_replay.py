"""
Offline replay on a uniformly logged click log
==============================================

A synthetic log is generated with a uniform logging policy, written to the
JSON-lines format and read back. The replay estimate only counts events where
the evaluated policy agrees with the logged arm.
"""

import tempfile
from pathlib import Path

import numpy as np

from glbandit.environments import (
    SyntheticSpec,
    gen_beta_star,
    generate_replay_log,
    read_replay_log,
    replay_evaluate,
    write_replay_log,
)
from glbandit.glm import get_mean_function
from glbandit.policies import make_policy

direction = gen_beta_star(5, np.random.default_rng(0))
spec = SyntheticSpec(5, 5).with_beta(2.0 * direction / np.linalg.norm(direction))
log = generate_replay_log(spec, 20_000, seed=0)

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "clicks.jsonl"
    write_replay_log(log, path)
    print(path.read_text().splitlines()[0][:100], "...")
    log = read_replay_log(path)

mf = get_mean_function("logistic", radius=1.0 + spec.s_bound)
candidates = {
    "uniform": make_policy("uniform", 5, 5),
    "ddrts": make_policy("ddrts", 5, 5, mf, v=0.1, s_bound=spec.s_bound,
                         gram_mode="frozen", update_every=50),
}
print("log click rate", round(log.click_rate, 4))
for name, policy in candidates.items():
    res = replay_evaluate(log, policy, np.random.default_rng(1))
    print(f"{name:8s} ctr {res.ctr:.4f} on {res.matched} matched events")
