"""Acceptance gate. Each test prints one PASS/FAIL line; pytest also lists them
in an "acceptance criteria" section of the terminal summary.

Criteria 1, 2, 4 and 8 are marked ``slow`` (roughly 15 minutes together on a
single core). Deselect them with ``-m "not slow"``.

Run standalone with ``python3 tests/test_acceptance.py``.
"""
import json
import math
import os

import numpy as np
import pytest

from glbandit.cli import main as cli_main
from glbandit.environments import (
    SyntheticEnvironment,
    SyntheticSpec,
    gen_beta_star,
    generate_replay_log,
    min_eigen_diagnostic,
    replay_evaluate,
    uniform_ball,
)
from glbandit.estimators import History, RoundRecord, pseudo_rewards
from glbandit.glm import ContextSet, get_mean_function, linear_mean, logistic_mean, solve_ridge_glm
from glbandit.harness import DEFAULT_GRID, ExperimentConfig, run_experiment, separation
from glbandit.policies import adjust_probs, ddrts_hyperparams, make_policy

JOBS = os.cpu_count() or 1


# -- criteria 1 and 2: regret ordering and sublinearity ------------------------------


@pytest.fixture(scope="module")
def regret_experiment():
    cfg = ExperimentConfig(
        n_arms=10, dim=20, horizon=2000, repetitions=5, tuning_repetitions=2, seed=0,
        beta_mode="fixed",
        policies=(("ddrts", DEFAULT_GRID), ("ts_glm", DEFAULT_GRID), ("glm_ucb", DEFAULT_GRID)),
    )
    return run_experiment(cfg, jobs=JOBS)


def _fmt(stats):
    return f"{stats['final_mean']:.2f}+/-{stats['final_sd']:.2f} {stats['selected']}"


@pytest.mark.slow
def test_c01_regret_ordering(regret_experiment, acceptance):
    pol = regret_experiment["policies"]
    sep = separation(regret_experiment, "ddrts")
    ok = sep["beats_all_means"] and sep["bands_separated"]
    detail = ("R(2000) ddrts " + _fmt(pol["ddrts"]) + "; ts_glm " + _fmt(pol["ts_glm"])
              + "; glm_ucb " + _fmt(pol["glm_ucb"])
              + f"; need mean+sd {sep['upper']:.2f} < {sep['others_lower']:.2f}")
    acceptance.check(1, ok, detail)


@pytest.mark.slow
def test_c02_sublinear_regret(regret_experiment, acceptance):
    ratios = []
    for tr in regret_experiment["_traces"]["ddrts"]:
        cum = tr.cumulative
        ratios.append((cum[1999] / 2000) / (cum[499] / 500))
    ok = all(r < 0.6 for r in ratios)
    acceptance.check(2, ok, "per-seed (R(2000)/2000)/(R(500)/500) = "
                     + ", ".join(f"{r:.3f}" for r in ratios) + " (need < 0.6)")


# -- criterion 3: pseudo-reward unbiasedness --------------------------------------------


def test_c03_pseudo_reward_unbiased(acceptance):
    rng = np.random.default_rng(2024)
    n_arms, dim, draws = 5, 3, 100_000
    mf = logistic_mean()
    beta_star = np.array([1.0, -0.7, 0.4])
    imputer = np.array([-0.5, 0.9, 0.3])
    x = rng.uniform(-1, 1, (n_arms, dim))
    x /= np.maximum(1.0, np.linalg.norm(x, axis=1))[:, None]
    cs = ContextSet(x)
    gamma = 1.0 / (n_arms + 1)
    probs = adjust_probs(rng.dirichlet(np.ones(n_arms)), gamma).adjusted
    truth = mf.mu(x @ beta_star)

    history = History(n_arms, dim, capacity=draws)
    arms = rng.choice(n_arms, size=draws, p=probs)
    rewards = (rng.random(draws) < truth[arms]).astype(float)
    for a, y in zip(arms, rewards):
        history.append(RoundRecord(cs, int(a), float(y), probs))
    pr = pseudo_rewards(history, imputer, mf)
    mean = pr.mean(axis=0)
    se = pr.std(axis=0, ddof=1) / math.sqrt(draws)
    z = np.abs(mean - truth) / se
    acceptance.check(3, bool(np.all(z <= 4)),
                     "max |mean - mu|/SE over arms = " + f"{z.max():.2f} (need <= 4)")


# -- criterion 4: estimator consistency --------------------------------------------------


@pytest.mark.slow
def test_c04_estimator_consistency(acceptance):
    n_arms, dim, horizon = 10, 5, 2000
    spec = SyntheticSpec(n_arms, dim)
    beta_star = gen_beta_star(dim, np.random.default_rng(7))
    spec = spec.with_beta(beta_star)
    mf = get_mean_function("logistic", radius=1.0 + spec.s_bound)
    env = SyntheticEnvironment(spec, 7, mf)
    policy = make_policy("ddrts", n_arms, dim, mf, v=0.1, s_bound=spec.s_bound)
    rng = np.random.default_rng(8)
    errors = {}
    for t in range(1, horizon + 1):
        cs = env.observe()
        arm, info = policy.select(cs, rng)
        policy.update(cs, arm, env.pull(arm), info)
        if t in (200, 500, 2000):
            errors[t] = float(np.linalg.norm(policy.state.ddr - beta_star))
    e200, e2000 = errors[200], errors[2000]
    ok = e2000 < e200 and e2000 * math.sqrt(2000) <= 3 * e200 * math.sqrt(200)
    acceptance.check(4, ok, "e_200={:.4f} e_500={:.4f} e_2000={:.4f}; e_2000*sqrt(2000)={:.3f} "
                     "vs 3*e_200*sqrt(200)={:.3f}".format(errors[200], errors[500], e2000,
                                                         e2000 * math.sqrt(2000),
                                                         3 * e200 * math.sqrt(200)))


# -- criterion 5: solver against brute-force oracles --------------------------------------


def _bisect(f, lo=-50.0, hi=50.0, iters=200):
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _coordinate_bisection(X, y, lam, mf, sweeps=2000):
    """Cyclic exact coordinate minimization; each coordinate solves its score by bisection."""
    beta = np.zeros(X.shape[1])
    for _ in range(sweeps):
        old = beta.copy()
        for j in range(beta.size):
            def score(b, j=j):
                trial = beta.copy()
                trial[j] = b
                return X[:, j] @ (y - mf.mu(X @ trial)) - lam * b
            beta[j] = _bisect(score)
        if np.max(np.abs(beta - old)) < 1e-13:
            break
    return beta


def test_c05_solver_oracle(acceptance):
    rng = np.random.default_rng(55)
    worst = 0.0
    for k in range(50):
        mf = logistic_mean() if k % 2 == 0 else linear_mean()
        d = int(rng.integers(1, 4))
        n = int(rng.integers(1, 11))
        X = rng.uniform(-1, 1, (n, d))
        X /= np.maximum(1.0, np.linalg.norm(X, axis=1))[:, None]
        y = rng.integers(0, 2, n).astype(float) if mf.name == "logistic" else rng.normal(size=n)
        lam = float(rng.uniform(0.05, 2.0))
        beta = solve_ridge_glm(X, y, lam, mf)
        if mf.name == "linear":
            oracle = np.linalg.solve(X.T @ X + lam * np.eye(d), X.T @ y)
        else:
            oracle = _coordinate_bisection(X, y, lam, mf)
        worst = max(worst, float(np.linalg.norm(beta - oracle)))
    acceptance.check(5, worst <= 1e-6, f"max l2 gap over 50 instances = {worst:.2e} (need <= 1e-6)")


# -- criterion 6: probability adjustment ---------------------------------------------------


def test_c06_probability_adjustment(acceptance):
    rng = np.random.default_rng(66)
    worst_sum = 0.0
    floor_ok = form_ok = True
    for _ in range(10_000):
        n = int(rng.integers(2, 21))
        raw = rng.dirichlet(np.full(n, rng.uniform(0.1, 3.0)))
        gamma = float(rng.uniform(1.0 / (n + 1), 1.0 / n))
        if gamma >= 1.0 / n:
            continue
        res = adjust_probs(raw, gamma)
        adj = res.adjusted
        worst_sum = max(worst_sum, abs(adj.sum() - 1.0))
        floor_ok &= bool(np.all(adj >= gamma / 2))
        keep = raw > gamma
        k = keep.sum()
        eps = (1.0 - (n - k) * gamma / 2 - k * gamma) / k
        form_ok &= bool(np.array_equal(adj, np.where(keep, gamma + eps, gamma / 2)))
    ok = worst_sum <= 1e-9 and floor_ok and form_ok
    acceptance.check(6, ok, f"max |sum-1| = {worst_sum:.1e}, floor held: {floor_ok}, "
                     f"piecewise form exact: {form_ok}")


# -- criterion 7: minimum eigenvalue diagnostic -------------------------------------------


def test_c07_min_eigen_diagnostic(acceptance):
    parts, ok = [], True
    for d in (3, 5):
        val = min_eigen_diagnostic(uniform_ball(d), 100_000, 1, np.random.default_rng(d))
        rel = abs(val - 1 / (d + 2)) * (d + 2)
        ok &= rel <= 0.1
        parts.append(f"d={d}: {val:.4f} vs {1 / (d + 2):.4f} ({100 * rel:.1f}%)")
    acceptance.check(7, ok, "; ".join(parts) + " (need within 10%)")


# -- criterion 8: replay CTR lift --------------------------------------------------------


@pytest.mark.slow
def test_c08_replay_lift(acceptance):
    n_arms, dim, n_events = 5, 5, 100_000
    direction = gen_beta_star(dim, np.random.default_rng(0))
    spec = SyntheticSpec(n_arms, dim).with_beta(2.0 * direction / np.linalg.norm(direction))
    mf = get_mean_function("logistic", radius=1.0 + spec.s_bound)
    ok, parts = True, []
    for seed in (0, 1, 2):
        log = generate_replay_log(spec, n_events, seed)
        ddrts = make_policy("ddrts", n_arms, dim, mf, v=0.1, s_bound=spec.s_bound,
                            gram_mode="frozen", update_every=50)
        r = replay_evaluate(log, ddrts, np.random.default_rng(100 + seed))
        u = replay_evaluate(log, make_policy("uniform", n_arms, dim), np.random.default_rng(200 + seed))
        p = log.click_rate
        se = math.sqrt(p * (1 - p) / u.matched)
        lift = r.ctr / u.ctr - 1
        ok &= lift >= 0.2 and abs(u.ctr - p) <= 3 * se
        parts.append(f"seed {seed}: ddrts {r.ctr:.4f} uniform {u.ctr:.4f} log {p:.4f} "
                     f"lift {100 * lift:.1f}% |u-log|/SE {abs(u.ctr - p) / se:.2f}")
    acceptance.check(8, ok, "; ".join(parts))


# -- criterion 9: hyperparameter formulas -------------------------------------------------


def test_c09_hyperparameters(acceptance):
    mf = logistic_mean()
    hp = ddrts_hyperparams(10, 1 / 11, 0.1, 100, mf)
    expected_v = (mf.kappa / mf.l1) / math.sqrt(2 * math.log(10 / (1 - 10 / 11)))
    ratio = hp["v"] / (mf.kappa / mf.l1)
    ok = abs(hp["v"] - expected_v) <= 1e-6 and abs(ratio - 0.3261474) <= 1e-6 and hp["m_t"] == 121
    acceptance.check(9, ok, f"v/(kappa/L1) = {ratio:.7f} (hand 0.3261474), M_100 = {hp['m_t']} (hand 121)")


# -- criterion 10: determinism -------------------------------------------------------------


def test_c10_determinism(tmp_path, acceptance):
    def write(name, obj):
        p = tmp_path / name
        p.write_text(json.dumps(obj))
        return str(p)

    sim = write("sim.json", {"schema_version": 1, "n_arms": 4, "dim": 3, "horizon": 60,
                             "repetitions": 2, "tuning_repetitions": 1,
                             "policies": {"ddrts": [0.01, 0.1], "ts_glm": [0.1], "glm_ucb": [0.1],
                                          "uniform": []}})
    gen = write("gen.json", {"schema_version": 1, "n_arms": 4, "dim": 3})
    rep = write("rep.json", {"schema_version": 1, "policy": "ddrts", "params": {"v": 0.1}})

    def run(tag):
        out = tmp_path / tag
        out.mkdir()
        assert cli_main(["simulate", "--config", sim, "--out", str(out / "sim"), "--seed", "3"]) == 0
        assert cli_main(["gen-log", "--config", gen, "--n-events", "300", "--seed", "3",
                         "--out", str(out / "log.jsonl")]) == 0
        assert cli_main(["replay", "--config", rep, "--log", str(out / "log.jsonl"), "--seed", "3",
                         "--out", str(out / "replay")]) == 0
        return {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}

    a, b = run("a"), run("b")
    csvs = [k for k in a if k.endswith(".csv")]
    ok = a == b and len(csvs) >= 6
    acceptance.check(10, ok, f"{len(a)} artifacts ({len(csvs)} CSV) byte-identical across reruns: {a == b}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v", *sys.argv[1:]]))
