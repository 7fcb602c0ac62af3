"""Seeded regret simulations, hyperparameter grids and aggregation."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .environments import SyntheticEnvironment, SyntheticSpec, gen_beta_star
from .glm import MeanFunction, get_mean_function
from .policies import POLICY_PARAM, ConfigError, make_policy

log = logging.getLogger(__name__)

DEFAULT_GRID = (0.001, 0.01, 0.1, 1.0)
CSV_COLUMNS = ("t", "regret", "cum_regret", "arm", "resamples", "elapsed_ms")


@dataclass
class RegretTrace:
    regret: np.ndarray
    arms: np.ndarray
    resamples: np.ndarray
    elapsed_ms: np.ndarray
    metadata: dict = field(default_factory=dict)
    partial: bool = False

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.regret)

    @property
    def horizon(self) -> int:
        return self.regret.size

    def to_csv(self, timing: bool = False) -> str:
        """CSV text; arms are 1-based. ``elapsed_ms`` is left empty unless ``timing``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        cum = self.cumulative
        for k in range(self.horizon):
            w.writerow([
                k + 1,
                repr(float(self.regret[k])),
                repr(float(cum[k])),
                int(self.arms[k]) + 1,
                int(self.resamples[k]),
                f"{self.elapsed_ms[k]:.3f}" if timing else "",
            ])
        return buf.getvalue()


@dataclass(frozen=True)
class PolicySpec:
    """A named policy with fixed hyperparameters."""

    name: str
    params: tuple = ()

    @classmethod
    def of(cls, name: str, **params) -> "PolicySpec":
        return cls(name, tuple(sorted(params.items())))

    @property
    def kwargs(self) -> dict:
        return dict(self.params)

    def label(self) -> str:
        if not self.params:
            return self.name
        return self.name + "(" + ", ".join(f"{k}={v}" for k, v in self.params) + ")"


def seed_streams(seed: int):
    """Environment and policy seed sequences for one run."""
    env_seq, pol_seq = np.random.SeedSequence(seed).spawn(2)
    return env_seq, pol_seq


def run_episode(env, policy, horizon: int, seed, *, oracle: bool = False,
                max_seconds: float | None = None) -> RegretTrace:
    """Play ``horizon`` rounds of ``policy`` against ``env``.

    The policy plays uniformly at random in round 1 (handled by the policy
    objects). ``seed`` drives the policy's randomness only; the environment
    carries its own streams. ``oracle=True`` ignores the policy and plays the
    best arm, for sanity checks.
    """
    if horizon < 1:
        raise ValueError("horizon must be positive")
    rng = np.random.default_rng(seed)
    regret = np.zeros(horizon)
    arms = np.zeros(horizon, dtype=np.int64)
    resamples = np.zeros(horizon, dtype=np.int64)
    elapsed = np.zeros(horizon)
    start = time.perf_counter()
    partial = False
    for k in range(horizon):
        t0 = time.perf_counter()
        cs = env.observe()
        if oracle:
            arm, info = int(np.argmax(env.means())), {}
        else:
            arm, info = policy.select(cs, rng)
        reward = env.pull(arm)
        regret[k] = env.regret(arm)
        if not oracle:
            policy.update(cs, arm, reward, info)
        arms[k] = arm
        resamples[k] = info.get("resamples", 0)
        elapsed[k] = 1e3 * (time.perf_counter() - t0)
        if max_seconds is not None and time.perf_counter() - start > max_seconds and k + 1 < horizon:
            log.warning("run exceeded %.1fs budget at round %d; trace is partial", max_seconds, k + 1)
            regret, arms, resamples, elapsed = regret[: k + 1], arms[: k + 1], resamples[: k + 1], elapsed[: k + 1]
            partial = True
            break
    meta = {} if oracle else dict(policy.metadata)
    return RegretTrace(regret, arms, resamples, elapsed, meta, partial)


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    n_arms: int = 10
    dim: int = 20
    horizon: int = 2000
    repetitions: int = 5
    seed: int = 0
    tuning_repetitions: int = 2
    beta_mode: str = "fixed"
    mean_function: str = "logistic"
    policies: tuple = (("ddrts", DEFAULT_GRID), ("ts_glm", DEFAULT_GRID), ("glm_ucb", DEFAULT_GRID))
    policy_options: dict = field(default_factory=dict)
    max_seconds: float | None = None

    def __post_init__(self):
        if self.horizon < 2:
            raise ConfigError("horizon must be at least 2")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if self.tuning_repetitions < 0:
            raise ConfigError("tuning_repetitions must be nonnegative")
        if self.beta_mode not in ("fixed", "per_run"):
            raise ConfigError("beta_mode must be 'fixed' or 'per_run'")
        for name, grid in self.policies:
            if name not in POLICY_PARAM:
                raise ConfigError(f"unknown policy {name!r}")
            if POLICY_PARAM[name] is not None and len(grid) == 0:
                raise ConfigError(f"empty hyperparameter grid for {name}")

    @property
    def spec(self) -> SyntheticSpec:
        return SyntheticSpec(self.n_arms, self.dim, seed=self.seed)

    def eval_seeds(self) -> list[int]:
        return [self.seed * 1000 + r for r in range(self.repetitions)]

    def tuning_seeds(self) -> list[int]:
        # disjoint from evaluation seeds
        return [self.seed * 1000 + 500 + r for r in range(self.tuning_repetitions)]

    def beta_star(self, run_seed: int) -> np.ndarray:
        if self.beta_mode == "fixed":
            base = np.random.SeedSequence([self.seed, 0xBE7A])
        else:
            base = np.random.SeedSequence([run_seed, 0xBE7A])
        return gen_beta_star(self.dim, np.random.default_rng(base))

    def mean_fn(self) -> MeanFunction:
        return get_mean_function(self.mean_function, radius=1.0 + self.spec.s_bound)


@dataclass(frozen=True)
class RunTask:
    config: ExperimentConfig
    policy: PolicySpec
    seed: int


def _policy_params(cfg: ExperimentConfig, spec: PolicySpec) -> dict:
    params = dict(cfg.policy_options.get(spec.name, {}))
    params.update(spec.kwargs)
    if spec.name == "ddrts":
        params.setdefault("s_bound", cfg.spec.s_bound)
    return params


def execute(task: RunTask) -> RegretTrace:
    """Run one (config, policy, seed) task; picklable entry point for workers."""
    cfg = task.config
    spec = cfg.spec.with_beta(cfg.beta_star(task.seed))
    mf = cfg.mean_fn()
    env_seq, pol_seq = seed_streams(task.seed)
    env = SyntheticEnvironment(spec, env_seq, mf)
    policy = make_policy(task.policy.name, cfg.n_arms, cfg.dim, mf, **_policy_params(cfg, task.policy))
    trace = run_episode(env, policy, cfg.horizon, pol_seq, max_seconds=cfg.max_seconds)
    trace.metadata.update({"seed": task.seed, "label": task.policy.label()})
    return trace


def run_tasks(tasks, jobs: int | None = None) -> list[RegretTrace]:
    """Run tasks, in parallel when ``jobs > 1``; results keep the task order."""
    tasks = list(tasks)
    jobs = jobs or os.cpu_count() or 1
    if jobs <= 1 or len(tasks) <= 1:
        return [execute(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
        return list(pool.map(execute, tasks))


def expand_grid(name: str, grid) -> list[PolicySpec]:
    param = POLICY_PARAM[name]
    if param is None:
        return [PolicySpec.of(name)]
    return [PolicySpec.of(name, **{param: float(g)}) for g in grid]


def grid_search(cfg: ExperimentConfig, jobs: int | None = None, runner=None) -> dict:
    """Best hyperparameter per policy by mean cumulative regret at the horizon.

    Tuning uses ``cfg.tuning_seeds()`` (falling back to the evaluation seeds
    when ``tuning_repetitions == 0``). Ties keep the first grid point.
    ``gamma`` of DDRTS-GLM is never tuned. Returns ``{name: (PolicySpec,
    {label: mean regret})}``.
    """
    runner = runner or (lambda tasks: run_tasks(tasks, jobs))
    seeds = cfg.tuning_seeds() or cfg.eval_seeds()
    candidates = {name: expand_grid(name, grid) for name, grid in cfg.policies}
    tasks = [RunTask(cfg, p, s) for name in candidates for p in candidates[name] for s in seeds]
    traces = runner(tasks)
    finals = {}
    for task, tr in zip(tasks, traces):
        finals.setdefault(task.policy, []).append(float(tr.cumulative[-1]))
    best = {}
    for name, specs in candidates.items():
        scores = {p.label(): float(np.mean(finals[p])) for p in specs}
        choice = min(specs, key=lambda p: (float(np.mean(finals[p])), specs.index(p)))
        best[name] = (choice, scores)
    return best


def quartiles(values) -> tuple[float, float]:
    """First and third quartiles with linear interpolation (type 7)."""
    q1, q3 = np.quantile(np.asarray(values, dtype=float), [0.25, 0.75], method="linear")
    return float(q1), float(q3)


def aggregate(traces) -> dict:
    """Mean and sample-standard-deviation cumulative curves, plus final-round statistics.

    A single trace has standard deviation zero.
    """
    traces = list(traces)
    if not traces:
        raise ValueError("nothing to aggregate")
    horizon = min(tr.horizon for tr in traces)
    curves = np.stack([tr.cumulative[:horizon] for tr in traces])
    mean = curves.mean(axis=0)
    sd = curves.std(axis=0, ddof=1) if len(traces) > 1 else np.zeros(horizon)
    final = curves[:, -1]
    q1, q3 = quartiles(final)
    return {
        "mean": mean,
        "sd": sd,
        "final_mean": float(final.mean()),
        "final_sd": float(sd[-1]),
        "q1": q1,
        "median": float(np.median(final)),
        "q3": q3,
        "runs": len(traces),
    }


def downsample(curve, points: int = 100) -> list:
    curve = np.asarray(curve)
    if curve.size <= points:
        idx = np.arange(curve.size)
    else:
        idx = np.unique(np.linspace(0, curve.size - 1, points).round().astype(int))
    return [[int(i) + 1, float(curve[i])] for i in idx]


def evaluate(cfg: ExperimentConfig, best: dict, jobs: int | None = None) -> dict:
    """Evaluation runs on ``cfg.eval_seeds()`` for each tuned policy."""
    tasks = [RunTask(cfg, spec, s) for name, (spec, _) in best.items() for s in cfg.eval_seeds()]
    traces = run_tasks(tasks, jobs)
    out = {}
    for task, tr in zip(tasks, traces):
        out.setdefault(task.policy.name, []).append(tr)
    return out


def run_experiment(cfg: ExperimentConfig, out_dir=None, jobs: int | None = None,
                   timing: bool = False) -> dict:
    """Grid search, evaluation and (optionally) artifact files.

    Writes one CSV per evaluation run and ``summary.json`` to ``out_dir``.
    """
    best = grid_search(cfg, jobs)
    runs = evaluate(cfg, best, jobs)
    summary = {"config": config_to_dict(cfg), "tuning_seeds": cfg.tuning_seeds(),
               "eval_seeds": cfg.eval_seeds(), "policies": {}}
    for name, traces in runs.items():
        spec, scores = best[name]
        agg = aggregate(traces)
        summary["policies"][name] = {
            "selected": spec.kwargs,
            "tuning_scores": scores,
            "final_mean": agg["final_mean"],
            "final_sd": agg["final_sd"],
            "q1": agg["q1"],
            "median": agg["median"],
            "q3": agg["q3"],
            "final_per_seed": [float(tr.cumulative[-1]) for tr in traces],
            "mean_curve": downsample(agg["mean"]),
            "sd_curve": downsample(agg["sd"]),
            "metadata": traces[0].metadata,
            "partial_runs": sum(tr.partial for tr in traces),
        }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, traces in runs.items():
            for tr in traces:
                (out / f"{name}_seed{tr.metadata['seed']}.csv").write_text(tr.to_csv(timing))
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    summary["_traces"] = runs
    return summary


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return {
        "n_arms": cfg.n_arms,
        "dim": cfg.dim,
        "horizon": cfg.horizon,
        "repetitions": cfg.repetitions,
        "tuning_repetitions": cfg.tuning_repetitions,
        "seed": cfg.seed,
        "beta_mode": cfg.beta_mode,
        "mean_function": cfg.mean_function,
        "policies": {name: list(grid) for name, grid in cfg.policies},
        "policy_options": cfg.policy_options,
        "max_seconds": cfg.max_seconds,
    }


def separation(summary: dict, target: str = "ddrts") -> dict:
    """Mean/sd comparison of ``target`` against every other policy at the horizon."""
    pol = summary["policies"]
    mine = pol[target]
    others = {k: v for k, v in pol.items() if k != target}
    lower = min(v["final_mean"] - v["final_sd"] for v in others.values())
    return {
        "beats_all_means": all(mine["final_mean"] < v["final_mean"] for v in others.values()),
        "bands_separated": mine["final_mean"] + mine["final_sd"] < lower,
        "upper": mine["final_mean"] + mine["final_sd"],
        "others_lower": lower,
    }


def cumulative_ratio(trace: RegretTrace, t_small: int, t_large: int) -> float:
    """``(R(t_large)/t_large) / (R(t_small)/t_small)``."""
    cum = trace.cumulative
    small = cum[t_small - 1] / t_small
    large = cum[t_large - 1] / t_large
    return math.inf if small == 0 else float(large / small)
