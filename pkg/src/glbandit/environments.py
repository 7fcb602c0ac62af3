"""Synthetic GLM bandit environments and replay-log evaluation."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .glm import ContextSet, MeanFunction, logistic_mean


def default_arm_means(n_arms: int) -> np.ndarray:
    """Per-arm context means: ``[-N/2, ..., -1, 1, ..., N/2]`` skipping zero.

    For odd ``N`` the extra arm goes to the positive side.
    """
    neg = n_arms // 2
    pos = n_arms - neg
    return np.concatenate([np.arange(-neg, 0), np.arange(1, pos + 1)]).astype(float)


def equicorrelated(n_arms: int, rho: float = 0.5) -> np.ndarray:
    cov = np.full((n_arms, n_arms), rho)
    np.fill_diagonal(cov, 1.0)
    return cov


@dataclass(frozen=True)
class SyntheticSpec:
    """Arm-correlated Gaussian contexts projected to the unit ball, Bernoulli rewards.

    For every coordinate ``j`` the ``N``-vector ``(x_1^j, ..., x_N^j)`` is
    drawn from ``N(arm_means, arm_cov)``, independently across ``j``.
    """

    n_arms: int
    dim: int
    arm_means: np.ndarray | None = None
    arm_cov: np.ndarray | None = None
    beta_star: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_arms < 1 or self.dim < 1:
            raise ValueError("need n_arms >= 1 and dim >= 1")
        means = default_arm_means(self.n_arms) if self.arm_means is None else self.arm_means
        cov = equicorrelated(self.n_arms) if self.arm_cov is None else self.arm_cov
        means = np.asarray(means, dtype=float)
        cov = np.asarray(cov, dtype=float)
        if means.shape != (self.n_arms,) or cov.shape != (self.n_arms, self.n_arms):
            raise ValueError("arm_means / arm_cov do not match n_arms")
        if not np.allclose(cov, cov.T):
            raise ValueError("arm covariance must be symmetric")
        chol = np.linalg.cholesky(cov)  # raises LinAlgError unless positive definite
        object.__setattr__(self, "arm_means", means)
        object.__setattr__(self, "arm_cov", cov)
        object.__setattr__(self, "_chol", chol)
        if self.beta_star is not None:
            b = np.asarray(self.beta_star, dtype=float)
            if b.shape != (self.dim,):
                raise ValueError("beta_star has the wrong dimension")
            object.__setattr__(self, "beta_star", b)

    def with_beta(self, beta_star) -> "SyntheticSpec":
        return SyntheticSpec(self.n_arms, self.dim, self.arm_means, self.arm_cov,
                             np.asarray(beta_star, dtype=float), self.seed)

    @property
    def s_bound(self) -> float:
        """Default ``S = 2 sqrt(d)``; dominates ``|beta*|`` for ``U(-1, 1)`` coordinates."""
        return 2.0 * math.sqrt(self.dim)


def gen_beta_star(dim: int, rng) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=dim)


def truncate_to_ball(x) -> np.ndarray:
    """Radially project each row onto the unit ball."""
    x = np.asarray(x, dtype=float)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.maximum(1.0, norms)


def gen_raw_contexts(spec: SyntheticSpec, rng, size: int | None = None) -> np.ndarray:
    """Untruncated contexts, shape (N, d) or (size, N, d)."""
    shape = (spec.dim, spec.n_arms) if size is None else (size, spec.dim, spec.n_arms)
    z = rng.standard_normal(shape)
    draws = z @ spec._chol.T + spec.arm_means  # rows ~ N(means, cov), one per coordinate
    return np.swapaxes(draws, -1, -2)


def gen_contexts(spec: SyntheticSpec, t: int, rng) -> ContextSet:
    return ContextSet(truncate_to_ball(gen_raw_contexts(spec, rng)), t)


def sample_reward(spec: SyntheticSpec, context, rng, mf: MeanFunction | None = None) -> float:
    mf = mf or logistic_mean()
    p = float(mf.mu(np.dot(context, spec.beta_star)))
    return float(rng.random() < p)


def expected_rewards(spec: SyntheticSpec, context_set: ContextSet, mf: MeanFunction | None = None):
    mf = mf or logistic_mean()
    return mf.mu(context_set.contexts @ spec.beta_star)


def instantaneous_regret(spec: SyntheticSpec, context_set: ContextSet, chosen: int,
                         mf: MeanFunction | None = None) -> float:
    means = expected_rewards(spec, context_set, mf)
    return float(max(means.max() - means[chosen], 0.0))


def _as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


class SyntheticEnvironment:
    """Stream of context sets and Bernoulli rewards for one seed.

    Contexts and reward noise come from separate generators, and the reward
    of round ``t`` is ``I(u_t < mu(x' beta*))`` with one uniform ``u_t`` per
    round, so policies run on the same seed see identical streams.
    """

    def __init__(self, spec: SyntheticSpec, seed, mf: MeanFunction | None = None):
        if spec.beta_star is None:
            raise ValueError("environment needs beta_star; use SyntheticSpec.with_beta")
        self.spec = spec
        self.mf = mf or logistic_mean()
        ctx_seq, rew_seq = _as_seed_sequence(seed).spawn(2)
        self._ctx_rng = np.random.default_rng(ctx_seq)
        self._rew_rng = np.random.default_rng(rew_seq)
        self.t = 0
        self._current = None
        self._u = None

    @property
    def n_arms(self):
        return self.spec.n_arms

    @property
    def dim(self):
        return self.spec.dim

    @property
    def beta_star(self):
        return self.spec.beta_star

    def observe(self) -> ContextSet:
        self.t += 1
        self._current = gen_contexts(self.spec, self.t, self._ctx_rng)
        self._u = self._rew_rng.random()
        return self._current

    def means(self) -> np.ndarray:
        return expected_rewards(self.spec, self._current, self.mf)

    def pull(self, arm: int) -> float:
        return float(self._u < self.means()[arm])

    def regret(self, arm: int) -> float:
        m = self.means()
        return float(max(m.max() - m[arm], 0.0))


# ---------------------------------------------------------------------------
# Context distributions and the minimum-eigenvalue diagnostic
# ---------------------------------------------------------------------------


def uniform_ball(dim: int, n_arms: int = 1):
    """Sampler of i.i.d. uniform points in the unit ball, shape (n, N, d)."""

    def sampler(rng, n):
        g = rng.standard_normal((n, n_arms, dim))
        g /= np.linalg.norm(g, axis=-1, keepdims=True)
        r = rng.random((n, n_arms, 1)) ** (1.0 / dim)
        return g * r

    return sampler


def synthetic_sampler(spec: SyntheticSpec):
    def sampler(rng, n):
        return truncate_to_ball(gen_raw_contexts(spec, rng, size=n))

    return sampler


def constant_sampler(context_set):
    x = np.asarray(context_set, dtype=float)

    def sampler(rng, n):
        return np.broadcast_to(x, (n,) + x.shape)

    return sampler


def min_eigen_diagnostic(sampler, n_samples: int, n_arms: int, rng, chunk: int = 10_000) -> float:
    """Smallest eigenvalue of the empirical ``(1/N) sum_i E[x_i x_i']``.

    For uniform-ball contexts this is close to ``1/(d+2)``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    acc = None
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        x = np.asarray(sampler(rng, m), dtype=float)
        if x.ndim == 2:
            x = x[:, None, :]
        if x.shape[1] != n_arms:
            raise ValueError(f"sampler produced {x.shape[1]} arms, expected {n_arms}")
        flat = x.reshape(-1, x.shape[-1])
        part = flat.T @ flat
        acc = part if acc is None else acc + part
        done += m
    second_moment = acc / (n_samples * n_arms)
    return float(np.linalg.eigvalsh(second_moment)[0])


# ---------------------------------------------------------------------------
# Replay logs
# ---------------------------------------------------------------------------


class LogFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class ReplayEvent:
    context_set: ContextSet
    logged_arm: int
    reward: float


@dataclass
class ReplayLog:
    events: list = field(default_factory=list)
    logging_policy: str = "uniform"

    def __len__(self):
        return len(self.events)

    @property
    def click_rate(self) -> float:
        return float(np.mean([e.reward for e in self.events]))


def parse_event(obj, line: int | None = None, n_arms: int | None = None) -> ReplayEvent:
    if not isinstance(obj, dict):
        raise LogFormatError("event must be a JSON object", line)
    missing = {"t", "contexts", "arm", "reward"} - obj.keys()
    if missing:
        raise LogFormatError(f"missing keys {sorted(missing)}", line)
    try:
        ctx = np.asarray(obj["contexts"], dtype=float)
        t = int(obj["t"])
        arm = obj["arm"]
        reward = obj["reward"]
    except (TypeError, ValueError) as exc:
        raise LogFormatError(str(exc), line) from None
    if ctx.ndim != 2:
        raise LogFormatError("contexts must be an N x d array", line)
    if n_arms is not None and ctx.shape[0] != n_arms:
        raise LogFormatError(f"expected {n_arms} arms, found {ctx.shape[0]}", line)
    if not isinstance(arm, int) or isinstance(arm, bool) or not 1 <= arm <= ctx.shape[0]:
        raise LogFormatError(f"arm must be an integer in [1, {ctx.shape[0]}]", line)
    if reward not in (0, 1) or isinstance(reward, bool):
        raise LogFormatError("reward must be 0 or 1", line)
    try:
        cs = ContextSet(ctx, max(t, 1))
    except ValueError as exc:
        raise LogFormatError(str(exc), line) from None
    return ReplayEvent(cs, arm - 1, float(reward))


def read_replay_log(path) -> ReplayLog:
    """Read a JSON-lines replay log; blank lines are ignored."""
    events = []
    n_arms = None
    with open(path) as fh:
        for lineno, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise LogFormatError(f"invalid JSON ({exc.msg})", lineno) from None
            ev = parse_event(obj, lineno, n_arms)
            n_arms = ev.context_set.n_arms
            events.append(ev)
    return ReplayLog(events)


def event_to_json(t: int, event: ReplayEvent) -> str:
    return json.dumps({
        "t": t,
        "contexts": event.context_set.contexts.tolist(),
        "arm": event.logged_arm + 1,
        "reward": int(event.reward),
    })


def write_replay_log(log: ReplayLog, path) -> None:
    with open(path, "w") as fh:
        for t, ev in enumerate(log.events, start=1):
            fh.write(event_to_json(t, ev) + "\n")


def generate_replay_log(spec: SyntheticSpec, n_events: int, seed,
                        mf: MeanFunction | None = None) -> ReplayLog:
    """Uniformly logged events from a synthetic environment."""
    env = SyntheticEnvironment(spec, seed, mf)
    arm_rng = np.random.default_rng(_as_seed_sequence(seed).spawn(3)[2])
    events = []
    for _ in range(n_events):
        cs = env.observe()
        arm = int(arm_rng.integers(spec.n_arms))
        events.append(ReplayEvent(cs, arm, env.pull(arm)))
    return ReplayLog(events, "uniform")


@dataclass(frozen=True)
class ReplayResult:
    ctr: float | None
    matched: int
    clicks: int
    events: int


class LoggedArmPolicy:
    """Plays the logged arm of each event in order, so every event matches.

    Useful as a replay sanity check: its replay CTR is the log's click rate.
    """

    name = "logged"

    def __init__(self, log: ReplayLog):
        self._arms = iter([e.logged_arm for e in log.events])

    def select(self, context_set, rng):
        return next(self._arms), {}

    def update(self, context_set, arm, reward, info):
        pass


def replay_evaluate(log: ReplayLog, policy, rng) -> ReplayResult:
    """Replay estimate of a policy's click-through rate.

    Only events where the policy picks the logged arm are revealed to it and
    counted; the rest are skipped without updating the policy.
    """
    if len(log) == 0:
        raise ValueError("no events")
    matched = clicks = 0
    for ev in log.events:
        arm, info = policy.select(ev.context_set, rng)
        if arm != ev.logged_arm:
            continue
        policy.update(ev.context_set, arm, ev.reward, info)
        matched += 1
        clicks += int(ev.reward == 1)
    ctr = clicks / matched if matched else None
    return ReplayResult(ctr, matched, clicks, len(log))
