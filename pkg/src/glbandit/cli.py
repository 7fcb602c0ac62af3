"""Command-line entry points: ``simulate``, ``replay``, ``diagnose``, ``gen-log``.

Exit codes: 0 success, 1 runtime or data error, 2 usage or configuration error.
Set ``GLB_LOG_LEVEL`` to one of error/warn/info/debug for logging.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import environments as envs
from .glm import GLMConvergenceError, get_mean_function
from .harness import DEFAULT_GRID, ExperimentConfig, config_to_dict, run_experiment
from .policies import POLICY_PARAM, ConfigError, make_policy

SCHEMA_VERSION = 1
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO,
              "debug": logging.DEBUG}


class UsageError(Exception):
    pass


def _load_config(path, allowed: set, required: set = frozenset()) -> dict:
    if path is None:
        raise UsageError("--config is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})")
    if not isinstance(data, dict):
        raise UsageError(f"{path}: top level must be an object")
    version = data.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise UsageError(f"{path}: schema_version must be {SCHEMA_VERSION}, got {version!r}")
    unknown = set(data) - allowed
    if unknown:
        raise UsageError(f"{path}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(data)
    if missing:
        raise UsageError(f"{path}: missing keys {sorted(missing)}")
    return data


# -- simulate -----------------------------------------------------------------

SIMULATE_KEYS = {"n_arms", "dim", "horizon", "repetitions", "tuning_repetitions", "seed",
                 "beta_mode", "mean_function", "policies", "policy_options", "max_seconds"}
DDRTS_OPTIONS = {"lambda", "delta", "gamma", "s_bound", "mc_samples", "gram_mode",
                 "update_every", "nmle_ridge"}
BASELINE_OPTIONS = {"ridge"}


def experiment_from_dict(data: dict, seed: int | None = None) -> ExperimentConfig:
    data = dict(data)
    policies = data.pop("policies", None)
    if policies is None:
        grids = (("ddrts", DEFAULT_GRID), ("ts_glm", DEFAULT_GRID), ("glm_ucb", DEFAULT_GRID))
    else:
        if not isinstance(policies, dict) or not policies:
            raise UsageError("'policies' must be a nonempty object of name -> grid")
        grids = []
        for name, grid in policies.items():
            if name not in POLICY_PARAM:
                raise UsageError(f"unknown policy {name!r}; choose from {sorted(POLICY_PARAM)}")
            grid = DEFAULT_GRID if grid is None else grid
            if not isinstance(grid, list):
                raise UsageError(f"grid for {name} must be a list")
            grids.append((name, tuple(float(g) for g in grid)))
        grids = tuple(grids)
    options = data.pop("policy_options", {}) or {}
    for name, opts in options.items():
        allowed = DDRTS_OPTIONS if name == "ddrts" else BASELINE_OPTIONS
        if name not in POLICY_PARAM or name == "uniform":
            raise UsageError(f"policy_options given for unsupported policy {name!r}")
        unknown = set(opts) - allowed
        if unknown:
            raise UsageError(f"unknown options for {name}: {sorted(unknown)}")
    if seed is not None:
        data["seed"] = seed
    try:
        return ExperimentConfig(policies=grids, policy_options=options, **data)
    except (TypeError, ConfigError) as exc:
        raise UsageError(str(exc))


def cmd_simulate(args) -> int:
    data = _load_config(args.config, SIMULATE_KEYS)
    cfg = experiment_from_dict(data, args.seed)
    if args.dry_run:
        print(json.dumps({"schema_version": SCHEMA_VERSION, **config_to_dict(cfg)},
                         indent=2, sort_keys=True))
        return 0
    out = Path(args.out or "results")
    summary = run_experiment(cfg, out, jobs=args.jobs, timing=args.timing)
    for name, stats in summary["policies"].items():
        print(f"{name:8s} {stats['selected']}  R(T) = {stats['final_mean']:.3f} +/- {stats['final_sd']:.3f}")
    print(f"artifacts written to {out}")
    return 0


# -- replay -------------------------------------------------------------------

REPLAY_KEYS = {"policy", "params", "mean_function"}


def replay_trace_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("event", "arm", "reward", "matched", "clicks"))
    w.writerows(rows)
    return buf.getvalue()


class _Recorder:
    """Wraps a policy and records matched events for the CSV trace."""

    def __init__(self, policy):
        self.policy = policy
        self.rows = []
        self._event = 0
        self._clicks = 0

    def select(self, context_set, rng):
        self._event += 1
        return self.policy.select(context_set, rng)

    def update(self, context_set, arm, reward, info):
        self.policy.update(context_set, arm, reward, info)
        self._clicks += int(reward == 1)
        self.rows.append((self._event, arm + 1, int(reward), len(self.rows) + 1, self._clicks))


def cmd_replay(args) -> int:
    data = _load_config(args.config, REPLAY_KEYS, {"policy"})
    if args.log is None:
        raise UsageError("--log is required")
    if not Path(args.log).is_file():
        raise UsageError(f"log file not found: {args.log}")
    replay_log = envs.read_replay_log(args.log)
    if len(replay_log) == 0:
        print("error: no events", file=sys.stderr)
        return 1
    name = data["policy"]
    params = dict(data.get("params") or {})
    n_arms = replay_log.events[0].context_set.n_arms
    dim = replay_log.events[0].context_set.dim
    mf = get_mean_function(data.get("mean_function", "logistic"), radius=1.0 + 2.0 * np.sqrt(dim))
    if name == "logged":
        if params:
            raise UsageError("the 'logged' policy takes no parameters")
        policy = envs.LoggedArmPolicy(replay_log)
    else:
        if name == "ddrts":
            params.setdefault("s_bound", 2.0 * np.sqrt(dim))
        try:
            policy = make_policy(name, n_arms, dim, mf, **params)
        except (TypeError, ConfigError) as exc:
            raise UsageError(str(exc))
    seed = 0 if args.seed is None else args.seed
    recorder = _Recorder(policy)
    result = envs.replay_evaluate(replay_log, recorder, np.random.default_rng(seed))
    summary = {"policy": name, "params": params, "seed": seed, "events": result.events,
               "matched": result.matched, "clicks": result.clicks, "ctr": result.ctr,
               "log_click_rate": replay_log.click_rate}
    print(json.dumps(summary, sort_keys=True))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "replay.csv").write_text(replay_trace_csv(recorder.rows))
        (out / "replay_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


# -- diagnose -----------------------------------------------------------------

DIAGNOSE_KEYS = {"distribution", "dim", "n_arms"}


def cmd_diagnose(args) -> int:
    data = _load_config(args.config, DIAGNOSE_KEYS, {"distribution", "dim"})
    if args.n_samples is None or args.n_samples < 1:
        raise UsageError("--n-samples must be a positive integer")
    dim = int(data["dim"])
    n_arms = int(data.get("n_arms", 1))
    dist = data["distribution"]
    if dist == "uniform_ball":
        sampler = envs.uniform_ball(dim, n_arms)
        reference = 1.0 / (dim + 2)
    elif dist == "synthetic":
        sampler = envs.synthetic_sampler(envs.SyntheticSpec(n_arms, dim))
        reference = None
    else:
        raise UsageError(f"unknown distribution {dist!r}; use 'uniform_ball' or 'synthetic'")
    seed = 0 if args.seed is None else args.seed
    value = envs.min_eigen_diagnostic(sampler, args.n_samples, n_arms, np.random.default_rng(seed))
    out = {"distribution": dist, "dim": dim, "n_arms": n_arms, "n_samples": args.n_samples,
           "seed": seed, "min_eigenvalue": value}
    if reference is not None:
        out["reference"] = reference
    print(json.dumps(out, sort_keys=True))
    return 0


# -- gen-log --------------------------------------------------------------------

GENLOG_KEYS = {"n_arms", "dim", "n_events", "beta_star", "mean_function"}


def cmd_gen_log(args) -> int:
    data = _load_config(args.config, GENLOG_KEYS, {"n_arms", "dim"})
    if args.out is None:
        raise UsageError("--out is required")
    n_events = args.n_events if args.n_events is not None else data.get("n_events")
    if n_events is None or int(n_events) < 1:
        raise UsageError("number of events must be a positive integer")
    seed = 0 if args.seed is None else args.seed
    dim, n_arms = int(data["dim"]), int(data["n_arms"])
    if "beta_star" in data:
        beta = np.asarray(data["beta_star"], dtype=float)
    else:
        beta = envs.gen_beta_star(dim, np.random.default_rng([seed, 0xBE7A]))
    try:
        spec = envs.SyntheticSpec(n_arms, dim).with_beta(beta)
    except ValueError as exc:
        raise UsageError(str(exc))
    mf = get_mean_function(data.get("mean_function", "logistic"))
    replay_log = envs.generate_replay_log(spec, int(n_events), seed, mf)
    envs.write_replay_log(replay_log, args.out)
    print(json.dumps({"events": len(replay_log), "click_rate": replay_log.click_rate,
                      "beta_star": beta.tolist(), "out": str(args.out)}, sort_keys=True))
    return 0


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glbandit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="base random seed")
        p.add_argument("--out", help="output directory or file")
        return p

    p = common(sub.add_parser("simulate", help="grid search and evaluation runs"))
    p.add_argument("--jobs", type=int, default=None, help="concurrent runs (default: all cores)")
    p.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")
    p.add_argument("--timing", action="store_true",
                   help="fill elapsed_ms in the CSV output (breaks byte-identical reruns)")
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("replay", help="replay evaluation of a policy on a click log"))
    p.add_argument("--log", help="JSON-lines replay log")
    p.set_defaults(func=cmd_replay)

    p = common(sub.add_parser("diagnose", help="minimum eigenvalue of the context second moment"))
    p.add_argument("--n-samples", type=int, default=None)
    p.set_defaults(func=cmd_diagnose)

    p = common(sub.add_parser("gen-log", help="write a uniformly logged synthetic replay log"))
    p.add_argument("--n-events", type=int, default=None)
    p.set_defaults(func=cmd_gen_log)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("GLB_LOG_LEVEL", "warn").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (envs.LogFormatError, GLMConvergenceError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
