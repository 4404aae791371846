"""Group-relative policy optimization with the composite forensic reward.

Per step: sample K trajectories per instance, score them, standardize the
rewards within each group, and take one ascent step on

    (1/G) sum_g sum_i A_gi log pi(tau_gi | x_g)  -  lambda_kl KL(pi_old || pi)

with advantages held fixed and ``pi_old`` the parameters at the start of the
step. Plain GRPO is the same loop with ``lambda_t = lambda_v = 0``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import policy
from .optim import NumericError, descent_step
from .policy import TokenBatch, check_params
from .rewards import OracleJudge, RewardWeights, composite_reward
from .vocab import MAX_TRACE_LEN

JUDGE_MODES = ("oracle", "agent", "agent-with-fallback")
DEFAULT_SIGMA_FLOOR = 1e-8


@dataclass(frozen=True)
class RgrpoConfig:
    group_size: int = 8
    lambda_kl: float = 0.01
    weights: RewardWeights = field(default_factory=RewardWeights)
    step_size: float = 0.02
    iterations: int = 100
    seed: int = 0
    sigma_floor: float = DEFAULT_SIGMA_FLOOR
    judge_mode: str = "oracle"
    logic_direction: str = "stability"
    batch_size: int = 32
    max_len: int = MAX_TRACE_LEN
    eval_every: int = 0

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.lambda_kl < 0 or self.sigma_floor < 0:
            raise ValueError("lambda_kl and sigma_floor must be non-negative")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.iterations < 0 or self.batch_size < 0 or self.eval_every < 0:
            raise ValueError("iterations, batch_size and eval_every must be >= 0")
        if self.judge_mode not in JUDGE_MODES:
            raise ValueError(f"judge_mode must be one of {JUDGE_MODES}")
        if self.logic_direction not in ("stability", "sensitivity"):
            raise ValueError("logic_direction must be 'stability' or 'sensitivity'")
        if not 1 <= self.max_len <= MAX_TRACE_LEN:
            raise ValueError(f"max_len must lie in [1, {MAX_TRACE_LEN}]")

    @property
    def mode(self) -> str:
        return self.weights.mode

    def to_dict(self):
        d = asdict(self)
        d.update(d.pop("weights"))
        return d


@dataclass(frozen=True)
class GroupStats:
    rewards: np.ndarray
    mu: float
    sigma: float
    standardized: np.ndarray
    advantages: np.ndarray
    degenerate: bool


def _mean(values) -> float:
    total = 0.0
    for v in values:
        total += float(v)
    return total / len(values)


def raw_advantages(rewards: Sequence[float]) -> np.ndarray:
    """Reward minus the group mean."""
    r = np.asarray(rewards, dtype=float)
    if len(r) < 2:
        raise ValueError("a group needs at least 2 rewards")
    return r - _mean(r)


def normalized_advantages(stats: GroupStats) -> np.ndarray:
    """Standardized rewards minus their own mean (already zero up to rounding)."""
    if stats.degenerate:
        return np.zeros_like(stats.standardized)
    adv = stats.standardized - _mean(stats.standardized)
    assert np.all(np.abs(adv - stats.standardized) <= 1e-9)
    return adv


def standardize_group(rewards: Sequence[float], sigma_floor: float = DEFAULT_SIGMA_FLOOR) -> GroupStats:
    """Population-std standardization; groups with sigma < floor are degenerate."""
    r = np.asarray(rewards, dtype=float)
    if len(r) < 2:
        raise ValueError("a group needs at least 2 rewards")
    mu = _mean(r)
    sigma = math.sqrt(_mean((r - mu) ** 2))
    degenerate = sigma < sigma_floor or sigma == 0.0
    z = np.zeros_like(r) if degenerate else (r - mu) / sigma
    stats = GroupStats(r, mu, sigma, z, np.zeros_like(r), degenerate)
    return GroupStats(r, mu, sigma, z, normalized_advantages(stats), degenerate)


def member_rng(seed: int, step: int, group: int, member: int, group_size: int) -> np.random.Generator:
    """Independent stream ``group * K + member`` for a given step."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(step, group * group_size + member)))


def perturb_seed(seed: int, step: int, group: int, member: int) -> int:
    ss = np.random.SeedSequence(seed, spawn_key=(step, group, member, 1))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sample_group(params, instance, K: int, seed: int, step: int = 0, group: int = 0,
                 max_len: int = MAX_TRACE_LEN) -> list:
    if K < 2:
        raise ValueError("K must be >= 2")
    rngs = [member_rng(seed, step, group, m, K) for m in range(K)]
    return policy.sample_trajectories(params, instance.features, rngs, max_len)


class _Surrogate:
    """The step objective with samples and advantages frozen."""

    def __init__(self, groups, lambda_kl: float):
        self.n_groups = len(groups)
        self.lambda_kl = lambda_kl
        traces, feats, weights = [], [], []
        for instance, trajs, adv in groups:
            adv = np.asarray(adv, dtype=float)
            if not np.all(np.isfinite(adv)):
                raise NumericError("non-finite advantage")
            if not np.any(adv):
                continue  # degenerate group: no score term, no KL contexts
            for traj, a in zip(trajs, adv):
                traces.append(traj.trace)
                feats.append(instance.features)
                weights.append(a)
        self.batch = TokenBatch(traces, feats) if traces else None
        if self.batch is not None:
            self.row_weights = np.asarray(weights)[self.batch.owner] / self.n_groups

    def value(self, params, old_params) -> float:
        if self.batch is None:
            return 0.0
        score = float(self.row_weights @ self.batch.row_logprobs(params))
        kl = self.batch.kl(old_params, params) if self.lambda_kl else 0.0
        return score - self.lambda_kl * kl

    def gradient(self, params, old_params) -> np.ndarray:
        if self.batch is None:
            return np.zeros_like(check_params(params))
        g = self.batch.weighted_grad(params, self.row_weights)
        if self.lambda_kl:
            g = g - self.lambda_kl * self.batch.kl_grad(old_params, params)
        return g


def objective(params, old_params, groups, lambda_kl: float) -> float:
    """Surrogate value; ``groups`` is a list of (instance, trajectories, advantages)."""
    return _Surrogate(groups, lambda_kl).value(params, old_params)


def objective_gradient(params, old_params, groups, lambda_kl: float) -> np.ndarray:
    g = _Surrogate(groups, lambda_kl).gradient(params, old_params)
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite objective gradient")
    return g


def rgrpo_step(params, batch: Sequence, config: RgrpoConfig, judge=None, step: int = 0):
    """Sample, score, standardize and take one ascent step.

    Returns ``(new_params, metrics)``.
    """
    params = check_params(params)
    judge = judge if judge is not None else OracleJudge(config.logic_direction)
    old = params.copy()
    K = config.group_size
    groups, stats_all, breakdowns = [], [], []
    for g, inst in enumerate(batch):
        trajs = sample_group(old, inst, K, config.seed, step, g, config.max_len)
        rewards = []
        for m, traj in enumerate(trajs):
            b = composite_reward(traj, inst, config.weights, perturb_seed(config.seed, step, g, m), judge, old)
            breakdowns.append(b)
            rewards.append(b.total)
        stats = standardize_group(rewards, config.sigma_floor)
        stats_all.append(stats)
        groups.append((inst, trajs, stats.advantages))

    sur = _Surrogate(groups, config.lambda_kl)
    f0 = sur.value(old, old)
    grad = sur.gradient(old, old)
    new, t = descent_step(lambda w: -sur.value(w, old), old, -f0, -grad, config.step_size)
    kl_to_old = sur.batch.kl(old, new) if sur.batch is not None else 0.0

    metrics = {
        "step": step + 1,
        "mode": config.mode,
        "mean_total_reward": _mean([b.total for b in breakdowns]),
        "mean_r_sem": _mean([b.r_sem for b in breakdowns]),
        "mean_r_think": _mean([b.r_think for b in breakdowns]),
        "mean_r_view": _mean([b.r_view for b in breakdowns]),
        "kl_to_old": float(kl_to_old),
        "degenerate_groups": sum(s.degenerate for s in stats_all),
        "group_mu": [s.mu for s in stats_all],
        "group_sigma": [s.sigma for s in stats_all],
        "step_taken": t,
    }
    return new, metrics


def batch_schedule(n: int, batch_size: int, iterations: int, seed: int) -> list[list[int]]:
    """Instance indices per step: consecutive slices of seed-derived epoch permutations."""
    if batch_size == 0 or batch_size >= n:
        return [list(range(n))] * iterations
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2**31,)))
    out, pool = [], []
    while len(out) < iterations:
        if len(pool) < batch_size:
            pool = pool + rng.permutation(n).tolist()
        out.append(pool[:batch_size])
        pool = pool[batch_size:]
    return out


def greedy_accuracy(params, instances) -> float:
    answers = policy.predict_answers(params, [i.features for i in instances])
    return sum(a == i.label for a, i in zip(answers, instances)) / len(instances)


def train_rgrpo(init_params, dataset: Sequence, config: RgrpoConfig, judge=None,
                eval_set: Sequence | None = None,
                on_step: Callable[[dict, np.ndarray], None] | None = None) -> np.ndarray:
    params = check_params(init_params).copy()
    if config.iterations == 0:
        return params
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    judge = judge if judge is not None else OracleJudge(config.logic_direction)
    schedule = batch_schedule(len(dataset), config.batch_size, config.iterations, config.seed)
    for step, idx in enumerate(schedule):
        params, metrics = rgrpo_step(params, [dataset[i] for i in idx], config, judge, step)
        if config.eval_every and eval_set and (step + 1) % config.eval_every == 0:
            metrics["eval_acc"] = greedy_accuracy(params, eval_set)
        else:
            metrics["eval_acc"] = None
        if on_step is not None:
            on_step(metrics, params)
    return params
