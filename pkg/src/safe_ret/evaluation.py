"""Evaluation protocol and reward metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .mdp import EpisodeConfig, RetEnv
from .netsim import NetworkConfig
from .policies import Policy


def _as_matrix(rewards) -> np.ndarray:
    try:
        m = np.asarray(rewards, dtype=float)
    except ValueError as exc:
        raise ValueError("ragged reward matrix") from exc
    if m.ndim != 2 or m.size == 0:
        raise ValueError("rewards must be a non-empty (T, C) matrix")
    return m


def avg_network_reward(rewards) -> tuple[np.ndarray, float]:
    m = _as_matrix(rewards)
    per_t = m.mean(axis=1)
    return per_t, float(per_t.mean())


def min_cell_reward(rewards) -> tuple[np.ndarray, float]:
    m = _as_matrix(rewards)
    per_t = m.min(axis=1)
    return per_t, float(per_t.mean())


def value_at_risk(values: Sequence[float], a: float) -> float:
    """Smallest observed value whose empirical CDF reaches ``a``."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("VaR of an empty sample")
    if not 0.0 < a <= 1.0:
        raise ValueError("a must lie in (0, 1]")
    cdf = np.searchsorted(v, v, side="right") / v.size
    return float(v[np.flatnonzero(cdf >= a)[0]])


def cvar(values: Sequence[float], a: float) -> float:
    """Mean of the sample at or below its ``a``-VaR (correctly rounded)."""
    var = value_at_risk(values, a)
    tail = [Fraction(float(x)) for x in values if x <= var]
    return float(sum(tail) / len(tail))


@dataclass
class RunResult:
    seed: int
    rewards: np.ndarray  # (T_epoch, C)
    avg_per_step: np.ndarray
    avg_reward: float
    min_per_step: np.ndarray
    min_cell_avg: float


@dataclass
class EvalReport:
    policy: str
    runs: list[RunResult]
    cvar_level: float = 0.05
    tags: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.runs)

    def _std(self, x) -> float:
        return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0

    @property
    def avg_rewards(self) -> np.ndarray:
        return np.array([r.avg_reward for r in self.runs])

    @property
    def min_cell_avgs(self) -> np.ndarray:
        return np.array([r.min_cell_avg for r in self.runs])

    @property
    def avg_reward(self) -> float:
        return float(np.mean(self.avg_rewards))

    @property
    def avg_reward_std(self) -> float:
        return self._std(self.avg_rewards)

    @property
    def min_cell_avg(self) -> float:
        return float(np.mean(self.min_cell_avgs))

    @property
    def min_cell_std(self) -> float:
        return self._std(self.min_cell_avgs)

    @property
    def cvar(self) -> float:
        return cvar(self.avg_rewards, self.cvar_level)

    # per-t curves, averaged over runs
    @property
    def avg_network_per_step(self) -> np.ndarray:
        return np.mean([r.avg_per_step for r in self.runs], axis=0)

    @property
    def min_cell_per_step(self) -> np.ndarray:
        return np.mean([r.min_per_step for r in self.runs], axis=0)

    @property
    def cvar_per_step(self) -> np.ndarray:
        stacked = np.array([r.avg_per_step for r in self.runs])
        return np.array([cvar(col, self.cvar_level) for col in stacked.T])

    def summary(self) -> dict:
        return {
            "policy": self.policy,
            **self.tags,
            "runs": self.k,
            "avg_reward_mean": self.avg_reward,
            "avg_reward_std": self.avg_reward_std,
            "avg_reward_cvar": self.cvar,
            "min_cell_mean": self.min_cell_avg,
            "min_cell_std": self.min_cell_std,
        }


def eval_reset_seed(seed: int) -> int:
    """Tilt-reset stream for evaluation, disjoint from the collection stream.

    A run evaluates on the same UE drop its data was logged on (network seed
    ``seed``), but episodes start from tilts no training rollout has seen.
    """
    return 1_000_003 + int(seed)


def run_episodes(
    policy: Policy,
    env: RetEnv,
    seed: int,
) -> RunResult:
    rng = np.random.default_rng([int(seed), 7])
    bound = policy.bind(env)
    t_epoch = env.episodes.t_epoch
    rewards = np.empty((t_epoch, env.num_cells))
    obs = env.obs()
    for t in range(t_epoch):
        if env.episode_start(t):
            obs = env.reset()
        actions = bound.act(obs, rng)
        obs, rewards[t] = env.step(actions)
    avg_t, avg = avg_network_reward(rewards)
    min_t, mn = min_cell_reward(rewards)
    return RunResult(seed, rewards, avg_t, avg, min_t, mn)


def evaluate_policy(
    policy: Policy | Callable[[int], Policy],
    config: NetworkConfig,
    seeds: Sequence[int],
    episodes: EpisodeConfig = EpisodeConfig(),
    cvar_level: float = 0.05,
    name: str | None = None,
    **tags,
) -> EvalReport:
    """Run ``policy`` for one epoch on the network of each seed.

    ``policy`` may be a callable ``seed -> Policy`` when each run has its
    own trained model.  Tilt resets use a seed-derived stream shared by all
    policies, so policies face identical start states.
    """
    if len(seeds) < 1:
        raise ValueError("need at least one seed")
    runs = []
    for seed in seeds:
        pol = policy(seed) if callable(policy) and not isinstance(policy, Policy) else policy
        env = RetEnv(config, seed, reset_seed=eval_reset_seed(seed), episodes=episodes)
        runs.append(run_episodes(pol, env, seed))
    label = name or getattr(policy, "name", "policy")
    report = EvalReport(label, runs, cvar_level, dict(tags))
    report.runs.sort(key=lambda r: r.seed)
    return report
