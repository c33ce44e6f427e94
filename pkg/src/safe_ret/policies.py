"""Tilt control policies.

Every policy maps a batch of per-cell observations (rows in cell order) to
action probabilities over Down/Keep/Up.  ``bind(env)`` lets a policy that
needs oracle access to a particular network (the optimal reference)
specialise itself before an evaluation run; everything else returns itself.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .mdp import NUM_ACTIONS, Action, RetEnv, rewards_from_kpis
from .netsim import kpi_array
from .qnet import QNet, TrainHyper

log = logging.getLogger(__name__)

# argmax preference on ties: Keep, then Down, then Up
TIE_ORDER = (Action.KEEP, Action.DOWN, Action.UP)


class Policy:
    name = "policy"

    def probs(self, obs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample(self, obs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return sample_actions(self.probs(obs), rng)

    def act(self, obs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return self.sample(obs, rng)

    def bind(self, env: RetEnv) -> "Policy":
        return self


def sample_actions(p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One inverse-CDF draw per row of ``p``."""
    cdf = np.cumsum(p, axis=1)
    u = rng.random(len(p))[:, None]
    return np.minimum((u >= cdf).sum(axis=1), NUM_ACTIONS - 1)


def greedy_actions(q: np.ndarray) -> np.ndarray:
    """Row-wise argmax with the Keep > Down > Up tie preference."""
    q = np.atleast_2d(q)
    order = np.array(TIE_ORDER)
    return order[np.argmax(q[:, order], axis=1)]


def one_hot(actions) -> np.ndarray:
    actions = np.asarray(actions, dtype=int)
    out = np.zeros((len(actions), NUM_ACTIONS))
    out[np.arange(len(actions)), actions] = 1.0
    return out


@dataclass(frozen=True)
class RuleThresholds:
    cov_low: float = 0.7
    qual_low: float = 0.5
    cap_low: float = 0.5


def rule_based_actions(obs, thresholds: RuleThresholds = RuleThresholds()) -> np.ndarray:
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    cov, cap, qual = obs[:, 1], obs[:, 2], obs[:, 3]
    actions = np.full(len(obs), int(Action.KEEP))
    tighten = (qual < thresholds.qual_low) | (cap < thresholds.cap_low)
    actions[tighten] = Action.UP
    actions[cov < thresholds.cov_low] = Action.DOWN
    return actions


def rule_based_probs(obs, thresholds: RuleThresholds = RuleThresholds()) -> np.ndarray:
    return one_hot(rule_based_actions(obs, thresholds))


def eps_greedy_probs(q: np.ndarray, epsilon: float) -> np.ndarray:
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    p = np.full((len(q), NUM_ACTIONS), epsilon / NUM_ACTIONS)
    p[np.arange(len(q)), greedy_actions(q)] += 1.0 - epsilon
    return p


def dqn_eps_greedy_probs(net: QNet, obs, epsilon: float) -> np.ndarray:
    return eps_greedy_probs(net.q_values(obs), epsilon)


class RuleBased(Policy):
    name = "rb"

    def __init__(self, thresholds: RuleThresholds = RuleThresholds()):
        self.thresholds = thresholds

    def probs(self, obs):
        return rule_based_probs(obs, self.thresholds)

    def act(self, obs, rng):
        return rule_based_actions(obs, self.thresholds)


class RandomPolicy(Policy):
    name = "random"

    def probs(self, obs):
        return np.full((len(np.atleast_2d(obs)), NUM_ACTIONS), 1.0 / NUM_ACTIONS)


class DqnEpsGreedy(Policy):
    name = "dqn"

    def __init__(self, net: QNet, epsilon: float = 0.2):
        self.net = net
        self.epsilon = epsilon

    def probs(self, obs):
        return dqn_eps_greedy_probs(self.net, obs, self.epsilon)


class DqnGreedy(Policy):
    name = "greedy"

    def __init__(self, net: QNet, name: str | None = None):
        self.net = net
        if name:
            self.name = name

    def probs(self, obs):
        return one_hot(greedy_actions(self.net.q_values(obs)))

    def act(self, obs, rng):
        return greedy_actions(self.net.q_values(obs))


# --- DQN baseline -------------------------------------------------------------


def train_dqn_baseline(
    env: RetEnv,
    hyper: TrainHyper = TrainHyper(),
    steps: int = 500,
    epsilon: float = 0.2,
    seed: int = 0,
    replay_size: int = 10_000,
) -> QNet:
    """Online epsilon-greedy DQN with experience replay.

    One environment step moves every cell once and is followed by one SGD
    update on a minibatch drawn from the replay buffer.  Targets use the
    current network.  Episodes restart with random tilts every
    ``env.episodes.t_episode`` steps.
    """
    rng = np.random.default_rng(seed)
    net = QNet.init(seed)
    if steps <= 0:
        return net
    cap = replay_size
    buf_s = np.empty((cap, 4))
    buf_a = np.empty(cap, dtype=int)
    buf_r = np.empty(cap)
    buf_s2 = np.empty((cap, 4))
    size = 0
    head = 0
    obs = env.obs()
    for t in range(steps):
        if t % env.episodes.t_episode == 0:
            obs = env.reset()
        p = dqn_eps_greedy_probs(net, obs, epsilon)
        actions = sample_actions(p, rng)
        nxt, rewards = env.step(actions)
        for c in range(len(obs)):
            buf_s[head], buf_a[head], buf_r[head], buf_s2[head] = obs[c], actions[c], rewards[c], nxt[c]
            head = (head + 1) % cap
            size = min(size + 1, cap)
        obs = nxt
        if size >= hyper.batch_size:
            idx = rng.choice(size, size=hyper.batch_size, replace=False)
            y = buf_r[idx] + hyper.gamma * net.q_values(buf_s2[idx]).max(axis=1)
            net.sgd_step(buf_s[idx], buf_a[idx], y, hyper.lr)
    return net


# --- empirical optimum --------------------------------------------------------


@dataclass
class OptimalSearchResult:
    targets_deg: np.ndarray
    network_reward: float
    sweeps: int
    converged: bool
    history: list = field(default_factory=list)


def optimal_search(env: RetEnv, max_sweeps: int = 10, start_deg=None) -> OptimalSearchResult:
    """Round-robin coordinate ascent of the mean cell reward over the tilt grid."""
    cfg = env.config
    grid = cfg.tilt_grid
    state = env.state
    tilts = np.full(cfg.num_cells, grid[len(grid) // 2]) if start_deg is None else np.array(start_deg, float)

    def score(batch):
        return rewards_from_kpis(kpi_array(state, cfg, batch)).mean(axis=-1)

    best = float(score(tilts[None])[0])
    history = [best]
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        changed = False
        for c in range(cfg.num_cells):
            cand = np.repeat(tilts[None], len(grid), axis=0)
            cand[:, c] = grid
            scores = score(cand)
            k = int(np.argmax(scores))
            if scores[k] > best and grid[k] != tilts[c]:
                tilts[c] = grid[k]
                best = float(scores[k])
                changed = True
        history.append(best)
        if not changed:
            converged = True
            break
    if not converged:
        log.warning("optimal_search: no fixed point after %d sweeps, returning best so far", max_sweeps)
    return OptimalSearchResult(tilts, best, sweeps, converged, history)


class TiltTargetPolicy(Policy):
    """Steps each cell's tilt one grid notch towards a fixed target."""

    name = "optimal"

    def __init__(self, targets_deg, config):
        self.targets = np.asarray(targets_deg, dtype=float)
        self.config = config

    def actions_for(self, obs):
        obs = np.atleast_2d(obs)
        cfg = self.config
        tilt = cfg.tilt_min_deg + obs[:, 0] * (cfg.tilt_max_deg - cfg.tilt_min_deg)
        diff = self.targets[: len(obs)] - tilt
        half = cfg.tilt_step_deg / 2
        return np.where(diff > half, Action.UP, np.where(diff < -half, Action.DOWN, Action.KEEP)).astype(int)

    def probs(self, obs):
        return one_hot(self.actions_for(obs))

    def act(self, obs, rng):
        return self.actions_for(obs)


class OptimalSearch(Policy):
    """Unbound optimal reference; ``bind`` runs the search on the given network."""

    name = "optimal"

    def __init__(self, max_sweeps: int = 10):
        self.max_sweeps = max_sweeps

    def bind(self, env: RetEnv) -> TiltTargetPolicy:
        res = optimal_search(env, self.max_sweeps)
        pol = TiltTargetPolicy(res.targets_deg, env.config)
        pol.search = res
        return pol

    def probs(self, obs):
        raise RuntimeError("OptimalSearch must be bound to an environment first")
