"""SPIBB-DQN: pseudo-counts, the bootstrapped set and offline training."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .collect import Dataset
from .mdp import NUM_ACTIONS
from .policies import Policy, greedy_actions
from .qnet import QNet, TrainHyper

log = logging.getLogger(__name__)


class CountMode(str, enum.Enum):
    KERNEL = "kernel"
    LITERAL = "literal"


@dataclass(frozen=True)
class SpibbConfig:
    n_wedge: float = 100.0
    hyper: TrainHyper = field(default_factory=TrainHyper)
    mode: CountMode = CountMode.KERNEL
    d0: float = 0.5
    greedy_execution: bool = True

    def __post_init__(self):
        if self.n_wedge < 0:
            raise ValueError("n_wedge must be non-negative")
        if self.d0 <= 0:
            raise ValueError("d0 must be positive")
        object.__setattr__(self, "mode", CountMode(self.mode))


class BootstrapIndex:
    """Per-action state lists of a dataset; counts are evaluated on demand.

    Kernel mode weighs each stored state by ``max(0, 1 - dist / d0)``;
    literal mode sums raw Euclidean distances.  Stored rows are accumulated
    one at a time (vectorised over the queries) so the result matches a
    plain sequential loop bit for bit.
    """

    def __init__(self, states, actions, n_wedge: float, mode=CountMode.KERNEL, d0: float = 0.5):
        states = np.asarray(states, dtype=float)
        actions = np.asarray(actions, dtype=int)
        if len(states) == 0:
            raise ValueError("cannot index an empty dataset")
        self.n_wedge = float(n_wedge)
        self.mode = CountMode(mode)
        self.d0 = float(d0)
        self.entries = [states[actions == a] for a in range(NUM_ACTIONS)]

    def counts(self, queries) -> np.ndarray:
        """Pseudo-counts for every action, shape (m, 3)."""
        q = np.atleast_2d(np.asarray(queries, dtype=float))
        out = np.zeros((len(q), NUM_ACTIONS))
        for a, pts in enumerate(self.entries):
            acc = np.zeros(len(q))
            for p in pts:
                diff = q - p
                d = np.sqrt(diff[:, 0] ** 2 + diff[:, 1] ** 2 + diff[:, 2] ** 2 + diff[:, 3] ** 2)
                if self.mode is CountMode.KERNEL:
                    acc += np.maximum(0.0, 1.0 - d / self.d0)
                else:
                    acc += d
            out[:, a] = acc
        return out

    def pseudo_count(self, s, a: int) -> float:
        return float(self.counts(s)[0, int(a)])

    def bootstrapped(self, queries) -> np.ndarray:
        """Boolean mask (m, 3): True where the pair is in the bootstrapped set."""
        return self.counts(queries) <= self.n_wedge

    def is_bootstrapped(self, s, a: int) -> bool:
        return bool(self.bootstrapped(s)[0, int(a)])


def build_index(dataset: Dataset, config: SpibbConfig) -> BootstrapIndex:
    if dataset.empty:
        raise ValueError("cannot build a bootstrap index from an empty dataset")
    cols = dataset.arrays()
    return BootstrapIndex(cols["s"], cols["a"], config.n_wedge, config.mode, config.d0)


def pseudo_count(index: BootstrapIndex, s, a: int) -> float:
    return index.pseudo_count(s, a)


def spibb_targets(q_next: np.ndarray, boot: np.ndarray, pi_next: np.ndarray, r, gamma: float) -> np.ndarray:
    """Vectorised bootstrapped target.

    ``q_next``, ``boot`` and ``pi_next`` are (n, 3): next-state Q-values,
    bootstrapped mask and baseline probabilities at the next state.
    Bootstrapped actions back up their baseline-weighted value; the rest of
    the baseline mass goes to the best non-bootstrapped action.
    """
    q_next = np.atleast_2d(q_next)
    boot = np.atleast_2d(boot).astype(bool)
    pi_next = np.atleast_2d(pi_next)
    boot_value = np.where(boot, pi_next * q_next, 0.0).sum(axis=1)
    boot_mass = np.where(boot, pi_next, 0.0).sum(axis=1)
    free = ~boot
    has_free = free.any(axis=1)
    free_max = np.where(free, q_next, -np.inf).max(axis=1)
    free_mass = np.where(has_free, 1.0 - boot_mass, 0.0)
    free_value = np.where(has_free, free_mass * np.where(has_free, free_max, 0.0), 0.0)
    return np.asarray(r, dtype=float) + gamma * (boot_value + free_value)


def spibb_target(net: QNet, index: BootstrapIndex, transition, gamma: float) -> float:
    s_next = np.asarray(transition.s_next, dtype=float)
    q = net.q_values(s_next)
    boot = index.bootstrapped(s_next)
    pi = np.asarray(transition.pi_b_next, dtype=float)[None]
    return float(spibb_targets(q, boot, pi, [transition.r], gamma)[0])


def dqn_targets(q_next: np.ndarray, r, gamma: float) -> np.ndarray:
    return np.asarray(r, dtype=float) + gamma * np.atleast_2d(q_next).max(axis=1)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    """Per-epoch shuffled batches, floor(n / batch_size) of them."""
    if batch_size > n:
        log.warning("batch size %d exceeds dataset size %d; using one full batch", batch_size, n)
        yield rng.permutation(n)
        return
    perm = rng.permutation(n)
    for j in range(n // batch_size):
        yield perm[j * batch_size : (j + 1) * batch_size]


def train_spibb(dataset: Dataset, config: SpibbConfig = SpibbConfig(), seed: int = 0, vanilla: bool = False) -> QNet:
    """Offline SPIBB-DQN.  ``vanilla=True`` trains plain offline DQN with the same sampling."""
    if dataset.empty:
        raise ValueError("cannot train on an empty dataset")
    cols = dataset.arrays()
    hyper = config.hyper
    net = QNet.init(seed)
    rng = np.random.default_rng(seed)
    boot_next = None
    if not vanilla:
        index = build_index(dataset, config)
        boot_next = index.bootstrapped(cols["s_next"])
    n = len(dataset)
    for _ in range(hyper.epochs):
        for idx in _batches(n, hyper.batch_size, rng):
            q_next = net.q_values(cols["s_next"][idx])
            if vanilla:
                y = dqn_targets(q_next, cols["r"][idx], hyper.gamma)
            else:
                y = spibb_targets(q_next, boot_next[idx], cols["pi_b_next"][idx], cols["r"][idx], hyper.gamma)
            net.sgd_step(cols["s"][idx], cols["a"][idx], y, hyper.lr)
    return net


class SpibbGreedy(Policy):
    name = "spibb"

    def __init__(self, net: QNet, name: str | None = None):
        self.net = net
        if name:
            self.name = name

    def probs(self, obs):
        a = greedy_actions(self.net.q_values(obs))
        p = np.zeros((len(a), NUM_ACTIONS))
        p[np.arange(len(a)), a] = 1.0
        return p

    def act(self, obs, rng):
        return greedy_actions(self.net.q_values(obs))


class SpibbProjected(Policy):
    """Baseline mass on bootstrapped actions, the remainder on the best free action."""

    name = "spibb-projected"

    def __init__(self, net: QNet, index: BootstrapIndex, baseline: Policy, name: str | None = None):
        self.net = net
        self.index = index
        self.baseline = baseline
        if name:
            self.name = name

    def probs(self, obs):
        obs = np.atleast_2d(obs)
        return projected_probs(self.net.q_values(obs), self.index.bootstrapped(obs), self.baseline.probs(obs))


def projected_probs(q: np.ndarray, boot: np.ndarray, pi_b: np.ndarray) -> np.ndarray:
    q, boot, pi_b = np.atleast_2d(q), np.atleast_2d(boot).astype(bool), np.atleast_2d(pi_b)
    p = np.where(boot, pi_b, 0.0)
    free = ~boot
    masked = np.where(free, q, -np.inf)
    best = np.argmax(masked, axis=1)
    rows = np.flatnonzero(free.any(axis=1))
    p[rows, best[rows]] += 1.0 - p[rows].sum(axis=1)
    return p


def spibb_projected_policy(net: QNet, index: BootstrapIndex, baseline: Policy) -> SpibbProjected:
    return SpibbProjected(net, index, baseline)
