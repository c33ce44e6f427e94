"""Per-cell MDP view of the simulator: observations, actions, reward, episodes."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .netsim import NetworkConfig, NetworkState, build_network, kpi_array, random_tilts


class Action(enum.IntEnum):
    DOWN = 0
    KEEP = 1
    UP = 2

    @property
    def sign(self) -> int:
        return int(self) - 1


NUM_ACTIONS = len(Action)
OBS_DIM = 4
MAX_REWARD = math.log(4.0)


@dataclass(frozen=True)
class EpisodeConfig:
    t_episode: int = 20
    n_episode: int = 25

    @property
    def t_epoch(self) -> int:
        return self.t_episode * self.n_episode


def normalize_tilt(tilt_deg, config: NetworkConfig):
    return (np.asarray(tilt_deg, dtype=float) - config.tilt_min_deg) / (
        config.tilt_max_deg - config.tilt_min_deg
    )


def observe_all(state: NetworkState, config: NetworkConfig, kpis: np.ndarray | None = None) -> np.ndarray:
    """Observation rows ``[tilt_norm, cov, cap, qual]`` for every cell, shape (C, 4)."""
    if kpis is None:
        kpis = kpi_array(state, config)
    return np.column_stack([normalize_tilt(state.tilts_deg, config), kpis])


def observe(state: NetworkState, config: NetworkConfig, cell: int) -> np.ndarray:
    if not 0 <= cell < config.num_cells:
        raise IndexError(f"unknown cell {cell}")
    return observe_all(state, config)[cell]


def obs_from_kpis(tilt_deg: float, kpis, config: NetworkConfig) -> np.ndarray:
    return np.array([float(normalize_tilt(tilt_deg, config)), *kpis], dtype=float)


def reward(kpis) -> float:
    cov, cap, qual = kpis
    return math.log(1.0 + cov * cov + cap * cap + qual * qual)


def rewards_from_kpis(kpis: np.ndarray) -> np.ndarray:
    return np.log1p((np.asarray(kpis) ** 2).sum(axis=-1))


def apply_actions(state: NetworkState, config: NetworkConfig, actions) -> NetworkState:
    actions = np.asarray(actions, dtype=int)
    if actions.shape != (config.num_cells,):
        raise ValueError(f"need one action per cell ({config.num_cells}), got {actions.shape}")
    if actions.min() < 0 or actions.max() >= NUM_ACTIONS:
        raise ValueError("actions must be in {0, 1, 2}")
    tilts = state.tilts_deg + (actions - 1) * config.tilt_step_deg
    return state.with_tilts(np.clip(tilts, config.tilt_min_deg, config.tilt_max_deg))


def step(state: NetworkState, config: NetworkConfig, actions):
    """Apply every cell's action at once and recompute KPIs.

    Returns ``(next_state, next_obs (C, 4), rewards (C,))``.
    """
    nxt = apply_actions(state, config, actions)
    kpis = kpi_array(nxt, config)
    return nxt, observe_all(nxt, config, kpis), rewards_from_kpis(kpis)


def reset_episode(state: NetworkState, config: NetworkConfig, seed: int | np.random.Generator) -> NetworkState:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return state.with_tilts(random_tilts(config, rng))


class RetEnv:
    """Stateful convenience wrapper used by rollouts; owns one UE drop."""

    def __init__(
        self,
        config: NetworkConfig,
        network_seed: int,
        reset_seed: int | None = None,
        episodes: EpisodeConfig = EpisodeConfig(),
    ):
        self.config = config
        self.episodes = episodes
        self.network_seed = network_seed
        self.state = build_network(config, network_seed)
        self._reset_rng = np.random.default_rng(network_seed if reset_seed is None else reset_seed)
        self.t = 0
        self._kpis = kpi_array(self.state, config)

    @property
    def num_cells(self) -> int:
        return self.config.num_cells

    @property
    def kpis(self) -> np.ndarray:
        return self._kpis

    def obs(self) -> np.ndarray:
        return observe_all(self.state, self.config, self._kpis)

    def reset(self) -> np.ndarray:
        self.state = reset_episode(self.state, self.config, self._reset_rng)
        self._kpis = kpi_array(self.state, self.config)
        return self.obs()

    def set_tilts(self, tilts_deg) -> np.ndarray:
        self.state = self.state.with_tilts(tilts_deg)
        self._kpis = kpi_array(self.state, self.config)
        return self.obs()

    def step(self, actions):
        self.state = apply_actions(self.state, self.config, actions)
        self._kpis = kpi_array(self.state, self.config)
        self.t += 1
        return self.obs(), rewards_from_kpis(self._kpis)

    def episode_start(self, t: int) -> bool:
        return t % self.episodes.t_episode == 0
