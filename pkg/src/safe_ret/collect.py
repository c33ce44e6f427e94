"""Offline dataset collection with a baseline policy, plus JSONL persistence."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mdp import NUM_ACTIONS, RetEnv
from .policies import Policy, sample_actions

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class Transition:
    s: tuple
    a: int
    r: float
    s_next: tuple
    pi_b: tuple  # baseline probabilities at s
    pi_b_next: tuple  # baseline probabilities at s_next, needed by the SPIBB target
    cell: int
    t: int
    episode: int

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "Transition":
        return cls(
            s=tuple(float(x) for x in d["s"]),
            a=int(d["a"]),
            r=float(d["r"]),
            s_next=tuple(float(x) for x in d["s_next"]),
            pi_b=tuple(float(x) for x in d["pi_b"]),
            pi_b_next=tuple(float(x) for x in d["pi_b_next"]),
            cell=int(d["cell"]),
            t=int(d["t"]),
            episode=int(d["episode"]),
        )


@dataclass
class Dataset:
    rows: list[Transition]
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)

    def __eq__(self, other) -> bool:
        return isinstance(other, Dataset) and self.rows == other.rows and self.meta == other.meta

    @property
    def empty(self) -> bool:
        return not self.rows

    def arrays(self) -> dict[str, np.ndarray]:
        """Column view used by training."""
        if not self.rows:
            return {
                "s": np.empty((0, 4)), "a": np.empty(0, dtype=int), "r": np.empty(0),
                "s_next": np.empty((0, 4)), "pi_b": np.empty((0, NUM_ACTIONS)),
                "pi_b_next": np.empty((0, NUM_ACTIONS)),
            }
        return {
            "s": np.array([row.s for row in self.rows]),
            "a": np.array([row.a for row in self.rows], dtype=int),
            "r": np.array([row.r for row in self.rows]),
            "s_next": np.array([row.s_next for row in self.rows]),
            "pi_b": np.array([row.pi_b for row in self.rows]),
            "pi_b_next": np.array([row.pi_b_next for row in self.rows]),
        }


def collect(env: RetEnv, policy: Policy, steps: int, seed: int, max_rows: int | None = None, **meta) -> Dataset:
    """Roll the baseline out for ``steps`` network steps, one row per (t, cell).

    Tilts are reset uniformly at random at the start of every episode.
    ``max_rows`` truncates the (t, cell)-ordered rows, for row budgets that
    are not a multiple of the cell count.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    rng = np.random.default_rng(seed)
    policy = policy.bind(env)
    rows: list[Transition] = []
    obs = env.obs()
    p = None
    for t in range(steps):
        if env.episode_start(t):
            obs = env.reset()
            p = None
        if p is None:
            p = policy.probs(obs)
        actions = sample_actions(p, rng)
        nxt, rewards = env.step(actions)
        p_next = policy.probs(nxt)
        episode = t // env.episodes.t_episode
        for c in range(env.num_cells):
            rows.append(
                Transition(
                    s=tuple(map(float, obs[c])),
                    a=int(actions[c]),
                    r=float(rewards[c]),
                    s_next=tuple(map(float, nxt[c])),
                    pi_b=tuple(map(float, p[c])),
                    pi_b_next=tuple(map(float, p_next[c])),
                    cell=c,
                    t=t,
                    episode=episode,
                )
            )
        obs, p = nxt, p_next
    if max_rows is not None:
        rows = rows[:max_rows]
    info = {
        "baseline": getattr(policy, "name", "unknown"),
        "seed": seed,
        "N": len(rows),
        "T": steps,
        "C": env.num_cells,
        "config_hash": env.config.digest(),
        "network_seed": env.network_seed,
    }
    info.update(meta)
    return Dataset(rows, info)


def collect_rows(env: RetEnv, policy: Policy, n_rows: int, seed: int, **meta) -> Dataset:
    steps = max(1, math.ceil(n_rows / env.num_cells))
    return collect(env, policy, steps, seed, max_rows=n_rows, **meta)


def subsample(dataset: Dataset, n: int, seed: int) -> Dataset:
    """Uniform draw of ``n`` rows without replacement; original row order kept."""
    if n > len(dataset):
        raise ValueError(f"cannot draw {n} rows from a dataset of {len(dataset)}")
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(len(dataset), size=n, replace=False))
    meta = dict(dataset.meta, N=n, parent_N=len(dataset), subsample_seed=seed)
    if n == 0:
        log.warning("subsample: empty dataset requested")
        meta["empty"] = True
    return Dataset([dataset.rows[i] for i in keep], meta)


class DatasetFormatError(ValueError):
    pass


def save(dataset: Dataset, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"format": "safe-ret-dataset", "version": FORMAT_VERSION, "meta": dataset.meta}
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    lines += [row.to_json() for row in dataset.rows]
    tmp = path.with_name(f"{path.name}.{os.getpid()}.tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(path)


def load(path: str | Path) -> Dataset:
    path = Path(path)
    rows = []
    meta = None
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                if meta is None:
                    if d.get("format") != "safe-ret-dataset":
                        raise KeyError("format")
                    meta = d["meta"]
                else:
                    rows.append(Transition.from_dict(d))
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetFormatError(f"{path}:{lineno}: malformed line ({exc})") from exc
    if meta is None:
        raise DatasetFormatError(f"{path}:1: missing header")
    return Dataset(rows, meta)
