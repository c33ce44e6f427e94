"""State-action value network: (s, one-hot a) -> 100 -> 50 -> 20 -> Q.

Weights live in one flat float64 vector; layer matrices are views into it,
so an SGD step is a single in-place vector update.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mdp import NUM_ACTIONS, OBS_DIM

INPUT_DIM = OBS_DIM + NUM_ACTIONS
HIDDEN = (100, 50, 20)
LAYER_SIZES = (INPUT_DIM, *HIDDEN, 1)


def _shapes():
    return [(n_in, n_out) for n_in, n_out in zip(LAYER_SIZES[:-1], LAYER_SIZES[1:])]


NUM_WEIGHTS = sum(n_in * n_out + n_out for n_in, n_out in _shapes())


@dataclass(frozen=True)
class TrainHyper:
    gamma: float = 0.9
    lr: float = 1e-3
    batch_size: int = 50
    epochs: int = 20

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("invalid training hyperparameters")


class QNet:
    def __init__(self, weights: np.ndarray, seed: int | None = None):
        w = np.array(weights, dtype=np.float64).ravel()
        if w.shape != (NUM_WEIGHTS,):
            raise ValueError(f"expected {NUM_WEIGHTS} weights, got {w.size}")
        self.w = w
        self.seed = seed
        self.layers = []
        offset = 0
        for n_in, n_out in _shapes():
            W = w[offset : offset + n_in * n_out].reshape(n_in, n_out)
            offset += n_in * n_out
            b = w[offset : offset + n_out]
            offset += n_out
            self.layers.append((W, b))

    @classmethod
    def init(cls, seed: int) -> "QNet":
        """Glorot-uniform weights, zero biases.

        The summed-batch squared loss at lr 1e-3 diverges from He-scaled
        starts; Glorot scaling keeps the first updates stable.
        """
        rng = np.random.default_rng(seed)
        parts = []
        for n_in, n_out in _shapes():
            limit = np.sqrt(6.0 / (n_in + n_out))
            parts.append(rng.uniform(-limit, limit, size=n_in * n_out))
            parts.append(np.zeros(n_out))
        return cls(np.concatenate(parts), seed=seed)

    @classmethod
    def zeros(cls) -> "QNet":
        return cls(np.zeros(NUM_WEIGHTS))

    def copy(self) -> "QNet":
        return QNet(self.w.copy(), seed=self.seed)

    # forward / backward ---------------------------------------------------

    def _forward(self, x: np.ndarray):
        acts = [x]
        pre = []
        h = x
        for i, (W, b) in enumerate(self.layers):
            z = h @ W + b
            pre.append(z)
            h = z if i == len(self.layers) - 1 else np.maximum(z, 0.0)
            acts.append(h)
        return acts, pre

    def predict(self, obs, actions) -> np.ndarray:
        return self._forward(encode(obs, actions))[0][-1][:, 0]

    def q_values(self, obs) -> np.ndarray:
        """Q for all three actions, shape (n, 3), canonical order Down/Keep/Up."""
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        n = len(obs)
        x = np.empty((n * NUM_ACTIONS, INPUT_DIM))
        x[:, :OBS_DIM] = np.repeat(obs, NUM_ACTIONS, axis=0)
        x[:, OBS_DIM:] = np.tile(np.eye(NUM_ACTIONS), (n, 1))
        return self._forward(x)[0][-1][:, 0].reshape(n, NUM_ACTIONS)

    def loss_and_grad(self, obs, actions, targets):
        """Summed squared error and its exact gradient w.r.t. the flat weights."""
        acts, pre = self._forward(encode(obs, actions))
        q = acts[-1][:, 0]
        resid = np.asarray(targets, dtype=float) - q
        loss = float(resid @ resid)
        grad = np.empty_like(self.w)
        delta = (-2.0 * resid)[:, None]
        offset_end = NUM_WEIGHTS
        for i in range(len(self.layers) - 1, -1, -1):
            W, b = self.layers[i]
            gW = acts[i].T @ delta
            gb = delta.sum(axis=0)
            nb = b.size
            grad[offset_end - nb : offset_end] = gb
            grad[offset_end - nb - W.size : offset_end - nb] = gW.ravel()
            offset_end -= nb + W.size
            if i:
                delta = (delta @ W.T) * (pre[i - 1] > 0)
        return loss, grad

    def sgd_step(self, obs, actions, targets, lr: float) -> float:
        """In-place ``w -= lr * grad``; returns the pre-update loss."""
        targets = np.asarray(targets, dtype=float)
        if targets.size == 0:
            raise ValueError("empty batch")
        if not np.all(np.isfinite(targets)):
            raise ValueError("non-finite targets")
        loss, grad = self.loss_and_grad(obs, actions, targets)
        self.w -= lr * grad
        return loss

    # persistence -----------------------------------------------------------

    def save(self, path: str | Path, **extra) -> None:
        header = {"layers": list(LAYER_SIZES), "num_weights": NUM_WEIGHTS, "seed": self.seed, **extra}
        blob = json.dumps(header, sort_keys=True).encode()
        data = struct.pack("<I", len(blob)) + blob + self.w.astype("<f8").tobytes()
        _atomic_write_bytes(Path(path), data)

    @classmethod
    def load(cls, path: str | Path) -> "QNet":
        raw = Path(path).read_bytes()
        (n,) = struct.unpack("<I", raw[:4])
        header = json.loads(raw[4 : 4 + n])
        if tuple(header["layers"]) != LAYER_SIZES or header["num_weights"] != NUM_WEIGHTS:
            raise ValueError(f"{path}: architecture mismatch {header['layers']}")
        w = np.frombuffer(raw[4 + n :], dtype="<f8")
        return cls(w.astype(np.float64), seed=header.get("seed"))

    @staticmethod
    def read_header(path: str | Path) -> dict:
        raw = Path(path).read_bytes()
        (n,) = struct.unpack("<I", raw[:4])
        return json.loads(raw[4 : 4 + n])


def encode(obs, actions) -> np.ndarray:
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    actions = np.atleast_1d(np.asarray(actions, dtype=int))
    x = np.zeros((len(obs), INPUT_DIM))
    x[:, :OBS_DIM] = obs
    x[np.arange(len(obs)), OBS_DIM + actions] = 1.0
    return x


def q_value(net: QNet, s, a) -> float:
    return float(net.predict(s, [int(a)])[0])


def q_values_all(net: QNet, s) -> np.ndarray:
    return net.q_values(s)[0]


def grad_check(
    net: QNet, obs, actions, targets, epsilon: float = 1e-5, n_coords: int = 100, seed: int = 0, grad=None
) -> float:
    """Max relative error between backprop and central differences on a coordinate subset.

    Coordinates whose +/- epsilon probe flips a ReLU unit are skipped (the
    loss is not differentiable across the kink) and replaced by the next
    coordinate of the random order.  ``grad`` overrides the analytic gradient
    under test (negative controls).
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    if grad is None:
        _, grad = net.loss_and_grad(obs, actions, targets)
    x = encode(obs, actions)
    y = np.asarray(targets, dtype=float)
    base_pattern = _relu_pattern(net, x)
    order = np.random.default_rng(seed).permutation(NUM_WEIGHTS)
    probe = net.copy()
    worst = 0.0
    checked = 0
    for k in order:
        if checked >= n_coords:
            break
        orig = probe.w[k]
        probe.w[k] = orig + epsilon
        q_up, pat_up = _probe(probe, x)
        probe.w[k] = orig - epsilon
        q_down, pat_down = _probe(probe, x)
        probe.w[k] = orig
        if not (np.array_equal(pat_up, base_pattern) and np.array_equal(pat_down, base_pattern)):
            continue
        checked += 1
        # L(w+e) - L(w-e) = sum (r+^2 - r-^2) = sum (q- - q+)(2y - q+ - q-), without cancelling two large losses
        numeric = float((q_down - q_up) @ (2.0 * y - q_up - q_down)) / (2.0 * epsilon)
        scale = max(abs(numeric), abs(grad[k]))
        if scale == 0.0:
            continue
        worst = max(worst, abs(numeric - grad[k]) / max(scale, 1e-8))
    return worst


def _probe(net: QNet, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    acts, pre = net._forward(x)
    return acts[-1][:, 0], np.concatenate([(z > 0).ravel() for z in pre[:-1]])


def _relu_pattern(net: QNet, x: np.ndarray) -> np.ndarray:
    return _probe(net, x)[1]


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f"{path.name}.{os.getpid()}.tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
