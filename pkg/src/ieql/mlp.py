"""Black-box reference models: a tanh multilayer perceptron and the mean predictor.

They only serve as RMSE baselines next to the extracted equations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, rmse


@dataclass(frozen=True)
class MLPConfig:
    hidden: tuple = (50, 50, 50, 50, 50)
    epochs: int = 5000
    batch_size: int = 100
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0 or not self.hidden:
            raise ValueError("invalid MLP configuration")


def mlp_parameter_count(input_dim: int, output_dim: int, hidden=MLPConfig.hidden) -> int:
    sizes = [input_dim, *hidden, output_dim]
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


class MLP:
    """Fully connected tanh network with a linear output layer."""

    def __init__(self, input_dim: int, output_dim: int, hidden=MLPConfig.hidden, seed: int = 0):
        rng = np.random.default_rng(seed)
        sizes = [input_dim, *hidden, output_dim]
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, (fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> MLP:
        other = object.__new__(MLP)
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def _forward(self, X):
        acts = [X]
        h = X
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < last:
                h = np.tanh(h)
            acts.append(h)
        return acts

    def predict(self, X) -> np.ndarray:
        return self._forward(np.asarray(X, dtype=float))[-1]

    def gradients(self, X, Y) -> tuple[float, list[np.ndarray]]:
        """Mean squared error (summed over outputs) and its gradient per parameter array."""
        acts = self._forward(X)
        diff = acts[-1] - Y
        loss = float(np.mean(np.sum(diff * diff, axis=1)))
        delta = 2.0 * diff / len(X)
        grads = []
        for i in range(len(self.weights) - 1, -1, -1):
            grads.append(delta.sum(axis=0))
            grads.append(acts[i].T @ delta)
            if i:
                delta = (delta @ self.weights[i].T) * (1.0 - acts[i] ** 2)
        return loss, grads[::-1]


@dataclass
class BaselineResult:
    model: MLP
    best_epoch: int
    val_rmse: float
    test_rmse: float | None
    ext_rmse: float | None


def train_mlp_baseline(dataset: Dataset, config: MLPConfig = MLPConfig()) -> BaselineResult:
    """Adam-trained MLP; the checkpoint with the lowest validation RMSE is returned."""
    X, Y = dataset.part("train")
    Xv, Yv = dataset.part("validation")
    if len(X) == 0 or len(Xv) == 0:
        raise ValueError("the MLP baseline needs train and validation rows")
    rng = np.random.default_rng(config.seed)
    model = MLP(X.shape[1], Y.shape[1], config.hidden, seed=int(rng.integers(2**32)))
    m = [np.zeros_like(p) for p in model.params]
    v = [np.zeros_like(p) for p in model.params]
    b1, b2 = config.adam_beta1, config.adam_beta2
    best, best_val, best_epoch = model.copy(), rmse(model.predict(Xv), Yv), 0
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(X))
        for start in range(0, len(X), config.batch_size):
            rows = order[start:start + config.batch_size]
            _, grads = model.gradients(X[rows], Y[rows])
            step += 1
            for p, g, mi, vi in zip(model.params, grads, m, v):
                mi *= b1
                mi += (1 - b1) * g
                vi *= b2
                vi += (1 - b2) * g * g
                p -= config.lr * (mi / (1 - b1 ** step)) / (np.sqrt(vi / (1 - b2 ** step)) + config.adam_eps)
        val = rmse(model.predict(Xv), Yv)
        if val < best_val:
            best, best_val, best_epoch = model.copy(), val, epoch + 1

    def score(name):
        Xs, Ys = dataset.part(name)
        return rmse(best.predict(Xs), Ys) if len(Xs) else None

    return BaselineResult(best, best_epoch, best_val, score("test"), score("extrapolation"))


def mean_predictor_rmse(dataset: Dataset, split: str = "test") -> float:
    """RMSE of predicting the training mean everywhere."""
    _, Y = dataset.part("train")
    Xs, Ys = dataset.part(split)
    return rmse(np.broadcast_to(Y.mean(axis=0), Ys.shape), Ys)
