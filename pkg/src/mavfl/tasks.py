"""Desk-scale learning tasks with analytic gradients.

Every task owns a pool of per-vehicle datasets of equal size drawn IID from
one distribution. Vehicle ``k`` trains on pool entry ``k % len(pool)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


@dataclass
class LocalDataset:
    features: np.ndarray
    labels: np.ndarray
    owner_id: int = -1

    def __post_init__(self) -> None:
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise ValueError("features must be a non-empty 2-D array")
        if self.labels.shape[0] != self.features.shape[0]:
            raise ValueError("features and labels disagree on sample count")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")

    def __len__(self) -> int:
        return self.features.shape[0]


class Task:
    """Loss/gradient oracle shared by all vehicles."""

    kind: str = ""
    classification: bool = False

    def __init__(self, datasets: Sequence[LocalDataset], dim: int,
                 test_set: Optional[LocalDataset] = None):
        self.datasets = list(datasets)
        self.dim = dim
        self.test_set = test_set

    def loss(self, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
        raise NotImplementedError

    def grad(self, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def accuracy(self, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
        return float("nan")

    def init_params(self) -> np.ndarray:
        return np.zeros(self.dim)

    def dataset_for(self, vehicle_id: int) -> LocalDataset:
        return self.datasets[vehicle_id % len(self.datasets)]

    def local_loss(self, w: np.ndarray, k: int) -> float:
        d = self.datasets[k]
        return self.loss(w, d.features, d.labels)

    def local_grad(self, w: np.ndarray, k: int) -> np.ndarray:
        d = self.datasets[k]
        return self.grad(w, d.features, d.labels)

    def global_grad(self, w: np.ndarray) -> np.ndarray:
        return np.mean([self.local_grad(w, k) for k in range(len(self.datasets))], axis=0)

    def global_loss(self, w: np.ndarray) -> float:
        return float(np.mean([self.local_loss(w, k) for k in range(len(self.datasets))]))

    def test_accuracy(self, w: np.ndarray) -> float:
        if self.test_set is None:
            return float("nan")
        return self.accuracy(w, self.test_set.features, self.test_set.labels)


class QuadraticTask(Task):
    """Least squares: f_k(w) = ||A_k w - b_k||^2 / (2 n_k)."""

    kind = "quadratic"

    def loss(self, w, X, y):
        r = X @ w - y
        return float(0.5 * (r @ r) / X.shape[0])

    def grad(self, w, X, y):
        return X.T @ (X @ w - y) / X.shape[0]

    def hessian(self) -> np.ndarray:
        return np.mean([d.features.T @ d.features / len(d) for d in self.datasets], axis=0)

    def optimum(self) -> np.ndarray:
        rhs = np.mean([d.features.T @ d.labels / len(d) for d in self.datasets], axis=0)
        return np.linalg.lstsq(self.hessian(), rhs, rcond=None)[0]

    def smoothness(self) -> float:
        return float(np.linalg.eigvalsh(self.hessian())[-1])


class LogisticTask(Task):
    """Binary logistic regression; the last weight is the bias."""

    kind = "logistic"
    classification = True

    @staticmethod
    def _design(X):
        return np.hstack([X, np.ones((X.shape[0], 1))])

    def loss(self, w, X, y):
        z = self._design(X) @ w
        s = 2.0 * y - 1.0
        return float(np.mean(np.logaddexp(0.0, -s * z)))

    def grad(self, w, X, y):
        A = self._design(X)
        z = A @ w
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        return A.T @ (p - y) / X.shape[0]

    def accuracy(self, w, X, y):
        return float(np.mean((self._design(X) @ w > 0) == (y > 0.5)))


class MlpTask(Task):
    """One tanh hidden layer feeding a sigmoid output, cross-entropy loss."""

    kind = "tiny_mlp"
    classification = True

    def __init__(self, datasets, d_in: int, hidden: int, test_set=None, init_seed: int = 0):
        self.d_in = d_in
        self.hidden = hidden
        self.init_seed = init_seed
        super().__init__(datasets, hidden * d_in + hidden + hidden + 1, test_set)

    def unpack(self, w):
        h, d = self.hidden, self.d_in
        W1 = w[: h * d].reshape(h, d)
        b1 = w[h * d: h * d + h]
        w2 = w[h * d + h: h * d + 2 * h]
        b2 = w[-1]
        return W1, b1, w2, b2

    def _forward(self, w, X):
        W1, b1, w2, b2 = self.unpack(w)
        hid = np.tanh(X @ W1.T + b1)
        return hid, hid @ w2 + b2

    def loss(self, w, X, y):
        _, z = self._forward(w, X)
        s = 2.0 * y - 1.0
        return float(np.mean(np.logaddexp(0.0, -s * z)))

    def grad(self, w, X, y):
        W1, b1, w2, b2 = self.unpack(w)
        hid, z = self._forward(w, X)
        n = X.shape[0]
        dz = (0.5 * (1.0 + np.tanh(0.5 * z)) - y) / n
        g_w2 = hid.T @ dz
        g_b2 = dz.sum()
        dpre = np.outer(dz, w2) * (1.0 - hid ** 2)
        g_W1 = dpre.T @ X
        g_b1 = dpre.sum(axis=0)
        return np.concatenate([g_W1.ravel(), g_b1, g_w2, [g_b2]])

    def accuracy(self, w, X, y):
        _, z = self._forward(w, X)
        return float(np.mean((z > 0) == (y > 0.5)))

    def init_params(self):
        rng = np.random.default_rng(self.init_seed)
        w = np.zeros(self.dim)
        h, d = self.hidden, self.d_in
        w[: h * d] = rng.normal(0.0, 1.0 / np.sqrt(d), size=h * d)
        w[h * d + h: h * d + 2 * h] = rng.normal(0.0, 1.0 / np.sqrt(h), size=h)
        return w


def _mixture(rng: np.random.Generator, n: int, mean: np.ndarray, chol: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    y = rng.integers(0, 2, size=n).astype(float)
    noise = rng.standard_normal((n, mean.size)) @ chol.T
    X = (2.0 * y - 1.0)[:, None] * mean[None, :] + noise
    return X, y


def _mixture_params(rng: np.random.Generator, dim: int, separation: float, correlation: float):
    """Class mean and noise Cholesky factor.

    A strongly correlated nuisance pair makes the Bayes direction differ from
    the mean-difference direction, so accuracy keeps improving for many rounds
    instead of saturating after the first gradient step.
    """
    mean = np.zeros(dim)
    mean[0] = separation
    if dim > 2:
        mean[2:] = rng.normal(0.0, 0.15 * separation, size=dim - 2)
    cov = np.eye(dim)
    if dim >= 2:
        scale = 3.0
        cov[0, 0] = scale ** 2
        cov[1, 1] = scale ** 2
        cov[0, 1] = cov[1, 0] = correlation * scale ** 2
    return mean, np.linalg.cholesky(cov)


def make_task(kind: str, seed: int, num_vehicles: int, samples_per_vehicle: int = 600,
              dim: int = 10, *, hidden: int = 8, test_samples: int = 2000,
              separation: float = 1.0, correlation: float = 0.95,
              noise: float = 0.5, feature_scale: float = 1.0) -> Task:
    """Build one of the synthetic tasks with a seeded, IID dataset pool."""
    if num_vehicles < 1 or samples_per_vehicle < 1 or dim < 1:
        raise ValueError("task sizes must be positive")
    rng = np.random.default_rng([seed, 0x7A5C])
    if kind == "quadratic":
        w_true = rng.normal(size=dim)
        pool = []
        for k in range(num_vehicles):
            A = rng.normal(size=(samples_per_vehicle, dim))
            b = A @ w_true + noise * rng.normal(size=samples_per_vehicle)
            pool.append(LocalDataset(A, b, k))
        return QuadraticTask(pool, dim)
    if kind in ("logistic", "tiny_mlp"):
        mean, chol = _mixture_params(rng, dim, separation, correlation)
        pool = []
        for k in range(num_vehicles):
            X, y = _mixture(rng, samples_per_vehicle, mean, chol)
            pool.append(LocalDataset(feature_scale * X, y, k))
        Xt, yt = _mixture(rng, test_samples, mean, chol)
        test = LocalDataset(feature_scale * Xt, yt)
        if kind == "logistic":
            return LogisticTask(pool, dim + 1, test)
        task = MlpTask(pool, dim, hidden, test, init_seed=seed)
        if task.dim > 1000:
            raise ValueError("tiny_mlp is limited to 1000 parameters")
        return task
    raise ValueError(f"unknown task kind {kind!r}")


def quadratic_from_matrices(blocks: Sequence[tuple[np.ndarray, np.ndarray]]) -> QuadraticTask:
    pool = [LocalDataset(np.atleast_2d(np.asarray(A, float)), np.asarray(b, float), k)
            for k, (A, b) in enumerate(blocks)]
    return QuadraticTask(pool, pool[0].features.shape[1])
