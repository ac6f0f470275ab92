"""Local SGD, dropout-aware aggregation and round bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from mavfl.tasks import LocalDataset, Task

ModelParams = np.ndarray


class DivergedTrainingError(FloatingPointError):
    pass


class UndefinedRatioError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    local_epochs: int = 1
    batch_size: int = 32
    full_batch: bool = False

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if self.local_epochs < 1 or self.batch_size < 1:
            raise ValueError("local_epochs and batch_size must be >= 1")


@dataclass
class LocalResult:
    update: np.ndarray
    # local model before each epoch; populated when trajectories are requested
    iterates: list[np.ndarray] = field(default_factory=list)


@dataclass
class RoundOutcome:
    round: int
    selected: list[int]
    survivors: list[int]
    ratio: float
    new_global: np.ndarray
    aggregation_weights: dict[int, float]


def local_update(w: ModelParams, data: LocalDataset, cfg: TrainConfig, task: Task,
                 rng: Optional[np.random.Generator] = None, record: bool = False) -> LocalResult:
    """Run ``local_epochs`` epochs from ``w``; return the accumulated update g.

    The local model after training is exactly ``w - eta * g``. One epoch is a
    shuffled pass of mini-batches, each stepped with ``eta * |batch| / n`` so an
    epoch moves the model by ``eta`` times an unbiased full-gradient estimate.
    """
    X, y = data.features, data.labels
    n = len(data)
    if w.shape != (task.dim,):
        raise ValueError("model dimension does not match the task")
    eta = cfg.learning_rate
    w_k = w.astype(float, copy=True)
    total = np.zeros_like(w_k)
    iterates: list[np.ndarray] = []
    for _ in range(cfg.local_epochs):
        if record:
            iterates.append(w_k.copy())
        if cfg.full_batch or cfg.batch_size >= n:
            g_epoch = task.grad(w_k, X, y)
            w_k -= eta * g_epoch
        else:
            if rng is None:
                raise ValueError("mini-batch training needs an rng")
            order = rng.permutation(n)
            g_epoch = np.zeros_like(w_k)
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                g_b = task.grad(w_k, X[idx], y[idx]) * (idx.size / n)
                w_k -= eta * g_b
                g_epoch += g_b
        if not np.all(np.isfinite(g_epoch)):
            raise DivergedTrainingError("non-finite gradient during local training")
        total += g_epoch
    return LocalResult(total, iterates)


def aggregate(w_r: ModelParams, updates: Mapping[int, np.ndarray], indicators: Mapping[int, int],
              eta: float) -> ModelParams:
    """Subtract eta times the mean surviving update; no survivors keeps ``w_r``."""
    missing = set(updates) - set(indicators)
    if missing:
        raise KeyError(f"no dropout indicator for vehicles {sorted(missing)}")
    survivors = [k for k in sorted(updates) if indicators[k]]
    if not survivors:
        return w_r.copy()
    acc = np.zeros_like(w_r, dtype=float)
    for k in survivors:
        acc += updates[k]
    return w_r - eta * (acc / len(survivors))


def success_ratio(selected: Sequence[int], survivors: Sequence[int]) -> float:
    if not selected:
        raise UndefinedRatioError("success ratio undefined for an empty selection")
    extra = set(survivors) - set(selected)
    if extra:
        raise ValueError(f"survivors {sorted(extra)} were never selected")
    return len(set(survivors)) / len(set(selected))


def global_loss(w: ModelParams, datasets: Sequence[LocalDataset], weights: Sequence[float], task: Task) -> float:
    weights = np.asarray(weights, dtype=float)
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError(f"aggregation weights sum to {weights.sum()}, not 1")
    return float(sum(q * task.loss(w, d.features, d.labels) for q, d in zip(weights, datasets)))


def vehicle_rng(master_seed: int, vehicle_id: int, round_index: int) -> np.random.Generator:
    """Training stream keyed by (seed, vehicle, round): order of execution is irrelevant."""
    return np.random.default_rng([master_seed, 0xF1, vehicle_id, round_index])
