"""Empirical constants and convergence-bound checks on recorded runs.

Constants are maxima over probes or over the iterates a run actually visited,
so every check here is conditional on those estimates.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from mavfl.simulation import RoundTrace
from mavfl.tasks import QuadraticTask, Task


@dataclass
class ConstantEstimates:
    smoothness: float
    grad_bound_sq: float
    # bounded mini-batch variance; the same constant appears as delta^2 in the rate bound
    noise_var: float
    divergence_sq: float
    f_inf: float
    source: str = "probe"

    def to_json(self) -> dict:
        return asdict(self)


def _probe_point(rng, center, radius):
    return center + radius * rng.standard_normal(center.size)


def estimate_constants(task: Task, probe_count: int = 200, rng: Optional[np.random.Generator] = None, *,
                       batch_size: int = 32, full_batch: bool = False, radius: float = 1.0,
                       center: Optional[np.ndarray] = None) -> ConstantEstimates:
    """Max-over-probes estimates of L, G^2, sigma^2, eps_g^2 plus F_inf.

    Each probe consumes a fixed number of draws, so a larger ``probe_count``
    with the same generator state sees a superset of probes and the max-based
    estimates can only grow.
    """
    if probe_count < 100:
        raise ValueError("probe_count must be at least 100")
    rng = np.random.default_rng(0) if rng is None else rng
    center = task.init_params() if center is None else np.asarray(center, float)
    K = len(task.datasets)
    L = G2 = S2 = E2 = 0.0
    best_loss = math.inf
    for _ in range(probe_count):
        w1 = _probe_point(rng, center, radius)
        w2 = _probe_point(rng, center, radius)
        k = int(rng.integers(K))
        data = task.datasets[k]
        batch = rng.choice(len(data), size=min(batch_size, len(data)), replace=False)

        local = np.array([task.local_grad(w1, j) for j in range(K)])
        full = local.mean(axis=0)
        g2 = task.global_grad(w2)
        step = np.linalg.norm(w1 - w2)
        if step > 0:
            L = max(L, float(np.linalg.norm(full - g2) / step))
        G2 = max(G2, float(np.max(np.sum(local ** 2, axis=1))))
        E2 = max(E2, float(np.mean(np.sum((local - full) ** 2, axis=1))))
        if not full_batch:
            noise = task.grad(w1, data.features[batch], data.labels[batch]) - local[k]
            S2 = max(S2, float(noise @ noise))
        best_loss = min(best_loss, task.global_loss(w1))
    return ConstantEstimates(L, G2, S2, E2, _f_inf(task, best_loss, L), "probe")


def _f_inf(task: Task, best_probe_loss: float, smoothness: float) -> float:
    if isinstance(task, QuadraticTask):
        return task.global_loss(task.optimum())
    w = task.init_params()
    step = 1.0 / max(smoothness, 1e-12)
    for _ in range(500):
        w = w - step * task.global_grad(w)
    return min(best_probe_loss, task.global_loss(w))


@dataclass
class RunTrace:
    """Per local step: the virtual global model and the surviving local models."""

    virtual: list[np.ndarray] = field(default_factory=list)
    locals: list[dict[int, np.ndarray]] = field(default_factory=list)
    selected_locals: list[dict[int, np.ndarray]] = field(default_factory=list)
    ratio: list[float] = field(default_factory=list)
    round_of_step: list[int] = field(default_factory=list)
    datasets: dict[int, int] = field(default_factory=dict)
    local_epochs: int = 1

    def __len__(self) -> int:
        return len(self.virtual)

    @property
    def excluded_rounds(self) -> int:
        return len({r for r, p in zip(self.round_of_step, self.ratio) if p == 0})


def build_trace(rounds: Sequence[RoundTrace], local_epochs: int) -> RunTrace:
    """Expand recorded rounds into the per-step virtual trajectory.

    Within a round the virtual model is the average of the surviving local
    models; a round with no survivors leaves it at the round's global model.
    """
    tr = RunTrace(local_epochs=local_epochs)
    for r, rt in enumerate(rounds):
        tr.datasets.update(rt.datasets)
        for e in range(local_epochs):
            sel = {k: rt.iterates[k][e] for k in rt.selected}
            surv = {k: sel[k] for k in rt.survivors}
            if surv:
                # averaging deviations keeps the no-drift case exact in floating point
                w0 = rt.global_model
                w_bar = w0 + np.mean([surv[k] - w0 for k in sorted(surv)], axis=0)
            else:
                w_bar = rt.global_model.copy()
            tr.virtual.append(w_bar)
            tr.locals.append(surv)
            tr.selected_locals.append(sel)
            tr.ratio.append(rt.ratio)
            tr.round_of_step.append(r)
    return tr


def trace_constants(trace: RunTrace, task: Task, *, full_batch: bool = True,
                    fallback: Optional[ConstantEstimates] = None) -> ConstantEstimates:
    """Constants evaluated on the region the run visited.

    On a quadratic task L and F_inf are exact; G^2 and eps_g^2 are maxima over
    every visited local and virtual iterate; full-batch training has sigma = 0.
    """
    G2 = 0.0
    points = list(trace.virtual)
    for sel in trace.selected_locals:
        for k, w in sel.items():
            g = task.local_grad(w, trace.datasets[k])
            G2 = max(G2, float(g @ g))
            points.append(w)
    E2 = 0.0
    for w in points:
        local = np.array([task.local_grad(w, j) for j in range(len(task.datasets))])
        E2 = max(E2, float(np.mean(np.sum((local - local.mean(axis=0)) ** 2, axis=1))))
    if isinstance(task, QuadraticTask):
        L = task.smoothness()
        f_inf = task.global_loss(task.optimum())
        source = "closed-form"
    else:
        if fallback is None:
            fallback = estimate_constants(task, full_batch=full_batch)
        L, f_inf, source = fallback.smoothness, fallback.f_inf, "visited+probe"
    sigma2 = 0.0 if full_batch else (fallback.noise_var if fallback else 0.0)
    return ConstantEstimates(L, G2, sigma2, E2, f_inf, source)


@dataclass
class DriftBoundReport:
    margin: float
    lhs: list[float]
    rhs: list[float]
    holds: bool

    def to_json(self) -> dict:
        return {"worst_margin": self.margin, "holds": self.holds, "steps": len(self.lhs),
                "max_lhs": max(self.lhs, default=0.0)}


def drift_bound_check(trace: RunTrace, eta: float, local_epochs: int, est: ConstantEstimates) -> DriftBoundReport:
    """Local-model drift vs 4 K eta^2 (E-1)^2 G^2 at every step; K counts survivors."""
    lhs, rhs = [], []
    for w_bar, surv in zip(trace.virtual, trace.locals):
        drift = sum(float(np.sum((w_bar - w) ** 2)) for w in surv.values())
        bound = 4.0 * len(surv) * eta ** 2 * (local_epochs - 1) ** 2 * est.grad_bound_sq
        lhs.append(drift)
        rhs.append(bound)
    margins = [b - a for a, b in zip(lhs, rhs)]
    worst = min(margins, default=0.0)
    return DriftBoundReport(worst, lhs, rhs, worst >= 0.0)


@dataclass
class RateBoundReport:
    lhs: float
    rhs: float
    holds: bool
    excluded_rounds: int
    excluded_steps: int
    terms: dict[str, float]

    def to_json(self) -> dict:
        return asdict(self)


def rate_bound_check(trace: RunTrace, est: ConstantEstimates, eta: float, local_epochs: int,
                   task: Task) -> RateBoundReport:
    """Average squared gradient norm of the virtual model against the rate bound.

    Steps from rounds where no update arrived (ratio 0) have an undefined
    ``2 / (eta p)`` factor; they are left out of that averaged term and counted.
    """
    if not len(trace):
        raise ValueError("empty trace")
    grads = [task.global_grad(w) for w in trace.virtual]
    lhs = float(np.mean([g @ g for g in grads]))
    gap = task.global_loss(trace.virtual[0]) - est.f_inf
    kept = [p for p in trace.ratio if p > 0]
    init_term = float(np.mean([2.0 / (eta * p) * gap for p in kept])) if kept else 0.0
    terms = {
        "initial_gap": init_term,
        "heterogeneity": 2.0 * est.divergence_sq,
        "variance": eta * (est.noise_var + est.grad_bound_sq) * est.smoothness,
        "drift": 4.0 * eta ** 2 * (local_epochs - 1) ** 2 * est.grad_bound_sq * est.smoothness ** 2,
    }
    rhs = sum(terms.values())
    return RateBoundReport(lhs, rhs, lhs <= rhs, trace.excluded_rounds,
                          len(trace.ratio) - len(kept), terms)


@dataclass
class IdentityReport:
    """Monte-Carlo check of E[aggregate] = p * mean gradient.

    Errors are relative in Euclidean norm. ``max_rel_error`` uses the participation-weighted aggregate
    sum_k 1_k g_k / |S| with empty draws contributing a zero update.
    ``conditioned_bias`` is the same estimator after discarding empty draws,
    ``survivor_mean_rel_error`` the plain survivor average the server applies.
    """

    p: float
    num_vehicles: int
    num_trials: int
    max_rel_error: float
    conditioned_bias: float
    survivor_mean_rel_error: float
    empty_fraction: float

    def to_json(self) -> dict:
        return asdict(self)


def participation_identity_check(num_trials: int, num_vehicles: int, p: float,
                              rng: Optional[np.random.Generator] = None,
                              gradients: Optional[np.ndarray] = None, dim: int = 4) -> IdentityReport:
    """Draw independent Bernoulli(p) upload indicators and compare averaged aggregates to p * mean(g)."""
    if num_trials < 10_000:
        raise ValueError("num_trials must be at least 1e4")
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0, 1]")
    rng = np.random.default_rng(0) if rng is None else rng
    if gradients is None:
        gradients = rng.normal(1.0, 0.5, size=(num_vehicles, dim))
    G = np.asarray(gradients, dtype=float).reshape(num_vehicles, -1)
    target = p * G.sum(axis=0) / num_vehicles
    ind = (rng.random((num_trials, num_vehicles)) < p).astype(float)
    counts = ind.sum(axis=1)
    nonempty = counts > 0

    # averaging the indicators first keeps p = 1 free of summation round-off
    def weighted(rows):
        return (ind[rows].mean(axis=0)[:, None] * G).sum(axis=0) / num_vehicles

    def rel(est):
        return float(np.linalg.norm(est - target) / np.linalg.norm(target))

    share = np.zeros_like(ind)
    share[nonempty] = ind[nonempty] / counts[nonempty, None]
    survivor_mean = (share.mean(axis=0)[:, None] * G).sum(axis=0)
    return IdentityReport(
        p=p,
        num_vehicles=num_vehicles,
        num_trials=num_trials,
        max_rel_error=rel(weighted(slice(None))),
        conditioned_bias=rel(weighted(nonempty)),
        survivor_mean_rel_error=rel(survivor_mean),
        empty_fraction=float(1.0 - nonempty.mean()),
    )
