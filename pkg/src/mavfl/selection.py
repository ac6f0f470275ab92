"""Vehicle selection: round utility, discounted UCB and the heuristic baselines."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from mavfl.mobility import SegmentGeometry, VehicleState
from mavfl.radio import RadioParams, bs_distance


class Policy(str, enum.Enum):
    DUCB = "DUCB"
    CBS = "CBS"
    RBS = "RBS"
    RANDOM = "Random"

    @classmethod
    def parse(cls, name: str) -> "Policy":
        for p in cls:
            if p.value.lower() == name.strip().lower():
                return p
        raise ValueError(f"unknown policy {name!r}; expected one of {[p.value for p in cls]}")


@dataclass(frozen=True)
class UtilityParams:
    alpha: float = 0.6
    t_min: float = 0.0
    t_max: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not self.t_max > self.t_min:
            raise ValueError("t_max must exceed t_min")


def utility(p_r: float, round_delay: float, params: UtilityParams) -> float:
    """alpha * p - (1 - alpha) * min-max normalised delay (delay clamped to the range)."""
    d = min(max(round_delay, params.t_min), params.t_max)
    norm = (d - params.t_min) / (params.t_max - params.t_min)
    return params.alpha * p_r - (1.0 - params.alpha) * norm


@dataclass
class DelayNormalizer:
    """Running min/max of observed round durations used to normalise delay."""

    alpha: float = 0.6
    warmup_rounds: int = 3
    t_min: float = math.inf
    t_max: float = -math.inf
    seen: int = 0

    def observe(self, duration: float) -> None:
        if math.isfinite(duration):
            self.t_min = min(self.t_min, duration)
            self.t_max = max(self.t_max, duration)
            self.seen += 1

    @property
    def warmed_up(self) -> bool:
        return self.seen >= self.warmup_rounds

    def utility(self, p_r: float, duration: float) -> float:
        if not self.t_max > self.t_min:
            # a single observed duration carries no delay information yet
            return self.alpha * p_r
        return utility(p_r, duration, UtilityParams(self.alpha, self.t_min, self.t_max))


@dataclass
class DucbState:
    """Discounted pull counts, reward sums and discounted total pulls."""

    lam: float = 0.9
    counts: dict[int, float] = field(default_factory=dict)
    sums: dict[int, float] = field(default_factory=dict)
    total: float = 0.0
    round: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.lam <= 1.0:
            raise ValueError("discount must lie in (0, 1]")

    def count(self, k: int) -> float:
        return self.counts.get(k, 0.0)

    def mean(self, k: int) -> float:
        c = self.counts.get(k, 0.0)
        return self.sums[k] / c if c > 0 else math.nan


def ducb_update(state: DucbState, chosen: Sequence[int], round_utility: float) -> DucbState:
    """Discount every statistic once, then credit the shared round utility to ``chosen``."""
    if not math.isfinite(round_utility):
        raise ValueError("round utility must be finite")
    lam = state.lam
    if lam != 1.0:
        for k in state.counts:
            state.counts[k] *= lam
            state.sums[k] *= lam
    for k in set(chosen):
        state.counts[k] = state.counts.get(k, 0.0) + 1.0
        state.sums[k] = state.sums.get(k, 0.0) + round_utility
    state.total = lam * state.total + len(set(chosen))
    state.round += 1
    return state


def ucb_index(state: DucbState, k: int) -> float:
    """Discounted mean plus exploration bonus; ``inf`` for a never-selected vehicle."""
    c = state.counts.get(k, 0.0)
    if c <= 0.0:
        return math.inf
    # a long run of empty rounds can decay the total below one
    bonus = math.sqrt(2.0 * math.log(max(state.total, 1.0)) / c)
    return state.sums[k] / c + bonus


def remaining_time(x: float, v: float, geom: SegmentGeometry) -> float:
    if v <= 0:
        return math.inf
    return max(geom.length - x, 0.0) / v


@dataclass
class SelectionDecision:
    chosen: list[int]
    a_vector: dict[int, int]
    allocated_bw: float
    scores: dict[int, float] = field(default_factory=dict)


def _top(candidates: Sequence[VehicleState], key, n: int) -> list[VehicleState]:
    return sorted(candidates, key=lambda veh: (key(veh), veh.id))[:n]


def select(policy: Policy, candidates: Sequence[VehicleState], state: DucbState, k0: int,
           geom: SegmentGeometry, radio: RadioParams, rng: np.random.Generator,
           first_round: Optional[bool] = None) -> SelectionDecision:
    """Choose up to ``k0`` vehicles under ``policy`` with ties broken by ascending id.

    The selection size is ``min(k0, len(candidates), floor(B / B_min))`` and each
    chosen vehicle gets an equal share of the total bandwidth.
    """
    if k0 < 1:
        raise ValueError("k0 must be at least 1")
    policy = Policy(policy)
    if not candidates:
        return SelectionDecision([], {}, 0.0)
    n = min(k0, len(candidates), radio.max_selected)
    first_round = state.round == 0 if first_round is None else first_round
    scores: dict[int, float] = {}
    pool = sorted(candidates, key=lambda veh: veh.id)
    if policy is Policy.RANDOM or (policy is Policy.DUCB and first_round):
        picked_idx = rng.choice(len(pool), size=n, replace=False)
        chosen = sorted(pool[i].id for i in picked_idx)
        if policy is Policy.DUCB:
            scores = {k: ucb_index(state, k) for k in chosen}
    elif policy is Policy.DUCB:
        scores_all = {veh.id: ucb_index(state, veh.id) for veh in pool}
        top = _top(pool, lambda veh: -scores_all[veh.id], n)
        chosen = [veh.id for veh in top]
        scores = {k: scores_all[k] for k in chosen}
    elif policy is Policy.CBS:
        chosen = [veh.id for veh in _top(pool, lambda veh: bs_distance(veh.position, geom), n)]
    elif policy is Policy.RBS:
        chosen = [veh.id for veh in _top(pool, lambda veh: -remaining_time(veh.position, veh.velocity, geom), n)]
    else:  # pragma: no cover
        raise ValueError(policy)
    a = {veh.id: int(veh.id in chosen) for veh in pool}
    return SelectionDecision(chosen, a, radio.total_bandwidth / len(chosen), scores)
