"""Round loop tying mobility, delay, local training, aggregation and selection together."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from mavfl.config import ExperimentConfig
from mavfl.fl import aggregate, local_update, success_ratio, vehicle_rng
from mavfl.mobility import ArrivalProcess, Traffic, dropout_indicator
from mavfl.radio import ComputeParams, DelayBreakdown, compute_time, round_duration
from mavfl.selection import DelayNormalizer, DucbState, Policy, ducb_update, select
from mavfl.tasks import Task, make_task


@dataclass
class RoundRecord:
    round: int
    start_time: float
    candidates: list[int]
    zero_count_candidates: list[int]
    selected: list[int]
    survivors: list[int]
    ratio: float
    duration: float
    cumulative_delay: float
    loss: float
    accuracy: float
    utility: float
    scores: dict[int, float] = field(default_factory=dict)
    delays: Optional[DelayBreakdown] = None

    @property
    def skipped(self) -> bool:
        return not self.selected


@dataclass
class RoundTrace:
    """Per-round data needed to rebuild the virtual global trajectory."""

    global_model: np.ndarray
    selected: list[int]
    survivors: list[int]
    ratio: float
    # vehicle id -> local model before each local step
    iterates: dict[int, list[np.ndarray]]
    datasets: dict[int, int]


@dataclass
class RunSummary:
    policy: str
    seed: int
    velocity_kmh: float
    records: list[RoundRecord]
    initial_loss: float
    initial_accuracy: float
    terminated_by_deadline: bool = False
    final_model: Optional[np.ndarray] = None

    @property
    def cumulative_delay(self) -> float:
        return self.records[-1].cumulative_delay if self.records else 0.0

    @property
    def final_accuracy(self) -> float:
        return self.records[-1].accuracy if self.records else self.initial_accuracy

    @property
    def best_accuracy(self) -> float:
        accs = [self.initial_accuracy] + [r.accuracy for r in self.records]
        return max(accs)

    def delay_to_target(self, target: float) -> float:
        """Cumulative delay when test accuracy first reaches ``target`` (inf if never)."""
        if self.initial_accuracy >= target:
            return 0.0
        for rec in self.records:
            if rec.accuracy >= target:
                return rec.cumulative_delay
        return math.inf

    def to_json(self) -> dict:
        return {
            "policy": self.policy,
            "seed": self.seed,
            "velocity_kmh": self.velocity_kmh,
            "rounds": len(self.records),
            "initial_loss": self.initial_loss,
            "initial_accuracy": _json_float(self.initial_accuracy),
            "final_loss": self.records[-1].loss if self.records else self.initial_loss,
            "final_accuracy": _json_float(self.final_accuracy),
            "best_accuracy": _json_float(self.best_accuracy),
            "cumulative_delay_s": self.cumulative_delay,
            "delay_to_90pct_best_accuracy_s": _json_float(self.delay_to_target(0.9 * self.best_accuracy)),
            "mean_success_ratio": _json_float(
                float(np.mean([r.ratio for r in self.records if not r.skipped])) if self.records else math.nan
            ),
            "skipped_rounds": sum(r.skipped for r in self.records),
            "terminated_by_deadline": self.terminated_by_deadline,
        }


def _json_float(x: float):
    return None if x is None or not math.isfinite(x) else x


class Simulation:
    """One seeded experiment: road, fleet, model and selection state."""

    def __init__(self, cfg: ExperimentConfig, task: Optional[Task] = None):
        self.cfg = cfg
        self.policy = cfg.selection.policy_enum
        geom = cfg.geometry
        idm = cfg.traffic.idm()
        # stream tags keep mobility and data identical across policies for one seed
        arrivals = ArrivalProcess(
            rate=cfg.traffic.rate(geom.length),
            rng=np.random.default_rng([cfg.seed, 0x40B]),
            initial_count=cfg.traffic.initial(),
            desired_speed=idm.desired_speed,
            min_gap=idm.min_gap,
        )
        self.trajectory_rows: Optional[list] = [] if cfg.log_trajectory else None
        self.traffic = Traffic(geom, idm, arrivals, cfg.traffic.dt, log_rows=self.trajectory_rows)
        t = cfg.task
        self.task = task if task is not None else make_task(
            t.kind, cfg.seed, t.num_datasets, t.samples_per_vehicle, t.dim,
            hidden=t.hidden, separation=t.separation, correlation=t.correlation, noise=t.noise,
            feature_scale=t.feature_scale,
        )
        self.model = self.task.init_params()
        self.model_bits = cfg.upload_bits(self.task.dim)
        self.clock = 0.0
        self.ducb = DucbState(lam=cfg.selection.lam)
        self.normalizer = DelayNormalizer(cfg.selection.alpha, cfg.selection.warmup_rounds)
        self.selection_rng = np.random.default_rng([cfg.seed, 0x5E1])
        self.records: list[RoundRecord] = []
        self.traces: list[RoundTrace] = []
        self.initial_loss = self.task.global_loss(self.model)
        self.initial_accuracy = self.task.test_accuracy(self.model)

    def _channel_gains(self, ids, r: int) -> Optional[dict[int, float]]:
        if not self.cfg.channel_fading:
            return None
        return {k: float(np.random.default_rng([self.cfg.seed, 0xFADE, k, r]).exponential(1.0)) for k in ids}

    def compute_params(self, k: int) -> ComputeParams:
        """Compute profile of vehicle ``k``; fixed for the vehicle's lifetime."""
        spread = self.cfg.compute_spread
        base = self.cfg.compute
        if spread == 0.0:
            return base
        factor = float(np.random.default_rng([self.cfg.seed, 0xC0, k]).uniform(1.0 - spread, 1.0))
        return dataclasses.replace(base, normalizer=base.normalizer * factor)

    def run_round(self) -> RoundRecord:
        cfg = self.cfg
        r = len(self.records)
        t0 = self.clock
        states = self.traffic.states_at(t0)
        candidates = [states[k] for k in sorted(states)]
        cum = self.records[-1].cumulative_delay if self.records else 0.0
        zero = [veh.id for veh in candidates if self.ducb.count(veh.id) == 0.0]
        if not candidates:
            self.clock = t0 + cfg.idle_wait_s
            rec = RoundRecord(r, t0, [], [], [], [], math.nan, cfg.idle_wait_s, cum + cfg.idle_wait_s,
                              self.task.global_loss(self.model), self.task.test_accuracy(self.model), math.nan)
            if cfg.record_trace:
                self.traces.append(RoundTrace(self.model.copy(), [], [], 0.0, {}, {}))
            self.records.append(rec)
            return rec

        decision = select(self.policy, candidates, self.ducb, cfg.selection.k0, cfg.geometry, cfg.radio,
                          self.selection_rng, first_round=(r == 0))
        chosen = decision.chosen
        t_comp = {k: compute_time(len(self.task.dataset_for(k)), self.compute_params(k)) for k in chosen}

        results = {}
        for k in chosen:
            results[k] = local_update(self.model, self.task.dataset_for(k), cfg.train, self.task,
                                      vehicle_rng(cfg.seed, k, r), record=cfg.record_trace)

        # positions after local computation, queried in time order
        upload_pos = {}
        for t_end, k in sorted((t0 + t_comp[k], k) for k in chosen):
            upload_pos[k] = self.traffic.position_at(k, t_end)
        indicators = {k: dropout_indicator(upload_pos[k], cfg.geometry) for k in chosen}
        delays = round_duration(upload_pos, t_comp, cfg.geometry, cfg.radio, self.model_bits,
                                self._channel_gains(chosen, r))
        for k, (tc, tp) in delays.per_vehicle.items():
            if tc + tp > cfg.round_deadline_s:
                indicators[k] = 0
        duration = min(delays.round_duration, cfg.round_deadline_s)

        if self.clock + duration > cfg.deadline_s:
            raise _DeadlineReached()

        survivors = [k for k in chosen if indicators[k]]
        new_model = aggregate(self.model, {k: res.update for k, res in results.items()},
                              indicators, cfg.train.learning_rate)
        ratio = success_ratio(chosen, survivors)
        self.normalizer.observe(duration)
        u = self.normalizer.utility(ratio, duration)
        ducb_update(self.ducb, chosen, u)

        if cfg.record_trace:
            self.traces.append(RoundTrace(
                self.model.copy(), list(chosen), survivors, ratio,
                {k: res.iterates for k, res in results.items()},
                {k: k % len(self.task.datasets) for k in chosen},
            ))
        self.model = new_model
        self.clock = t0 + duration
        rec = RoundRecord(
            round=r, start_time=t0, candidates=[veh.id for veh in candidates], zero_count_candidates=zero,
            selected=list(chosen), survivors=survivors, ratio=ratio, duration=duration,
            cumulative_delay=cum + duration, loss=self.task.global_loss(self.model),
            accuracy=self.task.test_accuracy(self.model), utility=u, scores=decision.scores, delays=delays,
        )
        self.records.append(rec)
        return rec

    def run(self) -> RunSummary:
        stopped = False
        for _ in range(self.cfg.rounds):
            try:
                self.run_round()
            except _DeadlineReached:
                stopped = True
                break
        return RunSummary(self.policy.value, self.cfg.seed, self.cfg.traffic.velocity_kmh, self.records,
                          self.initial_loss, self.initial_accuracy, stopped, self.model.copy())


class _DeadlineReached(Exception):
    pass


def run_experiment(cfg: ExperimentConfig, task: Optional[Task] = None) -> RunSummary:
    return Simulation(cfg, task).run()


def policy_config(cfg: ExperimentConfig, policy: Policy | str) -> ExperimentConfig:
    return cfg.with_section("selection", policy=Policy.parse(str(getattr(policy, "value", policy))).value)
