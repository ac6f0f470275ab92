"""Experiment driver: single runs, paired-seed sweeps and theory reports."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from mavfl import outputs
from mavfl.config import ExperimentConfig
from mavfl.simulation import RunSummary, Simulation, policy_config
from mavfl.theory import (build_trace, drift_bound_check, estimate_constants, participation_identity_check,
                          rate_bound_check, trace_constants)

ALL_POLICIES = ("DUCB", "CBS", "RBS", "Random")


def run_and_write(cfg: ExperimentConfig, out_dir: Optional[Path] = None) -> RunSummary:
    """Run one experiment and write its per-run files into ``out_dir``."""
    out = Path(cfg.output_dir if out_dir is None else out_dir)
    sim = Simulation(cfg)
    summary = sim.run()
    outputs.write_metrics(summary, out / "metrics.csv")
    outputs.write_delays(summary, out / "delays.csv")
    outputs.write_selection(summary, out / "selection.csv")
    outputs.write_summary(summary, out / "summary.json")
    outputs.emit_plot_data([summary], out / "curves.csv")
    if sim.trajectory_rows is not None:
        outputs.write_trajectory(sim.trajectory_rows, out / "trajectory.csv")
    if cfg.theory.enabled:
        outputs.write_theory(theory_report(cfg), out / "theory.json")
    return summary


def _run_cell(cfg: ExperimentConfig) -> RunSummary:
    return Simulation(cfg).run()


def paired_delays(summaries: dict[tuple[str, int], RunSummary], policies: Sequence[str],
                  seeds: Sequence[int], fraction: float = 0.9) -> dict[str, list[float]]:
    """Delay to ``fraction`` of the best accuracy any policy reached on the same seed."""
    out: dict[str, list[float]] = {p: [] for p in policies}
    for s in seeds:
        best = max(summaries[(p, s)].best_accuracy for p in policies)
        for p in policies:
            out[p].append(summaries[(p, s)].delay_to_target(fraction * best))
    return out


def sweep(cfg: ExperimentConfig, seeds: Sequence[int], policies: Sequence[str] = ALL_POLICIES,
          jobs: int = 1) -> dict[tuple[str, int], RunSummary]:
    """Every (policy, seed) cell with the environment shared across policies for each seed."""
    cells = [(p, s) for s in seeds for p in policies]
    cfgs = [policy_config(cfg.replace(seed=s), p) for p, s in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, cfgs))
    else:
        results = [_run_cell(c) for c in cfgs]
    return dict(zip(cells, results))


def sweep_report(summaries: dict[tuple[str, int], RunSummary], policies: Sequence[str],
                 seeds: Sequence[int]) -> dict:
    delays = paired_delays(summaries, policies, seeds)
    report = {"seeds": list(seeds), "policies": {}}
    for p in policies:
        runs = [summaries[(p, s)] for s in seeds]
        d = np.array(delays[p])
        report["policies"][p] = {
            "median_delay_to_90pct_best_s": _finite(float(np.median(d))),
            "reached_target": int(np.isfinite(d).sum()),
            "delay_to_90pct_best_s": [_finite(float(x)) for x in d],
            "median_final_accuracy": _finite(float(np.median([r.final_accuracy for r in runs]))),
            "median_cumulative_delay_s": float(np.median([r.cumulative_delay for r in runs])),
        }
    return report


def _finite(x: float):
    return x if math.isfinite(x) else None


def write_sweep(cfg: ExperimentConfig, seeds: Sequence[int], policies: Sequence[str], jobs: int = 1,
                out_dir: Optional[Path] = None) -> dict:
    out = Path(cfg.output_dir if out_dir is None else out_dir)
    summaries = sweep(cfg, seeds, policies, jobs)
    for (p, s), summ in summaries.items():
        outputs.write_metrics(summ, out / "runs" / f"{p}_seed{s}" / "metrics.csv")
    ordered = [summaries[(p, s)] for s in seeds for p in policies]
    outputs.emit_plot_data(ordered, out / "curves.csv")
    report = sweep_report(summaries, policies, seeds)
    outputs.write_summary_dict(report, out / "summary.json")
    return report


def theory_report(cfg: ExperimentConfig, identity_trials: int = 100_000) -> dict:
    """Instrumented full-batch run checked against the local-drift and rate bounds."""
    cfg = cfg.replace(record_trace=True).with_section("train", full_batch=True)
    sim = Simulation(cfg)
    sim.run()
    eta, E = cfg.train.learning_rate, cfg.train.local_epochs
    trace = build_trace(sim.traces, E)
    probe = estimate_constants(sim.task, cfg.theory.probe_count, np.random.default_rng([cfg.seed, 0x7E0]),
                               batch_size=cfg.train.batch_size, full_batch=True)
    est = trace_constants(trace, sim.task, full_batch=True, fallback=probe)
    drift = drift_bound_check(trace, eta, E, est)
    rate = rate_bound_check(trace, est, eta, E, sim.task)
    k = cfg.selection.k0
    identity = [participation_identity_check(identity_trials, k, p, np.random.default_rng([cfg.seed, 0xA1, i]))
                .to_json() for i, p in enumerate((0.2, 0.6, 1.0))]
    return {
        "task": sim.task.kind,
        "seed": cfg.seed,
        "steps": len(trace),
        "learning_rate": eta,
        "local_epochs": E,
        "constants": est.to_json(),
        "probe_constants": probe.to_json(),
        "drift_bound": drift.to_json(),
        "rate_bound": rate.to_json(),
        "identity": identity,
    }
