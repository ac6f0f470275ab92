"""CSV and JSON writers for runs, sweeps and theory reports."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

from mavfl.simulation import RunSummary


def _fmt(x) -> str:
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return repr(x)
    return str(x)


def _ids(ids: Iterable[int]) -> str:
    return " ".join(str(k) for k in ids)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(x) for x in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def _write_json(path: Path, data) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def write_metrics(summary: RunSummary, path: Path) -> Path:
    rows = ((r.round, r.ratio, r.loss, r.accuracy, r.cumulative_delay, _ids(r.selected), _ids(r.survivors))
            for r in summary.records)
    return _write_csv(path, ["round", "p_r", "global_loss", "global_accuracy", "cumulative_delay_s",
                             "selected_ids", "survivor_ids"], rows)


def write_delays(summary: RunSummary, path: Path) -> Path:
    def rows():
        for r in summary.records:
            if r.delays is None:
                continue
            for k in sorted(r.delays.per_vehicle):
                tc, tp = r.delays.per_vehicle[k]
                yield (r.round, k, r.delays.bandwidth[k], r.delays.rate[k], tc, tp, r.duration)
    return _write_csv(path, ["round", "vehicle_id", "bw_hz", "rate_bps", "t_comm_s", "t_comp_s",
                             "round_duration_s"], rows())


def write_selection(summary: RunSummary, path: Path) -> Path:
    def rows():
        for r in summary.records:
            scores = " ".join(_fmt(float(r.scores[k])) for k in r.selected) if summary.policy == "DUCB" else ""
            yield (r.round, summary.policy, len(r.candidates), _ids(r.selected), scores, r.utility)
    return _write_csv(path, ["round", "policy", "candidate_count", "chosen_ids", "ucb_index",
                             "round_utility"], rows())


def write_trajectory(rows: Sequence[tuple], path: Path) -> Path:
    return _write_csv(path, ["step", "time_s", "vehicle_id", "position_m", "velocity_mps", "zone"], rows)


def write_summary(summary: RunSummary, path: Path) -> Path:
    return _write_json(path, summary.to_json())


def write_theory(report: dict, path: Path) -> Path:
    return _write_json(path, report)


def emit_plot_data(summaries: Sequence[RunSummary], path: Path) -> Path:
    """Long-format accuracy/loss vs cumulative delay, one row per round per run."""
    if not summaries:
        raise ValueError("need at least one summary")

    def rows():
        for s in summaries:
            for r in s.records:
                yield (s.policy, s.seed, s.velocity_kmh, r.round, r.cumulative_delay, r.accuracy, r.loss)
    return _write_csv(path, ["policy", "seed", "velocity_kmh", "round", "cumulative_delay_s", "accuracy",
                             "loss"], rows())


def write_summary_dict(data: dict, path: Path) -> Path:
    return _write_json(path, data)
