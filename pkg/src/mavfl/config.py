"""Experiment configuration: YAML file plus command-line overrides."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from mavfl.fl import TrainConfig
from mavfl.mobility import IdmParams, SegmentGeometry
from mavfl.radio import ComputeParams, RadioParams, model_size_bits
from mavfl.selection import Policy


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrafficConfig:
    velocity_kmh: float = 60.0
    # steady-state vehicles on the segment; sets the arrival rate unless arrival_rate is given
    occupancy: float = 10.0
    arrival_rate: Optional[float] = None
    initial_count: Optional[int] = None
    dt: float = 0.1
    max_accel: float = 1.0
    comfortable_decel: float = 1.5
    min_gap: float = 2.0
    time_headway: float = 1.5
    accel_exponent: float = 4.0

    def idm(self) -> IdmParams:
        return IdmParams(self.velocity_kmh / 3.6, self.max_accel, self.comfortable_decel,
                         self.min_gap, self.time_headway, self.accel_exponent)

    def rate(self, length: float) -> float:
        if self.arrival_rate is not None:
            return self.arrival_rate
        return self.occupancy * (self.velocity_kmh / 3.6) / length

    def initial(self) -> int:
        return int(round(self.occupancy)) if self.initial_count is None else self.initial_count


@dataclass(frozen=True)
class TaskConfig:
    kind: str = "logistic"
    dim: int = 10
    samples_per_vehicle: int = 600
    num_datasets: int = 20
    hidden: int = 8
    separation: float = 1.0
    correlation: float = 0.95
    noise: float = 0.5
    feature_scale: float = 1.0


@dataclass(frozen=True)
class SelectionConfig:
    policy: str = "DUCB"
    k0: int = 5
    alpha: float = 0.6
    lam: float = 0.9
    warmup_rounds: int = 3

    @property
    def policy_enum(self) -> Policy:
        return Policy.parse(self.policy)


@dataclass(frozen=True)
class TheoryConfig:
    enabled: bool = False
    probe_count: int = 200


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    rounds: int = 100
    deadline_s: float = math.inf
    round_deadline_s: float = math.inf
    idle_wait_s: float = 1.0
    channel_fading: bool = False
    # per-vehicle compute-speed factor drawn uniformly from [1 - spread, 1]
    compute_spread: float = 0.0
    # bits uploaded per round; defaults to 32 bits per model parameter
    model_bits: Optional[float] = None
    output_dir: str = "out"
    log_trajectory: bool = False
    record_trace: bool = False
    geometry: SegmentGeometry = field(default_factory=SegmentGeometry)
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    radio: RadioParams = field(default_factory=RadioParams)
    compute: ComputeParams = field(default_factory=ComputeParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    theory: TheoryConfig = field(default_factory=TheoryConfig)

    def __post_init__(self) -> None:
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if self.selection.k0 < 1:
            raise ConfigError("k0 must be >= 1")
        Policy.parse(self.selection.policy)
        if not 0.0 <= self.compute_spread < 1.0:
            raise ConfigError("compute_spread must lie in [0, 1)")

    def upload_bits(self, dim: int) -> float:
        return model_size_bits(dim) if self.model_bits is None else float(self.model_bits)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def with_section(self, section: str, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **changes)})

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


_SECTIONS = {
    "geometry": SegmentGeometry,
    "traffic": TrafficConfig,
    "radio": RadioParams,
    "compute": ComputeParams,
    "train": TrainConfig,
    "task": TaskConfig,
    "selection": SelectionConfig,
    "theory": TheoryConfig,
}


def _float(value: Any) -> Any:
    if isinstance(value, str) and value.strip().lower() in ("inf", "infinity", ".inf"):
        return math.inf
    return value


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section {where!r} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where!r}: {sorted(unknown)}")
    try:
        return cls(**{k: _float(v) for k, v in data.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where!r}: {exc}") from exc


def config_from_dict(data: dict[str, Any]) -> ExperimentConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    kwargs: dict[str, Any] = {}
    top = {f.name for f in dataclasses.fields(ExperimentConfig)} - set(_SECTIONS)
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value or {}, key)
        elif key in top:
            kwargs[key] = _float(value)
        else:
            raise ConfigError(f"unknown top-level key {key!r}")
    try:
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: malformed YAML: {exc}") from exc
    return config_from_dict(data)


def apply_overrides(cfg: ExperimentConfig, *, policy=None, seed=None, velocity_kmh=None, rounds=None,
                    k0=None, task=None, out=None) -> ExperimentConfig:
    try:
        if policy is not None:
            cfg = cfg.with_section("selection", policy=Policy.parse(policy).value)
        if k0 is not None:
            cfg = cfg.with_section("selection", k0=k0)
        if velocity_kmh is not None:
            cfg = cfg.with_section("traffic", velocity_kmh=velocity_kmh)
        if task is not None:
            cfg = cfg.with_section("task", kind=task)
        if seed is not None:
            cfg = cfg.replace(seed=seed)
        if rounds is not None:
            cfg = cfg.replace(rounds=rounds)
        if out is not None:
            cfg = cfg.replace(output_dir=str(out))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg
