"""Single-lane road segment with IDM car-following and Poisson arrivals.

Vehicles enter at position 0 and drive towards ``length``; a vehicle whose
position exceeds the segment length has left base-station coverage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numpy as np


class OutOfSegmentError(ValueError):
    """Raised when a position lies outside ``[0, length]``."""


@dataclass(frozen=True)
class SegmentGeometry:
    length: float = 1000.0
    bs_offset: Optional[float] = None
    bs_height: float = 25.0
    num_zones: int = 20

    def __post_init__(self) -> None:
        if self.bs_offset is None:
            object.__setattr__(self, "bs_offset", self.length / 2.0)
        if not self.length > 0:
            raise ValueError("segment length must be positive")
        if not 0.0 <= self.bs_offset <= self.length:
            raise ValueError("base station offset must lie on the segment")
        if self.num_zones < 1:
            raise ValueError("need at least one zone")

    @property
    def zone_width(self) -> float:
        return self.length / self.num_zones

    def zone_center(self, zone: int) -> float:
        return (zone + 0.5) * self.zone_width


@dataclass(frozen=True)
class VehicleState:
    id: int
    position: float
    velocity: float
    entry_time: float = 0.0
    departed: bool = False


@dataclass(frozen=True)
class IdmParams:
    """Intelligent Driver Model parameters (SI units)."""

    desired_speed: float = 60.0 / 3.6
    max_accel: float = 1.0
    comfortable_decel: float = 1.5
    min_gap: float = 2.0
    time_headway: float = 1.5
    accel_exponent: float = 4.0

    def __post_init__(self) -> None:
        # desired_speed = 0 models a parked fleet
        if not self.desired_speed >= 0:
            raise ValueError("IDM desired_speed must be non-negative")
        for name in ("max_accel", "comfortable_decel", "min_gap", "time_headway", "accel_exponent"):
            if not getattr(self, name) > 0:
                raise ValueError(f"IDM parameter {name} must be positive")

    @classmethod
    def for_velocity_kmh(cls, kmh: float, **overrides) -> "IdmParams":
        return cls(desired_speed=kmh / 3.6, **overrides)


def idm_accel(v: float, gap: float, lead_v: float, params: IdmParams) -> float:
    """IDM acceleration for a follower at speed ``v`` with ``gap`` metres to its leader.

    ``gap=math.inf`` means a free road ahead.
    """
    if not (math.isfinite(v) and math.isfinite(lead_v)) or math.isnan(gap):
        raise ValueError("IDM inputs must be finite")
    p = params
    if p.desired_speed == 0:
        free = 0.0 if v == 0 else -math.inf
    else:
        free = 1.0 - (v / p.desired_speed) ** p.accel_exponent
    if math.isinf(gap):
        return p.max_accel * free
    if gap <= 0:
        raise ValueError("gap must be positive")
    dv = v - lead_v
    s_star = p.min_gap + v * p.time_headway + v * dv / (2.0 * math.sqrt(p.max_accel * p.comfortable_decel))
    return p.max_accel * (free - (s_star / gap) ** 2)


def idm_accel_array(v: np.ndarray, gap: np.ndarray, lead_v: np.ndarray, params: IdmParams) -> np.ndarray:
    """Vectorised :func:`idm_accel`; ``gap`` entries may be ``inf``."""
    p = params
    if p.desired_speed == 0:
        free = np.where(v == 0, 0.0, -np.inf)
    else:
        free = 1.0 - (v / p.desired_speed) ** p.accel_exponent
    s_star = p.min_gap + v * p.time_headway + v * (v - lead_v) / (2.0 * math.sqrt(p.max_accel * p.comfortable_decel))
    with np.errstate(divide="ignore", invalid="ignore"):
        interaction = np.where(np.isinf(gap), 0.0, (s_star / np.maximum(gap, 1e-9)) ** 2)
    return p.max_accel * (free - interaction)


def _step_arrays(x: np.ndarray, v: np.ndarray, params: IdmParams, dt: float) -> tuple[np.ndarray, np.ndarray]:
    # x sorted descending: index 0 is the leader
    gap = np.empty_like(x)
    lead_v = np.empty_like(v)
    if x.size:
        gap[0] = np.inf
        lead_v[0] = v[0]
        gap[1:] = x[:-1] - x[1:]
        lead_v[1:] = v[:-1]
    acc = idm_accel_array(v, gap, lead_v, params)
    v_new = np.maximum(v + acc * dt, 0.0)
    return x + v_new * dt, v_new


def advance_traffic(vehicles: list[VehicleState], params: IdmParams, dt: float,
                    geom: Optional[SegmentGeometry] = None) -> list[VehicleState]:
    """Advance a leader-first platoon by one semi-implicit Euler step.

    Vehicles that pass the end of the segment come back with ``departed=True``;
    a departed vehicle stays departed.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not vehicles:
        return []
    x = np.array([veh.position for veh in vehicles], dtype=float)
    v = np.array([veh.velocity for veh in vehicles], dtype=float)
    if np.any(np.diff(x) > 0):
        raise ValueError("vehicles must be ordered leader first")
    x_new, v_new = _step_arrays(x, v, params, dt)
    length = geom.length if geom is not None else math.inf
    return [
        replace(veh, position=float(xn), velocity=float(vn), departed=veh.departed or bool(xn > length))
        for veh, xn, vn in zip(vehicles, x_new, v_new)
    ]


@dataclass
class ArrivalProcess:
    """Poisson vehicle source at the start of the segment.

    Arrivals that cannot be placed because the rearmost vehicle is closer than
    ``min_gap`` wait in a queue and enter on a later step.
    """

    rate: float
    rng: np.random.Generator
    initial_count: int = 0
    desired_speed: float = 60.0 / 3.6
    min_gap: float = 2.0
    pending: int = 0
    next_id: int = 0

    def __post_init__(self) -> None:
        if self.rate < 0:
            raise ValueError("arrival rate must be non-negative")

    def new_vehicle(self, position: float, time: float) -> VehicleState:
        vel = float(self.rng.uniform(0.9, 1.0)) * self.desired_speed
        veh = VehicleState(id=self.next_id, position=position, velocity=vel, entry_time=time)
        self.next_id += 1
        return veh


def spawn_arrivals(process: ArrivalProcess, dt: float, rearmost_position: Optional[float] = None,
                   time: float = 0.0) -> list[VehicleState]:
    """Draw Poisson(rate * dt) arrivals and place those that fit at position 0.

    With ``rearmost_position=None`` no gap rule is applied (an empty road with
    no placement constraint); otherwise vehicles enter one at a time while the
    gap to the vehicle ahead is at least ``min_gap``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if process.rate > 0:
        process.pending += int(process.rng.poisson(process.rate * dt))
    out: list[VehicleState] = []
    if rearmost_position is None:
        while process.pending:
            out.append(process.new_vehicle(0.0, time))
            process.pending -= 1
        return out
    rear = rearmost_position
    while process.pending and rear >= process.min_gap:
        out.append(process.new_vehicle(0.0, time))
        process.pending -= 1
        rear = 0.0
    return out


def zone_of(position: float, geom: SegmentGeometry) -> int:
    if not 0.0 <= position <= geom.length:
        raise OutOfSegmentError(f"position {position} outside [0, {geom.length}]")
    return min(int(position // geom.zone_width), geom.num_zones - 1)


def dropout_indicator(position: float, geom: SegmentGeometry) -> int:
    """1 when the vehicle is still covered by the base station, else 0."""
    return int(0.0 <= position <= geom.length)


@dataclass
class _Snapshot:
    step: int
    ids: np.ndarray
    x: np.ndarray
    v: np.ndarray


@dataclass
class Traffic:
    """Fixed-grid traffic simulation with exact-time position queries.

    The road is always integrated on the ``dt`` grid, so the vehicle trace is
    independent of when (or how often) it is queried. Positions between grid
    points are linearly interpolated.
    """

    geom: SegmentGeometry
    idm: IdmParams
    arrivals: ArrivalProcess
    dt: float = 0.1
    log_rows: Optional[list] = None
    step: int = 0
    ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    x: np.ndarray = field(default_factory=lambda: np.empty(0))
    v: np.ndarray = field(default_factory=lambda: np.empty(0))
    entry_time: dict = field(default_factory=dict)
    departure_step: dict = field(default_factory=dict)
    _prev: Optional[_Snapshot] = None
    _departed_x: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        self._populate(self.arrivals.initial_count)
        self._prev = self._snapshot()
        self._log()

    def _populate(self, count: int) -> None:
        if count <= 0:
            return
        rng = self.arrivals.rng
        spacing = self.geom.length / count
        # one vehicle per equal slot, jittered inside the slot, leader first
        pos = (np.arange(count)[::-1] + rng.uniform(0.1, 0.9, size=count)[::-1]) * spacing
        vehicles = [self.arrivals.new_vehicle(float(p), 0.0) for p in pos]
        self.ids = np.array([veh.id for veh in vehicles], dtype=np.int64)
        self.x = np.array([veh.position for veh in vehicles])
        self.v = np.array([veh.velocity for veh in vehicles])
        for veh in vehicles:
            self.entry_time[veh.id] = 0.0

    @property
    def time(self) -> float:
        return self.step * self.dt

    def _snapshot(self) -> _Snapshot:
        return _Snapshot(self.step, self.ids.copy(), self.x.copy(), self.v.copy())

    def _log(self) -> None:
        if self.log_rows is None:
            return
        t = self.time
        for vid, xi, vi in zip(self.ids, self.x, self.v):
            self.log_rows.append((self.step, t, int(vid), float(xi), float(vi), zone_of(float(xi), self.geom)))

    def _advance_one(self) -> None:
        self._prev = self._snapshot()
        x_new, v_new = _step_arrays(self.x, self.v, self.idm, self.dt)
        self.step += 1
        gone = x_new > self.geom.length
        for vid in self.ids[gone]:
            self.departure_step[int(vid)] = self.step
        self._departed_x = dict(zip(self.ids[gone].tolist(), x_new[gone].tolist()))
        keep = ~gone
        self.ids, self.x, self.v = self.ids[keep], x_new[keep], v_new[keep]
        rear = float(self.x[-1]) if self.x.size else math.inf
        new = spawn_arrivals(self.arrivals, self.dt, rear, time=self.time)
        if new:
            self.ids = np.concatenate([self.ids, [veh.id for veh in new]]).astype(np.int64)
            self.x = np.concatenate([self.x, [veh.position for veh in new]])
            self.v = np.concatenate([self.v, [veh.velocity for veh in new]])
            for veh in new:
                self.entry_time[veh.id] = self.time
        self._log()

    def advance_to(self, t: float) -> None:
        """Integrate until the grid time is at or beyond ``t``."""
        target = math.ceil(t / self.dt - 1e-9)
        while self.step < target:
            self._advance_one()

    def vehicles(self) -> list[VehicleState]:
        """Vehicles on the segment at the current grid time, leader first."""
        return [VehicleState(int(i), float(xi), float(vi), self.entry_time[int(i)])
                for i, xi, vi in zip(self.ids, self.x, self.v)]

    def states_at(self, t: float) -> dict[int, VehicleState]:
        """In-segment vehicles at time ``t`` (interpolated between grid points)."""
        self.advance_to(t)
        if self.step == 0 or math.isclose(t, self.time, abs_tol=1e-12):
            return {veh.id: veh for veh in self.vehicles()}
        frac = (t - self._prev.step * self.dt) / self.dt
        if not -1e-9 <= frac <= 1 + 1e-9:
            raise ValueError("queries must be non-decreasing in time")
        prev_x = dict(zip(self._prev.ids.tolist(), self._prev.x.tolist()))
        prev_v = dict(zip(self._prev.ids.tolist(), self._prev.v.tolist()))
        out = {}
        for vid, xi, vi in zip(self.ids.tolist(), self.x.tolist(), self.v.tolist()):
            if vid not in prev_x:
                continue
            pos = prev_x[vid] + frac * (xi - prev_x[vid])
            vel = prev_v[vid] + frac * (vi - prev_v[vid])
            out[vid] = VehicleState(vid, pos, vel, self.entry_time[vid])
        # vehicles that crossed the boundary during the last step
        for vid, x_out in self._departed_x.items():
            if vid in prev_x and self.departure_step.get(vid) == self.step:
                pos = prev_x[vid] + frac * (x_out - prev_x[vid])
                if pos <= self.geom.length:
                    out[vid] = VehicleState(vid, pos, prev_v[vid], self.entry_time[vid])
        return out

    def position_at(self, vid: int, t: float) -> float:
        """Position of vehicle ``vid`` at time ``t``; ``inf`` once it has left."""
        states = self.states_at(t)
        if vid in states:
            return states[vid].position
        if vid in self.departure_step:
            return math.inf
        raise KeyError(f"vehicle {vid} has not entered the segment by t={t}")


def sorted_leader_first(vehicles: Iterable[VehicleState]) -> list[VehicleState]:
    return sorted(vehicles, key=lambda veh: -veh.position)
