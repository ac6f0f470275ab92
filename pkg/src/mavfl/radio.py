"""Uplink rate, upload/compute time and synchronous round duration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

from mavfl.mobility import SegmentGeometry, zone_of

LOG_DISTANCE_DB = "log_distance_db"
POWER_LAW = "power_law"

BITS_PER_PARAM = 32


class BandwidthError(ValueError):
    """The equal bandwidth split would fall below the per-vehicle minimum."""


@dataclass(frozen=True)
class RadioParams:
    total_bandwidth: float = 3e6
    min_bandwidth: float = 1e5
    tx_power_dbm: float = 23.0
    noise_power_dbm: float = -114.0
    antenna_gain_dbi: float = 6.0
    pathloss_model: str = LOG_DISTANCE_DB
    pathloss_exponent: float = 3.76

    def __post_init__(self) -> None:
        if not self.total_bandwidth > 0 or not self.min_bandwidth > 0:
            raise ValueError("bandwidths must be positive")
        if self.pathloss_model not in (LOG_DISTANCE_DB, POWER_LAW):
            raise ValueError(f"unknown pathloss model {self.pathloss_model!r}")

    @property
    def max_selected(self) -> int:
        return int(math.floor(self.total_bandwidth / self.min_bandwidth + 1e-12))


@dataclass(frozen=True)
class ComputeParams:
    cycles_per_bit: float = 10.0
    gpu_freq: float = 1.3e9
    normalizer: float = 1.0
    bits_per_sample: float = 256.0

    def __post_init__(self) -> None:
        for name in ("cycles_per_bit", "gpu_freq", "normalizer", "bits_per_sample"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class DelayBreakdown:
    """Per-vehicle (uplink_s, compute_s) plus the synchronous round duration."""

    per_vehicle: dict[int, tuple[float, float]] = field(default_factory=dict)
    bandwidth: dict[int, float] = field(default_factory=dict)
    rate: dict[int, float] = field(default_factory=dict)
    round_duration: float = 0.0


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def bs_distance(position: float, geom: SegmentGeometry) -> float:
    """Straight-line distance to the BS antenna, quantised to the zone centre."""
    z = zone_of(position, geom)
    horizontal = abs(geom.zone_center(z) - geom.bs_offset)
    return math.hypot(horizontal, geom.bs_height)


def received_power_watts(distance: float, radio: RadioParams, channel_gain: float = 1.0) -> float:
    if radio.pathloss_model == LOG_DISTANCE_DB:
        loss_db = 128.1 + 37.6 * math.log10(distance / 1000.0)
        return dbm_to_watts(radio.tx_power_dbm + radio.antenna_gain_dbi - loss_db) * channel_gain
    return dbm_to_watts(radio.tx_power_dbm) * channel_gain * distance ** (-radio.pathloss_exponent)


def uplink_rate(distance: float, allocated_bw: float, radio: RadioParams, channel_gain: float = 1.0) -> float:
    """Shannon rate in bit/s over ``allocated_bw`` Hz at ``distance`` metres."""
    if not distance > 0:
        raise ValueError("distance must be positive")
    if allocated_bw < radio.min_bandwidth * (1 - 1e-12):
        raise BandwidthError(f"allocated bandwidth {allocated_bw} Hz below minimum {radio.min_bandwidth} Hz")
    if not channel_gain > 0:
        raise ValueError("channel gain must be positive")
    snr = received_power_watts(distance, radio, channel_gain) / dbm_to_watts(radio.noise_power_dbm)
    if not snr > 0:
        raise ValueError("SNR must be positive")
    return allocated_bw * math.log2(1.0 + snr)


def upload_time(model_size_bits: float, rate: float) -> float:
    """Seconds to push ``model_size_bits``; a dead link never finishes."""
    if rate <= 0:
        return math.inf
    return model_size_bits / rate


def compute_time(dataset_samples: int, cp: ComputeParams) -> float:
    bits = dataset_samples * cp.bits_per_sample
    return bits * cp.cycles_per_bit / (cp.normalizer * cp.gpu_freq)


def model_size_bits(dim: int) -> int:
    return dim * BITS_PER_PARAM


def split_bandwidth(n_selected: int, radio: RadioParams) -> float:
    if n_selected < 1:
        raise ValueError("no vehicle selected")
    share = radio.total_bandwidth / n_selected
    if share < radio.min_bandwidth * (1 - 1e-12):
        raise BandwidthError(
            f"{n_selected} vehicles leave {share:.1f} Hz each, below B_min={radio.min_bandwidth}"
        )
    return share


def round_duration(
    upload_positions: Mapping[int, float],
    compute_times: Mapping[int, float],
    geom: SegmentGeometry,
    radio: RadioParams,
    model_bits: float,
    channel_gains: Optional[Mapping[int, float]] = None,
) -> DelayBreakdown:
    """Equal OFDMA split across the selected vehicles and the slowest finisher's time.

    ``upload_positions`` holds each selected vehicle's position when it starts
    uploading. Positions past the segment end are clamped to the boundary: the
    vehicle keeps transmitting from the edge of coverage until its link drops.
    """
    if not upload_positions:
        raise ValueError("round needs at least one selected vehicle")
    bw = split_bandwidth(len(upload_positions), radio)
    out = DelayBreakdown()
    for vid in sorted(upload_positions):
        pos = min(max(upload_positions[vid], 0.0), geom.length)
        gain = 1.0 if channel_gains is None else channel_gains[vid]
        rate = uplink_rate(bs_distance(pos, geom), bw, radio, gain)
        t_comm = upload_time(model_bits, rate)
        t_comp = compute_times[vid]
        out.per_vehicle[vid] = (t_comm, t_comp)
        out.bandwidth[vid] = bw
        out.rate[vid] = rate
    out.round_duration = max(tc + tp for tc, tp in out.per_vehicle.values())
    return out
