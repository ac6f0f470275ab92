import math

import pytest

from mavfl.mobility import SegmentGeometry
from mavfl.radio import (POWER_LAW, BandwidthError, ComputeParams, RadioParams, bs_distance, compute_time,
                         dbm_to_watts, model_size_bits, round_duration, split_bandwidth, upload_time,
                         uplink_rate)

GEOM = SegmentGeometry()
RADIO = RadioParams()


def test_default_link_budget_values():
    assert (RADIO.total_bandwidth, RADIO.noise_power_dbm, RADIO.antenna_gain_dbi) == (3e6, -114.0, 6.0)
    assert GEOM.length == 1000.0 and GEOM.bs_height == 25.0 and GEOM.num_zones == 20
    assert ComputeParams().gpu_freq == 1.3e9


def test_dbm_conversion():
    assert dbm_to_watts(30.0) == pytest.approx(1.0, rel=1e-15)
    assert dbm_to_watts(0.0) == pytest.approx(1e-3, rel=1e-15)


def test_rate_at_one_km():
    # SNR = 23 + 6 - 128.1 + 114 = 14.9 dB at exactly 1 km
    assert uplink_rate(1000.0, 6e5, RADIO) == pytest.approx(2997370.874201798, rel=1e-12)


def test_rate_from_zone_zero():
    d = bs_distance(0.0, GEOM)
    assert d == pytest.approx(475.6574397610112, rel=1e-14)
    assert uplink_rate(d, 6e5, RADIO) == pytest.approx(5389959.413225197, rel=1e-12)


def test_distance_is_zone_quantised():
    assert bs_distance(500.0, GEOM) == bs_distance(549.0, GEOM) == pytest.approx(25.0 * math.sqrt(2))


def test_power_law_model():
    radio = RadioParams(pathloss_model=POWER_LAW, pathloss_exponent=3.0)
    snr = dbm_to_watts(23.0) * 100.0 ** -3 / dbm_to_watts(-114.0)
    assert uplink_rate(100.0, 1e5, radio) == pytest.approx(1e5 * math.log2(1 + snr), rel=1e-12)


def test_fading_gain_scales_snr():
    base = uplink_rate(300.0, 1e5, RADIO)
    faded = uplink_rate(300.0, 1e5, RADIO, channel_gain=0.5)
    assert faded < base


def test_bandwidth_floor_enforced():
    with pytest.raises(BandwidthError):
        uplink_rate(100.0, 5e4, RADIO)
    assert split_bandwidth(30, RADIO) == pytest.approx(1e5)
    with pytest.raises(BandwidthError):
        split_bandwidth(31, RADIO)
    assert RADIO.max_selected == 30


def test_upload_time():
    assert upload_time(1e6, 2e6) == 0.5
    assert upload_time(1e6, 0.0) == math.inf


def test_compute_time():
    assert compute_time(600, ComputeParams()) == pytest.approx(600 * 256 * 10 / 1.3e9, rel=1e-15)
    assert compute_time(600, ComputeParams(normalizer=0.5)) == pytest.approx(2 * 600 * 256 * 10 / 1.3e9)


def test_model_size_bits():
    assert model_size_bits(11) == 352


def test_round_duration_is_slowest_vehicle():
    bits = 1e6
    d = round_duration({0: 500.0, 1: 10.0}, {0: 0.2, 1: 0.1}, GEOM, RADIO, bits)
    assert d.bandwidth == {0: 1.5e6, 1: 1.5e6}
    per = {k: bits / uplink_rate(bs_distance(x, GEOM), 1.5e6, RADIO) for k, x in {0: 500.0, 1: 10.0}.items()}
    assert d.per_vehicle[0][0] == pytest.approx(per[0], rel=1e-12)
    assert d.round_duration == pytest.approx(max(per[0] + 0.2, per[1] + 0.1), rel=1e-12)


def test_departed_vehicle_uploads_from_segment_edge():
    d = round_duration({0: math.inf}, {0: 0.0}, GEOM, RADIO, 1e6)
    edge = round_duration({0: 1000.0}, {0: 0.0}, GEOM, RADIO, 1e6)
    assert d.round_duration == edge.round_duration


def test_empty_round_rejected():
    with pytest.raises(ValueError):
        round_duration({}, {}, GEOM, RADIO, 1e6)
