import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mavfl.mobility import (ArrivalProcess, IdmParams, OutOfSegmentError, SegmentGeometry, Traffic,
                            VehicleState, advance_traffic, dropout_indicator, idm_accel, idm_accel_array,
                            spawn_arrivals, zone_of)

P60 = IdmParams.for_velocity_kmh(60)
GEOM = SegmentGeometry()


def test_free_flow_equilibrium_is_zero():
    assert idm_accel(P60.desired_speed, math.inf, P60.desired_speed, P60) == pytest.approx(0.0, abs=1e-15)


def test_standstill_on_free_road_gets_max_accel():
    assert idm_accel(0.0, math.inf, 0.0, P60) == P60.max_accel


def test_interaction_term_hand_value():
    # evaluated separately at 30 significant digits
    assert idm_accel(15.0, 30.0, 10.0, P60) == pytest.approx(-3.03172496383855176, rel=1e-12)


def test_array_form_matches_scalar():
    rng = np.random.default_rng(3)
    v = rng.uniform(0, 20, 50)
    gap = np.where(rng.random(50) < 0.2, np.inf, rng.uniform(1, 100, 50))
    lead = rng.uniform(0, 20, 50)
    arr = idm_accel_array(v, gap, lead, P60)
    for i in range(50):
        assert arr[i] == pytest.approx(idm_accel(v[i], gap[i], lead[i], P60), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("gap", [0.0, -1.0])
def test_non_positive_gap_rejected(gap):
    with pytest.raises(ValueError):
        idm_accel(10.0, gap, 10.0, P60)


def test_nan_inputs_rejected():
    with pytest.raises(ValueError):
        idm_accel(math.nan, 10.0, 1.0, P60)
    with pytest.raises(ValueError):
        idm_accel(1.0, math.nan, 1.0, P60)


def test_semi_implicit_step_single_vehicle():
    veh = VehicleState(0, 100.0, 10.0)
    (out,) = advance_traffic([veh], P60, 0.1)
    a = idm_accel(10.0, math.inf, 10.0, P60)
    v_new = 10.0 + 0.1 * a
    assert out.velocity == pytest.approx(v_new, rel=1e-14)
    assert out.position == pytest.approx(100.0 + 0.1 * v_new, rel=1e-14)


def test_vehicle_past_segment_end_is_departed():
    (out,) = advance_traffic([VehicleState(0, 999.5, 16.0)], P60, 0.1, GEOM)
    assert out.departed and out.position > GEOM.length


def test_follower_order_enforced():
    with pytest.raises(ValueError):
        advance_traffic([VehicleState(0, 10.0, 5.0), VehicleState(1, 50.0, 5.0)], P60, 0.1)


def test_parked_fleet_stays_put():
    parked = IdmParams.for_velocity_kmh(0)
    out = advance_traffic([VehicleState(0, 300.0, 0.0), VehicleState(1, 100.0, 0.0)], parked, 0.1)
    assert [(v.position, v.velocity) for v in out] == [(300.0, 0.0), (100.0, 0.0)]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), kmh=st.sampled_from([60.0, 80.0]), rate=st.floats(0.05, 1.0))
def test_no_overtaking_and_non_negative_speed(seed, kmh, rate):
    idm = IdmParams.for_velocity_kmh(kmh)
    arr = ArrivalProcess(rate, np.random.default_rng(seed), initial_count=15, desired_speed=idm.desired_speed)
    tr = Traffic(GEOM, idm, arr, 0.1)
    order_prev = None
    for _ in range(400):
        tr._advance_one()
        assert np.all(tr.v >= 0)
        assert np.all(np.diff(tr.x) < 0)  # leader first, strictly ordered
        ids = tr.ids.tolist()
        if order_prev is not None:
            common = [i for i in order_prev if i in ids]
            assert common == [i for i in ids if i in order_prev]
        order_prev = ids


def test_zero_rate_spawns_nothing():
    arr = ArrivalProcess(0.0, np.random.default_rng(0))
    assert spawn_arrivals(arr, 0.1) == []


def test_blocked_entry_defers_arrivals():
    arr = ArrivalProcess(0.0, np.random.default_rng(0), pending=2, min_gap=2.0)
    assert spawn_arrivals(arr, 0.1, rearmost_position=1.0) == []
    assert arr.pending == 2
    out = spawn_arrivals(arr, 0.1, rearmost_position=5.0)
    # only one fits: the new vehicle itself sits at 0
    assert len(out) == 1 and arr.pending == 1


def test_poisson_arrival_mean():
    arr = ArrivalProcess(0.5, np.random.default_rng(7))
    n = sum(len(spawn_arrivals(arr, 0.1)) for _ in range(20_000))
    # 1000 expected arrivals, standard deviation about 32
    assert abs(n - 1000) < 130


@pytest.mark.parametrize("x,z", [(0.0, 0), (49.999, 0), (50.0, 1), (525.0, 10), (1000.0, 19)])
def test_zone_boundaries(x, z):
    assert zone_of(x, GEOM) == z


@pytest.mark.parametrize("x", [-0.1, 1000.1, math.inf])
def test_zone_out_of_segment(x):
    with pytest.raises(OutOfSegmentError):
        zone_of(x, GEOM)


@given(st.floats(0.0, 1000.0, allow_nan=False))
def test_zones_partition_segment(x):
    z = zone_of(x, GEOM)
    assert 0 <= z < GEOM.num_zones
    lo, hi = z * GEOM.zone_width, (z + 1) * GEOM.zone_width
    assert lo <= x < hi or (x == GEOM.length and z == GEOM.num_zones - 1)


def test_dropout_indicator():
    assert dropout_indicator(0.0, GEOM) == 1
    assert dropout_indicator(1000.0, GEOM) == 1
    assert dropout_indicator(1000.0001, GEOM) == 0
    assert dropout_indicator(math.inf, GEOM) == 0


def _traffic(seed=5):
    arr = ArrivalProcess(0.3, np.random.default_rng([seed, 1]), initial_count=10, desired_speed=P60.desired_speed)
    return Traffic(GEOM, P60, arr, 0.1)


def test_trace_independent_of_query_pattern():
    a, b = _traffic(), _traffic()
    for t in (0.37, 1.0, 2.25, 7.7):
        a.states_at(t)
    sa = a.states_at(12.34)
    sb = b.states_at(12.34)
    assert sa == sb


def test_interpolation_between_grid_points():
    tr = _traffic()
    s0 = tr.states_at(1.0)
    s1 = tr.states_at(1.1)
    tr2 = _traffic()
    mid = tr2.states_at(1.05)
    for k in mid:
        if k in s0 and k in s1:
            assert mid[k].position == pytest.approx(0.5 * (s0[k].position + s1[k].position), rel=1e-12)


def test_backward_query_rejected():
    tr = _traffic()
    tr.states_at(5.0)
    with pytest.raises(ValueError):
        tr.states_at(1.0)


def test_departed_vehicle_reports_infinite_position():
    tr = _traffic()
    leader = max(tr.vehicles(), key=lambda v: v.position).id
    assert math.isinf(tr.position_at(leader, 200.0))


def test_unknown_vehicle_raises():
    with pytest.raises(KeyError):
        _traffic().position_at(10_000, 1.0)


def test_trajectory_log_columns():
    rows = []
    arr = ArrivalProcess(0.0, np.random.default_rng(0), initial_count=3, desired_speed=P60.desired_speed)
    tr = Traffic(GEOM, P60, arr, 0.1, log_rows=rows)
    tr.advance_to(0.2)
    assert len(rows) == 9
    step, t, vid, x, v, z = rows[-1]
    assert step == 2 and t == pytest.approx(0.2) and z == zone_of(x, GEOM)
