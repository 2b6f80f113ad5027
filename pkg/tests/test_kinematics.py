"""Speed-rule tests: frozen roots, boundary cases, and the worst-case
braking-trajectory safety property.

Frozen constants and the trajectory oracle come from
tests/oracles/braking_oracle.py (run it directly to regenerate); the
oracle never imports this package.
"""

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles.braking_oracle import continuous_min_gap, safe_speed_float
from trafficsim.kinematics import (VehicleParams, ballistic_advance,
                                   clamp_speed, hard_stop_bound,
                                   headway_speed, no_collision_speed,
                                   stop_speed_for_distance)

# exact roots from tests/oracles/braking_oracle.py
FOLLOW_10_10_20 = 13.2439504323   # (-9 + sqrt(3841)) / 4
STOP_5 = 4.82548584904            # (-9 + 3*sqrt(89)) / 4
STOP_30_USUAL = 11.0610722522     # (-5 + 5*sqrt(97)) / 4


def test_follow_speed_zero_state():
    assert no_collision_speed(0, 0, 4.5, 4.5, 0, 1.0) == 0.0


def test_follow_speed_budget_boundary():
    # c = 10*0.5 - 0 - 5 = 0: the follower must fully stop
    assert no_collision_speed(10, 0, 4.5, 4.5, 5, 1.0) == 0.0


def test_follow_speed_moving_leader():
    s = no_collision_speed(10, 10, 4.5, 4.5, 20, 1.0)
    assert s == pytest.approx(FOLLOW_10_10_20, abs=1e-9)


def test_follow_speed_deep_negative_gap_is_zero():
    assert no_collision_speed(5, 0, 4.5, 4.5, -50, 1.0) == 0.0


def test_follow_speed_argument_errors():
    for bad in ((10, 0, 0, 4.5, 5, 1), (10, 0, 4.5, -1, 5, 1),
                (10, 0, 4.5, 4.5, 5, 0), (-1, 0, 4.5, 4.5, 5, 1),
                (0, -1, 4.5, 4.5, 5, 1)):
        with pytest.raises(ValueError):
            no_collision_speed(*bad)


def test_headway_speed_values():
    assert headway_speed(30, 2, 2) == 14.0
    assert headway_speed(2.5, 1.5, 2.5) == 0.0
    assert headway_speed(1.0, 1.5, 2.5) == 0.0
    with pytest.raises(ValueError):
        headway_speed(30, 0, 2)


def test_stop_speed_values():
    assert stop_speed_for_distance(0, 4.5, 1.0) == 0.0
    assert stop_speed_for_distance(-3, 4.5, 1.0) == 0.0
    assert stop_speed_for_distance(5, 4.5, 1.0) == \
        pytest.approx(STOP_5, abs=1e-9)
    assert stop_speed_for_distance(30, 2.5, 1.0) == \
        pytest.approx(STOP_30_USUAL, abs=1e-9)
    with pytest.raises(ValueError):
        stop_speed_for_distance(5, 0, 1.0)


def test_clamp_speed_acceleration_limited():
    p = VehicleParams()
    assert clamp_speed([], 0.0, p, 100.0, 1.0) == 2.0


def test_clamp_speed_braking_floor():
    # candidate 3 demands harder braking than maxNegAcc allows
    p = VehicleParams()
    assert clamp_speed([3.0], 10.0, p, 100.0, 1.0) == 5.5


def test_clamp_speed_lane_limit():
    p = VehicleParams()
    assert clamp_speed([20.0], 11.0, p, 11.11, 1.0) == 11.11


def test_ballistic_advance_values():
    assert ballistic_advance(0.0, 10.0, 12.0, 1.0) == (11.0, 11.0)
    assert ballistic_advance(7.0, 8.0, 8.0, 0.5)[1] == 8.0 * 0.5
    assert ballistic_advance(0.0, 10.0, 0.0, 1.0)[1] == 5.0
    with pytest.raises(ValueError):
        ballistic_advance(0.0, -1.0, 5.0, 1.0)


def test_vehicle_params_validation():
    VehicleParams()  # defaults are legal
    with pytest.raises(ValueError):
        VehicleParams(length=0)
    with pytest.raises(ValueError):
        VehicleParams(minGap=-0.1)
    with pytest.raises(ValueError):
        VehicleParams(usualNegAcc=5.0, maxNegAcc=4.5)
    with pytest.raises(ValueError):
        VehicleParams(usualPosAcc=3.0, maxPosAcc=2.0)


# -- randomized properties ----------------------------------------------


@st.composite
def recoverable_states(draw):
    """State where the follower, braking as hard as one discrete step
    allows, can still end behind the leader's worst-case rest point.
    dF <= dL keeps paths ordered (not just stopping endpoints); both
    hypotheses are necessary, see tests/oracles/braking_oracle.py."""
    vF = draw(st.floats(0, 20))
    vL = draw(st.floats(0, 20))
    d1 = draw(st.floats(2, 6))
    d2 = draw(st.floats(2, 6))
    dF, dL = min(d1, d2), max(d1, d2)
    dt = draw(st.sampled_from([0.1, 0.5, 1.0]))
    need = max(vF * vF / (2 * dF), vF * dt / 2) - vL * vL / (2 * dL)
    gap = min(100.0, max(draw(st.floats(0, 100)), need))
    return vF, vL, dF, dL, gap, dt


@given(recoverable_states())
def test_safety_oracle(state):
    """Adopting the rule's speed for one step keeps the follower behind a
    leader that brakes maximally from now to rest, at every instant."""
    s = no_collision_speed(*state)
    assert s == pytest.approx(safe_speed_float(*state), abs=1e-9)
    assert continuous_min_gap(*state, s=s) >= -1e-6


@given(recoverable_states())
def test_safety_oracle_tightness(state):
    s = no_collision_speed(*state)
    if s > 0:
        assert continuous_min_gap(*state, s=s + 1e-3) < -1e-6


@given(st.floats(0, 20), st.floats(0, 20), st.floats(2, 6), st.floats(2, 6),
       st.floats(0, 100), st.sampled_from([0.1, 0.5, 1.0]),
       st.floats(0.01, 5))
def test_follow_speed_monotonicity(vF, vL, dF, dL, gap, dt, delta):
    base = no_collision_speed(vF, vL, dF, dL, gap, dt)
    assert no_collision_speed(vF, vL, dF, dL, gap + delta, dt) >= base - 1e-9
    assert no_collision_speed(vF, vL + delta, dF, dL, gap, dt) >= base - 1e-9
    assert no_collision_speed(vF + delta, vL, dF, dL, gap, dt) <= base + 1e-9


@given(st.lists(st.floats(0, 40), max_size=4), st.floats(0, 20),
       st.floats(0.1, 40), st.sampled_from([0.1, 0.5, 1.0]))
def test_clamp_speed_bounds(candidates, v, lane_limit, dt):
    p = VehicleParams()
    out = clamp_speed(candidates, v, p, lane_limit, dt)
    floor = max(0.0, v - p.maxNegAcc * dt)
    assert floor - 1e-12 <= out <= v + p.maxPosAcc * dt + 1e-12
    for c in list(candidates) + [lane_limit, p.maxSpeed]:
        if c >= floor:
            assert out <= c + 1e-12


@given(st.floats(0, 200), st.floats(0.5, 8), st.sampled_from([0.1, 0.5, 1.0]))
def test_stop_speed_fixed_point(distance, dec, dt):
    v = stop_speed_for_distance(distance, dec, dt)
    assert v * dt / 2 + v * v / (2 * dec) <= distance + 1e-9
    if distance > 1e-9:
        w = v + 1e-3
        assert w * dt / 2 + w * w / (2 * dec) > distance


@given(st.floats(0, 50), st.floats(0, 50), st.floats(0, 1000),
       st.floats(0.01, 2))
def test_ballistic_advance_exact_trapezoid(vOld, vNew, pos, dt):
    newPos, dist = ballistic_advance(pos, vOld, vNew, dt)
    assert dist == (vOld + vNew) * 0.5 * dt
    assert newPos == pos + dist


@given(st.floats(0, 20), st.floats(0, 120), st.floats(0.5, 8),
       st.sampled_from([0.1, 0.5, 1.0]))
def test_hard_stop_bound_closed_loop(v, distance, dec, dt):
    """From a recoverable state the bound's one-step displacement never
    crosses the wall, and iterating it (with the braking floor applied)
    parks the vehicle with at most the half-step dip dec*dt^2/8, never
    drowning the bound under the floor."""
    if v * dt / 2 > distance:
        return  # committed half-step already crosses; out of contract
    s = hard_stop_bound(v, distance, dec, dt)
    assert (v + s) / 2 * dt <= distance + 1e-9
    speed, rem = s, distance - (v + s) / 2 * dt
    for _ in range(1000):
        if speed <= 0:
            break
        b = hard_stop_bound(speed, rem, dec, dt)
        floor = max(0.0, speed - dec * dt)
        assert b >= floor - 1e-9  # floor never outbids the bound
        speed_new = max(b, floor)
        rem -= (speed + speed_new) / 2 * dt
        speed = speed_new
    assert speed == 0.0
    assert rem >= -dec * dt * dt / 8 - 1e-9
