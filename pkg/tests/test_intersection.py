"""Signal rule and cross-point arbitration tests.

Stop-bound roots are frozen from tests/oracles/braking_oracle.py. The
signal and yield bounds are speed-aware (hard_stop_bound), which at
v = 0 coincides exactly with the speed-free stop rule; frozen-root
checks exploit that.
"""

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from trafficsim.constants import V_MIN_EST, YIELD_BUFFER
from trafficsim.errors import ContractViolation
from trafficsim.intersection import (GREEN, RED, YELLOW, Claim, CrossPoint,
                                     clearance_length, cross_constraint,
                                     notify_arrival, release,
                                     signal_constraint)
from trafficsim.kinematics import VehicleParams, hard_stop_bound

STOP_9 = 7.02698765764    # stop_speed_for_distance(9, 4.5, 1)


def _cp(angle=math.pi / 2):
    return CrossPoint(id="cp0", laneLinkA="llA", laneLinkB="llB",
                      distA=10.0, distB=12.0, angle=angle)


# -- signal rule ---------------------------------------------------------


def test_green_no_bound():
    p = VehicleParams()
    assert signal_constraint(GREEN, 0.0, 10.0, p, 1.0) is None
    assert signal_constraint(GREEN, 500.0, 0.0, p, 1.0) is None


def test_red_at_line_stopped():
    assert signal_constraint(RED, 0.0, 0.0, VehicleParams(), 1.0) == 0.0


def test_red_uses_max_braking():
    p = VehicleParams()
    got = signal_constraint(RED, 30.0, 10.0, p, 1.0)
    assert got == pytest.approx(hard_stop_bound(10.0, 30.0, p.maxNegAcc, 1.0))
    # and is a genuine bound: one step at it stays short of the line
    assert (10.0 + got) / 2 <= 30.0


def test_yellow_comfortable_stop():
    # 10^2/(2*2.5) + 10/2 = 25 <= 30: stop with comfortable braking.
    # The speed-aware bound at this state is exactly 10 (not yet binding).
    p = VehicleParams()
    got = signal_constraint(YELLOW, 30.0, 10.0, p, 1.0)
    assert got == pytest.approx(10.0, abs=1e-12)
    assert got == pytest.approx(
        hard_stop_bound(10.0, 30.0, p.usualNegAcc, 1.0))


def test_yellow_emergency_band():
    # comfortable stop needs 25 m > 20, max braking needs 16.1 <= 20:
    # stop is still demanded, at maxNegAcc
    p = VehicleParams()
    got = signal_constraint(YELLOW, 20.0, 10.0, p, 1.0)
    assert got == pytest.approx(hard_stop_bound(10.0, 20.0, p.maxNegAcc, 1.0))
    assert got < 10.0


def test_yellow_proceed_when_no_stop_fits():
    # max braking needs 16.1 m > 10: committed, proceed through
    assert signal_constraint(YELLOW, 10.0, 10.0, VehicleParams(), 1.0) is None


def test_signal_constraint_errors():
    p = VehicleParams()
    with pytest.raises(ValueError):
        signal_constraint(RED, -1.0, 5.0, p, 1.0)
    with pytest.raises(ValueError):
        signal_constraint("blue", 10.0, 5.0, p, 1.0)


@given(st.floats(0, 20), st.floats(0, 100), st.sampled_from([0.1, 0.5, 1.0]))
def test_yellow_dichotomy(v, dist, dt):
    """Yellow either demands a feasible stop or no bound at all; a demanded
    stop is always achievable from the current speed (one-step feasible
    whenever the committed half-step fits)."""
    p = VehicleParams()
    got = signal_constraint(YELLOW, dist, v, p, dt)
    if got is None:
        # only when even max braking cannot stop in time
        assert v * v / (2 * p.maxNegAcc) + v * dt / 2 > dist
    elif v * dt / 2 <= dist:
        assert (v + got) / 2 * dt <= dist + 1e-9


# -- claims --------------------------------------------------------------


def test_single_claimant_heads():
    cp = _cp()
    notify_arrival(cp, "v1", "A", 20.0, 5.0, 2, now=0.0)
    assert [c.vehicle for c in cp.claims] == ["v1"]
    assert cp.head().vehicle == "v1"
    assert cp.head().arrivalEstimate == pytest.approx(4.0)


def test_priority_beats_eta():
    cp = _cp()
    notify_arrival(cp, "left", "A", 10.0, 10.0, 0, now=0.0)
    notify_arrival(cp, "straight", "B", 10.0, 10.0, 2, now=0.0)
    assert [c.vehicle for c in cp.claims] == ["straight", "left"]


def test_equal_priority_earlier_eta_first():
    cp = _cp()
    notify_arrival(cp, "far", "A", 40.0, 10.0, 2, now=0.0)
    notify_arrival(cp, "near", "B", 30.0, 10.0, 2, now=0.0)
    assert [c.vehicle for c in cp.claims] == ["near", "far"]
    assert [c.arrivalEstimate for c in cp.claims] == [3.0, 4.0]


def test_vehicle_id_breaks_ties():
    cp = _cp()
    notify_arrival(cp, "b", "A", 10.0, 10.0, 2, now=0.0)
    notify_arrival(cp, "a", "B", 10.0, 10.0, 2, now=0.0)
    assert [c.vehicle for c in cp.claims] == ["a", "b"]


def test_notify_refresh_replaces():
    cp = _cp()
    notify_arrival(cp, "v1", "A", 40.0, 10.0, 2, now=0.0)
    notify_arrival(cp, "v1", "A", 20.0, 10.0, 2, now=1.0)
    assert len(cp.claims) == 1
    assert cp.claims[0].arrivalEstimate == pytest.approx(3.0)
    assert cp.claims[0].notifiedAtDistance == 20.0


def test_stopped_vehicle_eta_uses_floor():
    cp = _cp()
    notify_arrival(cp, "v1", "A", 25.0, 0.0, 2, now=2.0)
    assert cp.claims[0].arrivalEstimate == pytest.approx(2.0 + 25.0 / V_MIN_EST)


def test_notify_argument_errors():
    cp = _cp()
    with pytest.raises(ValueError):
        notify_arrival(cp, "v1", "A", -1.0, 5.0, 2, now=0.0)
    with pytest.raises(ValueError):
        notify_arrival(cp, "v1", "C", 1.0, 5.0, 2, now=0.0)


@given(st.lists(st.tuples(st.integers(0, 2), st.floats(0, 100),
                          st.integers(0, 30)), max_size=30))
def test_claims_always_sorted(entries):
    cp = _cp()
    for prio, dist, vid in entries:
        notify_arrival(cp, f"v{vid}", "A", dist, 5.0, prio, now=0.0)
    keys = [(-c.priority, c.arrivalEstimate, c.vehicle) for c in cp.claims]
    assert keys == sorted(keys)
    assert len({c.vehicle for c in cp.claims}) == len(cp.claims)


# -- yielding ------------------------------------------------------------


def test_head_passes_freely():
    cp = _cp()
    notify_arrival(cp, "v1", "A", 20.0, 5.0, 2, now=0.0)
    assert cross_constraint(cp, "v1", "A", 20.0, 5.0,
                            VehicleParams(), 1.0) is None


def test_second_ranked_stops_short_of_window():
    # perpendicular crossing, default body: clearance (2/2 + 5/2) = 3.5 m;
    # from 15.5 m out the stop target is 15.5 - 3.5 - 3 = 9 m, and at v = 0
    # the speed-aware bound equals the plain stop root
    cp = _cp()
    notify_arrival(cp, "head", "A", 5.0, 10.0, 2, now=0.0)
    notify_arrival(cp, "second", "B", 15.5, 0.0, 2, now=0.0)
    got = cross_constraint(cp, "second", "B", 15.5, 0.0, VehicleParams(), 1.0)
    assert got == pytest.approx(STOP_9, abs=1e-9)


def test_yielder_inside_window_pinned():
    cp = _cp()
    notify_arrival(cp, "head", "A", 5.0, 10.0, 2, now=0.0)
    notify_arrival(cp, "second", "B", 4.0, 0.0, 2, now=0.0)
    assert cross_constraint(cp, "second", "B", 4.0, 0.0,
                            VehicleParams(), 1.0) == 0.0


def test_cleared_head_promotes_second():
    cp = _cp()
    notify_arrival(cp, "head", "A", 5.0, 10.0, 2, now=0.0)
    notify_arrival(cp, "second", "B", 15.5, 5.0, 2, now=0.0)
    release(cp, "head")  # passed distA + clearance, engine releases
    assert cross_constraint(cp, "second", "B", 15.5, 5.0,
                            VehicleParams(), 1.0) is None


def test_cross_constraint_requires_claim():
    cp = _cp()
    with pytest.raises(ContractViolation):
        cross_constraint(cp, "ghost", "A", 10.0, 5.0, VehicleParams(), 1.0)
    notify_arrival(cp, "v1", "A", 10.0, 5.0, 2, now=0.0)
    with pytest.raises(ContractViolation):
        cross_constraint(cp, "ghost", "A", 10.0, 5.0, VehicleParams(), 1.0)


def test_release_idempotent():
    cp = _cp()
    notify_arrival(cp, "v1", "A", 10.0, 5.0, 2, now=0.0)
    release(cp, "v1")
    assert cp.claims == []
    release(cp, "v1")
    assert cp.claims == []


# -- clearance geometry --------------------------------------------------


def test_clearance_length_perpendicular():
    assert clearance_length(2.0, 5.0, math.pi / 2) == pytest.approx(3.5)


def test_clearance_length_floors_shallow_angles():
    # sin floor 0.2 keeps near-tangent merges finite
    assert clearance_length(2.0, 5.0, 0.001) == pytest.approx(3.5 / 0.2)
    assert clearance_length(2.0, 5.0, math.pi - 0.001) == \
        pytest.approx(3.5 / 0.2)


@given(st.floats(0.5, 4), st.floats(3, 12), st.floats(0.001, math.pi - 0.001))
def test_clearance_length_bounds(w, l, angle):
    c = clearance_length(w, l, angle)
    assert (w / 2 + l / 2) - 1e-12 <= c <= (w / 2 + l / 2) / 0.2 + 1e-12


def test_yield_buffer_is_outside_window():
    # enforced stop target sits YIELD_BUFFER outside the geometric window
    p = VehicleParams()
    cp = _cp()
    notify_arrival(cp, "head", "A", 5.0, 10.0, 2, now=0.0)
    notify_arrival(cp, "second", "B", 30.0, 0.0, 2, now=0.0)
    clear = clearance_length(p.width, p.length, cp.angle)
    got = cross_constraint(cp, "second", "B", 30.0, 0.0, p, 1.0)
    target = 30.0 - clear - YIELD_BUFFER
    assert got == pytest.approx(hard_stop_bound(0.0, target, p.maxNegAcc, 1.0))
