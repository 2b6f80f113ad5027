"""Per-vehicle speed rules: safe following speed, headway, stop-distance bounds,
constraint clamping, and the ballistic position update.

All rules are pure scalar functions. The jitted `_x_jit` variants are the single
source of truth; the public wrappers add argument validation and warning logs and
are what library users and the test suite call. The step kernels call the jitted
variants directly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable

from . import jitsetup  # noqa: F401  (must precede numba import)
from numba import njit

log = logging.getLogger(__name__)


@dataclass
class VehicleParams:
    """Physical and driver parameters of one vehicle.

    maxNegAcc is the maximum deceleration as a positive number; it plays the
    follower role dF and the leader role dL in the safe-speed rule. The usual*
    values bound comfortable driving decisions (yellow-light stop test,
    lane-change willingness); the max* values bound physics.
    """

    length: float = 5.0
    width: float = 2.0
    maxPosAcc: float = 2.0
    maxNegAcc: float = 4.5
    usualPosAcc: float = 2.0
    usualNegAcc: float = 2.5
    minGap: float = 2.5
    maxSpeed: float = 16.67
    headwayTime: float = 1.5

    def __post_init__(self):
        for name in ("length", "width", "maxPosAcc", "maxNegAcc", "usualPosAcc",
                     "usualNegAcc", "maxSpeed", "headwayTime"):
            if getattr(self, name) <= 0:
                raise ValueError(f"VehicleParams.{name} must be positive")
        if self.minGap < 0:
            raise ValueError("VehicleParams.minGap must be >= 0")
        if self.usualNegAcc > self.maxNegAcc:
            raise ValueError("usualNegAcc must not exceed maxNegAcc")
        if self.usualPosAcc > self.maxPosAcc:
            raise ValueError("usualPosAcc must not exceed maxPosAcc")


@njit(cache=True)
def _no_collision_speed_jit(vF, vL, dF, dL, gap, dt):
    # Largest next speed s such that, after one step ramping vF -> s, the
    # follower can still brake at dF to rest behind a leader braking at dL:
    #   (1/(2 dF)) s^2 + (dt/2) s + (vF dt/2 - vL^2/(2 dL) - gap) = 0
    c = vF * dt * 0.5 - (vL * vL) / (2.0 * dL) - gap
    if c >= 0.0:
        # follower displacement already consumes the whole budget: full stop
        return 0.0
    a = 1.0 / (2.0 * dF)
    b = dt * 0.5
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        # only reachable when gap is negative beyond recovery
        return -1.0  # sentinel: caller logs and clamps to 0
    s = (-b + math.sqrt(disc)) / (2.0 * a)
    return s if s > 0.0 else 0.0


@njit(cache=True)
def _hard_stop_bound_jit(v, distance, dec, dt):
    """Largest next speed that keeps a full stop within `distance` feasible,
    accounting for the current speed's share of this step's displacement.

    Equivalent to the safe-speed rule against a stationary wall at `distance`.
    One-step displacement (v+s)/2*dt never exceeds `distance`, and the returned
    bound never demands braking harder than `dec`, so it composes safely with
    the braking floor in clamp_speed.
    """
    d = distance if distance > 0.0 else 0.0
    s = _no_collision_speed_jit(v, 0.0, dec, 1.0, d, dt)
    return s if s > 0.0 else 0.0


@njit(cache=True)
def _headway_speed_jit(gap, headwayTime, minGap):
    s = (gap - minGap) / headwayTime
    return s if s > 0.0 else 0.0


@njit(cache=True)
def _stop_speed_jit(distance, dec, dt):
    # positive root of v^2/(2 dec) + v dt/2 - distance = 0
    if distance <= 0.0:
        return 0.0
    a = 1.0 / (2.0 * dec)
    b = dt * 0.5
    disc = b * b + 4.0 * a * distance
    return (-b + math.sqrt(disc)) / (2.0 * a)


@njit(cache=True)
def _clamp_speed_jit(bound, v, maxPosAcc, maxNegAcc, maxSpeed, laneLimit, dt):
    # bound = min over candidate upper bounds (caller pre-folds); here fold in
    # the lane limit, the vehicle's own cap, and the acceleration cap, then
    # apply the braking floor.
    s = bound
    if laneLimit < s:
        s = laneLimit
    if maxSpeed < s:
        s = maxSpeed
    acc_cap = v + maxPosAcc * dt
    if acc_cap < s:
        s = acc_cap
    floor = v - maxNegAcc * dt
    if floor < 0.0:
        floor = 0.0
    if s < floor:
        s = floor
    return s


# ---------------------------------------------------------------------------
# public wrappers


def no_collision_speed(vF: float, vL: float, dF: float, dL: float,
                       gap: float, dt: float) -> float:
    """Safe following speed: the largest next speed that lets the follower stop
    behind a maximally-braking leader.

    gap is the effective bumper-to-bumper gap (the engine subtracts minGap
    before calling, so a standstill buffer is preserved). Negative gap means an
    already-violated state; if it is negative beyond recovery the result is 0
    and a warning is logged.
    """
    if dF <= 0 or dL <= 0 or dt <= 0:
        raise ValueError("dF, dL and dt must be positive")
    if vF < 0 or vL < 0:
        raise ValueError("speeds must be non-negative")
    s = _no_collision_speed_jit(vF, vL, dF, dL, gap, dt)
    if s < 0.0:
        log.warning("no_collision_speed: negative discriminant (gap=%g) -> 0", gap)
        return 0.0
    return s


def headway_speed(gap: float, headwayTime: float, minGap: float) -> float:
    """Time-gap rule: max(0, (gap - minGap) / headwayTime)."""
    if headwayTime <= 0:
        raise ValueError("headwayTime must be positive")
    return _headway_speed_jit(gap, headwayTime, minGap)


def stop_speed_for_distance(distance: float, dec: float, dt: float) -> float:
    """Largest v with v*dt/2 + v^2/(2*dec) <= distance.

    Negative distance is clamped to 0 (returns 0). Note this bound ignores the
    caller's current speed; where a hard stop target must survive the braking
    floor step over step, use hard_stop_bound instead.
    """
    if dec <= 0 or dt <= 0:
        raise ValueError("dec and dt must be positive")
    return _stop_speed_jit(distance, dec, dt)


def hard_stop_bound(v: float, distance: float, dec: float, dt: float) -> float:
    """Speed-aware stop bound used for red lights and cross-point yielding.

    See _hard_stop_bound_jit; exposed for tests and constraint authors.
    """
    if dec <= 0 or dt <= 0:
        raise ValueError("dec and dt must be positive")
    if v < 0:
        raise ValueError("v must be non-negative")
    return _hard_stop_bound_jit(v, distance, dec, dt)


def clamp_speed(candidates: Iterable[float], v: float, params: VehicleParams,
                laneLimit: float, dt: float) -> float:
    """Pick the max speed meeting all constraints, then apply physics caps.

    Result is min(candidates + {laneLimit, params.maxSpeed, v + maxPosAcc*dt})
    lower-clamped to max(0, v - maxNegAcc*dt): the vehicle cannot brake harder
    than maxNegAcc even when a constraint demands a lower speed, so constraint
    producers must guarantee one-step feasibility.
    """
    if v < 0:
        raise ValueError("v must be non-negative")
    bound = math.inf
    for c in candidates:
        if c < bound:
            bound = c
    return _clamp_speed_jit(bound, v, params.maxPosAcc, params.maxNegAcc,
                            params.maxSpeed, laneLimit, dt)


def ballistic_advance(pos: float, vOld: float, vNew: float, dt: float):
    """Trapezoid position update: distance = (vOld + vNew)/2 * dt.

    Exact for a linear speed ramp, including ramps that reach 0 mid-step.
    Returns (newPos, distance).
    """
    if vOld < 0 or vNew < 0:
        raise ValueError("speeds must be non-negative")
    distance = (vOld + vNew) * 0.5 * dt
    return pos + distance, distance
