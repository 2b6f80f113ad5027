"""Signal obedience and cross-point arbitration.

A CrossPoint is a precomputed geometric conflict between two lanelink paths.
Approaching vehicles register claims; the claim order (priority first, then
estimated arrival, then vehicle id) decides who passes and who yields. Claims
are maintained here as real sorted lists for direct use and testing; the step
kernels reduce the same policy to a single active-head claimant per point.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import List, Optional

from .constants import SIN_FLOOR, V_MIN_EST, YIELD_BUFFER
from .errors import ContractViolation
from .kinematics import VehicleParams, _hard_stop_bound_jit

GREEN = "green"
YELLOW = "yellow"
RED = "red"


@dataclass(order=True)
class Claim:
    sort_key: tuple = field(init=False, repr=False)
    vehicle: str = field(compare=False)
    arrivalEstimate: float = field(compare=False)
    priority: int = field(compare=False)
    notifiedAtDistance: float = field(compare=False)

    def __post_init__(self):
        self.sort_key = (-self.priority, self.arrivalEstimate, self.vehicle)


@dataclass
class CrossPoint:
    """Conflict between laneLinkA and laneLinkB at distA/distB along each path.

    angle is the unsigned crossing angle; clearance lengths divide by
    max(sin(angle), SIN_FLOOR) so near-tangent merges get long windows instead
    of infinite ones.
    """

    id: str
    laneLinkA: str
    laneLinkB: str
    distA: float
    distB: float
    angle: float
    claims: List[Claim] = field(default_factory=list)

    def dist_for(self, side: str) -> float:
        return self.distA if side == "A" else self.distB

    def head(self) -> Optional[Claim]:
        return self.claims[0] if self.claims else None


def clearance_length(other_width: float, own_length: float, angle: float) -> float:
    """Half-width of the conflict window along one path."""
    import math
    s = max(math.sin(angle), SIN_FLOOR)
    return (other_width * 0.5 + own_length * 0.5) / s


@dataclass
class SignalState:
    """Per-intersection signal snapshot: colors keyed by roadlink id."""

    colors: dict
    currentPhaseIndex: int
    timeInPhase: float


def signal_constraint(color: str, distToStopLine: float, v: float,
                      params: VehicleParams, dt: float) -> Optional[float]:
    """Speed bound imposed by the signal ahead, or None.

    Red demands a stop at the line using maxNegAcc. Yellow demands a stop when
    one is still comfortable (v^2/(2*usualNegAcc) + v*dt/2 fits before the
    line), and a hard stop when only maximum braking still fits — a vehicle in
    that band could not clear the line before red. Only when no stop fits does
    the vehicle proceed through. Bounds are computed with the speed-aware stop
    rule so they stay feasible against the braking floor.
    """
    if distToStopLine < 0:
        raise ValueError("distToStopLine must be >= 0")
    if color == GREEN:
        return None
    if color == RED:
        return _hard_stop_bound_jit(v, distToStopLine, params.maxNegAcc, dt)
    if color == YELLOW:
        if v * v / (2.0 * params.usualNegAcc) + v * dt * 0.5 <= distToStopLine:
            return _hard_stop_bound_jit(v, distToStopLine, params.usualNegAcc, dt)
        if v * v / (2.0 * params.maxNegAcc) + v * dt * 0.5 <= distToStopLine:
            return _hard_stop_bound_jit(v, distToStopLine, params.maxNegAcc, dt)
        return None
    raise ValueError(f"unknown signal color {color!r}")


def notify_arrival(cp: CrossPoint, vehicle: str, side: str, distanceToCp: float,
                   v: float, priority: int, now: float) -> None:
    """Register or refresh the vehicle's claim on this cross point.

    arrivalEstimate = now + distanceToCp / max(v, V_MIN_EST). Re-notification
    replaces the previous claim (idempotent per step).
    """
    if distanceToCp < 0:
        raise ValueError("distanceToCp must be >= 0")
    if side not in ("A", "B"):
        raise ValueError("side must be 'A' or 'B'")
    eta = now + distanceToCp / max(v, V_MIN_EST)
    release(cp, vehicle)
    claim = Claim(vehicle=vehicle, arrivalEstimate=eta, priority=priority,
                  notifiedAtDistance=distanceToCp)
    bisect.insort(cp.claims, claim)


def cross_constraint(cp: CrossPoint, vehicle: str, side: str, distanceToCp: float,
                     v: float, params: VehicleParams, dt: float) -> Optional[float]:
    """Speed bound for a claimant, or None when it may pass.

    The head of the claim list passes freely; everyone else targets a stop
    clearance + YIELD_BUFFER short of the point. Claimants that passed the
    point must have been released; staleness is a caller bug.
    """
    head = cp.head()
    if head is None or all(c.vehicle != vehicle for c in cp.claims):
        raise ContractViolation(f"{vehicle} has no claim on {cp.id}")
    if head.vehicle == vehicle:
        return None
    # width of the head's vehicle is not tracked at this level; own params give
    # the conservative symmetric window used throughout
    clear = clearance_length(params.width, params.length, cp.angle)
    target = distanceToCp - clear - YIELD_BUFFER
    return _hard_stop_bound_jit(v, max(0.0, target), params.maxNegAcc, dt)


def release(cp: CrossPoint, vehicle: str) -> None:
    """Remove the vehicle's claim; no-op when absent."""
    cp.claims = [c for c in cp.claims if c.vehicle != vehicle]
