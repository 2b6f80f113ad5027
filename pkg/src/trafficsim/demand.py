"""Traffic demand: flow files, spawn scheduling, and entry insertion rules.

A flow is a template vehicle plus a route and a spawn interval. Spawn times
are pure arithmetic off (startTime, interval), so replaying a window after a
reset yields the same schedule. Insertion at the entry lane happens at full
speed when the rear gap allows it, at a reduced safe speed when at least a
vehicle length plus minGap is free, and otherwise joins a FIFO queue that
retries every step.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

from .errors import ParseError, RouteError
from .kinematics import VehicleParams, no_collision_speed
from .roadnet import RoadNet

# flow-file vehicle keys match VehicleParams field names one to one
_VEHICLE_KEYS = ("length", "width", "maxPosAcc", "maxNegAcc", "usualPosAcc",
                 "usualNegAcc", "minGap", "maxSpeed", "headwayTime")


@dataclass(frozen=True)
class FlowSpec:
    index: int                   # declaration order; first key of spawn order
    vehicle: VehicleParams
    route: Tuple[str, ...]
    interval: float
    start_time: float = 0.0
    end_time: float = math.inf   # -1 in the file means unbounded
    entry_lane: Optional[int] = None   # None selects lanes round-robin

    def __post_init__(self):
        if self.interval <= 0:
            raise ParseError(f"flow {self.index}: interval must be positive")
        if self.end_time < self.start_time:
            raise ParseError(f"flow {self.index}: endTime before startTime")


@dataclass(frozen=True)
class SpawnRequest:
    flow: FlowSpec
    due: float
    ordinal: int    # k-th spawn of this flow; also drives round-robin lanes


def check_route(route: Tuple[str, ...], net: RoadNet, label: str):
    if not route:
        raise RouteError(f"{label}: empty route")
    for rid in route:
        if rid not in net.roads:
            raise RouteError(f"{label}: unknown road {rid!r}")
    for a, b in zip(route, route[1:]):
        hop = any(ll.end_lane.road.id == b
                  for lane in net.roads[a].lanes for ll in lane.outgoing)
        if not hop:
            raise RouteError(f"{label}: no connection from {a!r} to {b!r}")


def parse_flow(text: str, net: RoadNet, path: Optional[str] = None) -> List[FlowSpec]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, path=path, line=e.lineno, col=e.colno) from None
    if not isinstance(doc, list):
        raise ParseError("flow document must be a list", path=path)
    flows = []
    for i, item in enumerate(doc):
        label = f"flow {i}"
        for key in ("vehicle", "route", "interval"):
            if key not in item:
                raise ParseError(f"{label}: missing required field {key!r}",
                                 path=path)
        veh = {key: float(item["vehicle"][key])
               for key in _VEHICLE_KEYS if key in item["vehicle"]}
        route = tuple(str(r) for r in item["route"])
        check_route(route, net, label)
        end = float(item.get("endTime", -1.0))
        flows.append(FlowSpec(
            index=i,
            vehicle=VehicleParams(**veh),
            route=route,
            interval=float(item["interval"]),
            start_time=float(item.get("startTime", 0.0)),
            end_time=math.inf if end < 0 else end,
            entry_lane=(int(item["entryLane"]) if "entryLane" in item
                        else None),
        ))
    return flows


def parse_flow_file(path, net: RoadNet) -> List[FlowSpec]:
    with open(path, "r", encoding="utf-8") as f:
        return parse_flow(f.read(), net, path=str(path))


def due_spawns(flows: List[FlowSpec], now: float,
               until: float) -> List[SpawnRequest]:
    """Spawns scheduled in [now, until), ordered by (flow index, due time).

    Due times are start + k*interval recomputed from k, never accumulated, so
    the schedule is exact over arbitrarily long horizons. Membership is
    decided by direct comparison of each due against the window edges, so
    contiguous windows that share their boundary float (the caller passing
    last call's `until` as `now`) partition the schedule exactly: no due is
    dropped or emitted twice even when the step width is not representable.
    """
    out = []
    for flow in flows:
        if flow.start_time >= until:
            continue
        k = max(0, int((now - flow.start_time) // flow.interval) - 1)
        while True:
            due = flow.start_time + k * flow.interval
            if due >= until or due > flow.end_time:
                break
            if due >= now:
                out.append(SpawnRequest(flow, due, k))
            k += 1
    return out


@dataclass(frozen=True)
class LaneTail:
    """The rearmost vehicle on an entry lane, seen from the lane start."""
    pos: float          # front bumper
    length: float
    speed: float
    max_neg_acc: float


def insertion_speed(params: VehicleParams, tail: Optional[LaneTail],
                    lane_max_speed: float, dt: float) -> Optional[float]:
    """Speed for a new vehicle entering at pos 0, or None to queue.

    Full speed if the rear gap can absorb it. Otherwise, if more than
    minGap + length is free, the largest self-consistent safe speed: the v
    solving v^2/(2*maxNegAcc) + v*dt = gap + vL^2/(2*dL), i.e. the fixed point
    of the collision-free bound with the newcomer as its own previous state.
    """
    v_full = min(lane_max_speed, params.maxSpeed)
    if tail is None:
        return v_full
    gap = tail.pos - tail.length
    g = gap - params.minGap
    if g >= 0 and no_collision_speed(v_full, tail.speed, params.maxNegAcc,
                                     tail.max_neg_acc, g, dt) >= v_full:
        return v_full
    if gap > params.minGap + params.length:
        k = g + tail.speed * tail.speed / (2.0 * tail.max_neg_acc)
        d = params.maxNegAcc
        v = d * (-dt + math.sqrt(dt * dt + 2.0 * k / d))
        return min(v_full, max(0.0, v))
    return None


def try_insert(request: SpawnRequest, tail: Optional[LaneTail],
               lane_max_speed: float, dt: float) -> Optional[float]:
    """None means the request stays queued for the next step."""
    return insertion_speed(request.flow.vehicle, tail, lane_max_speed, dt)
