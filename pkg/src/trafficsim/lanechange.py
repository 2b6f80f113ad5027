"""Lane changing: trigger rules, segment-indexed neighbor lookup, and the
shadow-vehicle maneuver.

A change runs in three acts: `change_urge` proposes a target lane (route
need first, then free-space gain), `begin_change` places a shadow copy on the
target lane if insertion is safe, and after the coupled-movement window
`finish_change` swaps the original for its shadow. While executing, the pair
moves in lockstep at the min of both lanes' constraints (`couple_speeds`).
"""

from __future__ import annotations

from bisect import bisect_left, insort
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .constants import GAIN_THRESHOLD, LC_DURATION
from .errors import ContractViolation
from .kinematics import no_collision_speed
from .roadnet import Lane, Road, segment_of
from .vehicle import LC_EXECUTING, LC_NONE, Vehicle


@dataclass
class LaneOccupancy:
    """Vehicles on one lane bucketed by segment for windowed neighbor scans.

    Entries stay sorted by pos ascending; seg_bounds[k] is the index of the
    first entry in segment k (so bucket k is entries[seg_bounds[k] :
    seg_bounds[k+1]]).
    """
    lane: Lane
    entries: List[Vehicle] = field(default_factory=list)

    @classmethod
    def of(cls, lane: Lane, vehicles: Sequence[Vehicle]) -> "LaneOccupancy":
        occ = cls(lane)
        occ.entries = sorted(vehicles, key=_key)
        return occ

    def insert(self, vehicle: Vehicle):
        insort(self.entries, vehicle, key=_key)

    def _positions(self) -> List[float]:
        return [v.pos for v in self.entries]

    def window(self, pos: float) -> Tuple[int, int]:
        """Index range covering segment_of(pos) and its two neighbors."""
        seg = segment_of(self.lane, pos)
        lo_edge = max(0, seg - 1) * self.lane.seg_len
        hi_seg = min(self.lane.n_segments - 1, seg + 1)
        positions = self._positions()
        lo = bisect_left(positions, lo_edge)
        if hi_seg == self.lane.n_segments - 1:
            hi = len(positions)
        else:
            hi = bisect_left(positions, (hi_seg + 1) * self.lane.seg_len)
        return lo, hi


def scan_neighbors(occ: LaneOccupancy,
                   pos: float) -> Tuple[Optional[Vehicle], Optional[Vehicle]]:
    """Nearest vehicle at-or-ahead of pos and nearest strictly behind.

    Looks only at the three-segment window around pos; when a window boundary
    is empty on one side the scan steps from that edge along the lane's sorted
    order, so the result always matches a full-lane scan.
    """
    lo, hi = occ.window(pos)
    positions = occ._positions()
    i = bisect_left(positions, pos)
    if i < hi:
        leader = occ.entries[i]
    elif hi < len(occ.entries):
        leader = occ.entries[hi]      # window's forward edge was empty
    else:
        leader = None
    if i - 1 >= lo:
        follower = occ.entries[i - 1]
    elif lo > 0:
        follower = occ.entries[lo - 1]  # backward edge was empty
    else:
        follower = None
    return leader, follower


def leader_gap(occ: LaneOccupancy, pos: float) -> float:
    """Bumper gap to the next vehicle ahead, or the run-out to lane end."""
    leader, _ = scan_neighbors(occ, pos)
    if leader is None:
        return occ.lane.length - pos
    return leader.pos - leader.params.length - pos


def _key(v: Vehicle):
    return (v.pos, v.id)


def lane_serves(lane: Lane, next_road: Optional[Road]) -> bool:
    if next_road is None:
        return True
    return any(ll.end_lane.road.id == next_road.id for ll in lane.outgoing)


def _follower_can_absorb(vehicle: Vehicle, occ: LaneOccupancy,
                         dt: float) -> bool:
    """Would the target-lane follower keep its comfortable braking envelope
    with the shadow dropped in front of it?"""
    _, follower = scan_neighbors(occ, vehicle.pos)
    if follower is None:
        return True
    f = follower.params
    gap = vehicle.pos - vehicle.params.length - follower.pos - f.minGap
    if gap < 0:
        return False
    safe = no_collision_speed(follower.speed, vehicle.speed, f.maxNegAcc,
                              vehicle.params.maxNegAcc, gap, dt)
    return safe >= follower.speed - f.usualNegAcc * dt


def _leader_leaves_room(vehicle: Vehicle, occ: LaneOccupancy,
                        dt: float) -> bool:
    """Can the changer itself still meet its safe-speed bound behind the
    target-lane leader without exceeding maximum braking?"""
    leader, _ = scan_neighbors(occ, vehicle.pos)
    if leader is None:
        return True
    p = vehicle.params
    gap = leader.pos - leader.params.length - vehicle.pos - p.minGap
    if gap < 0:
        return False
    safe = no_collision_speed(vehicle.speed, leader.speed, p.maxNegAcc,
                              leader.params.maxNegAcc, gap, dt)
    return safe >= vehicle.speed - p.maxNegAcc * dt


def change_urge(vehicle: Vehicle, current_lane: Lane,
                adjacent_lanes: Sequence[Lane],
                next_road: Optional[Road],
                occupancy: Dict[str, LaneOccupancy],
                dt: float = 1.0) -> Optional[Tuple[Lane, str]]:
    """Pick a target lane, route necessity first.

    If the current lane cannot reach the route's next road, prefer an adjacent
    lane that can; failing that, step toward the nearest lane on this road
    that can. Otherwise look for a free-space gain: an adjacent route-serving
    lane whose leader gap beats the current one by gainThreshold, whose
    follower can absorb the insertion. Returns (lane, reason) or None.
    """
    if vehicle.lane_change.phase == LC_EXECUTING:
        raise ContractViolation(f"{vehicle.id} is already changing lanes")
    if current_lane.id not in occupancy:
        raise ContractViolation(f"no occupancy for lane {current_lane.id}")

    if not lane_serves(current_lane, next_road):
        serving_adjacent = [l for l in adjacent_lanes
                            if lane_serves(l, next_road)]
        if serving_adjacent:
            best = min(serving_adjacent,
                       key=lambda l: abs(l.index - current_lane.index))
            return best, "route"
        serving = [l for l in current_lane.road.lanes
                   if lane_serves(l, next_road)]
        if serving:
            nearest = min(serving,
                          key=lambda l: abs(l.index - current_lane.index))
            step = 1 if nearest.index > current_lane.index else -1
            for l in adjacent_lanes:
                if l.index == current_lane.index + step:
                    return l, "route"
        return None

    cur_gap = leader_gap(occupancy[current_lane.id], vehicle.pos)
    best: Optional[Tuple[Lane, float]] = None
    for cand in adjacent_lanes:
        if not lane_serves(cand, next_road):
            continue
        occ = occupancy[cand.id]
        gap = leader_gap(occ, vehicle.pos)
        if gap <= cur_gap + GAIN_THRESHOLD:
            continue
        if not _follower_can_absorb(vehicle, occ, dt):
            continue
        if best is None or gap > best[1]:
            best = (cand, gap)
    if best is not None:
        return best[0], "speedGain"
    return None


def begin_change(vehicle: Vehicle, target_lane: Lane,
                 occupancy: Dict[str, LaneOccupancy],
                 dt: float = 1.0) -> Optional[Vehicle]:
    """Start the maneuver: create the shadow on the target lane.

    Returns the shadow vehicle, or None when insertion is unsafe (the change
    is simply dropped; the vehicle may retry on a later step). The shadow is
    NOT registered in `occupancy` here; the caller owns that mutation.
    """
    if vehicle.lane_change.phase == LC_EXECUTING:
        raise ContractViolation(
            f"{vehicle.id} began a second change before finishing")
    occ = occupancy[target_lane.id]
    if not (_follower_can_absorb(vehicle, occ, dt)
            and _leader_leaves_room(vehicle, occ, dt)):
        vehicle.lane_change.phase = LC_NONE
        return None
    shadow = vehicle.make_shadow(target_lane.id)
    vehicle.lane_change.phase = LC_EXECUTING
    vehicle.lane_change.target_lane_id = target_lane.id
    vehicle.lane_change.shadow_vehicle_id = shadow.id
    vehicle.lane_change.lateral_progress = 0.0
    return shadow


def couple_speeds(own_plan: float, shadow_plan: float) -> float:
    """Both lanes' constraints bind the pair; the tighter one wins."""
    return min(own_plan, shadow_plan)


def advance_progress(vehicle: Vehicle, dt: float) -> float:
    if vehicle.lane_change.phase != LC_EXECUTING:
        raise ContractViolation(f"{vehicle.id} is not executing a change")
    p = min(1.0, vehicle.lane_change.lateral_progress + dt / LC_DURATION)
    vehicle.lane_change.lateral_progress = p
    return p


def finish_change(vehicle: Vehicle, shadow: Vehicle) -> Vehicle:
    """Swap the original for its shadow: the vehicle continues on the target
    lane with id, route and statistics intact."""
    if vehicle.lane_change.phase != LC_EXECUTING:
        raise ContractViolation(f"{vehicle.id} is not executing a change")
    if vehicle.lane_change.lateral_progress < 1.0:
        raise ContractViolation(
            f"{vehicle.id} finish before lateralProgress reached 1")
    vehicle.lane_id = shadow.lane_id
    vehicle.pos = shadow.pos
    vehicle.speed = shadow.speed
    vehicle.lane_change = type(vehicle.lane_change)()
    return vehicle
