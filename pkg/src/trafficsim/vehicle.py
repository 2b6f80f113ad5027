"""Vehicle record and lane-change state shared by the object-level modules.

The engine's hot path keeps vehicles in flat arrays; this object form is the
public face (observations, spawning, tests).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional

from .kinematics import VehicleParams

LC_NONE = "none"
LC_SIGNALED = "signaled"
LC_EXECUTING = "executing"


@dataclass
class LaneChangeState:
    phase: str = LC_NONE
    target_lane_id: Optional[str] = None
    shadow_vehicle_id: Optional[str] = None
    lateral_progress: float = 0.0
    reason: Optional[str] = None      # "route" | "speedGain"

    def __post_init__(self):
        if (self.phase == LC_EXECUTING) != (self.shadow_vehicle_id is not None):
            raise ValueError("shadow vehicle present iff phase is executing")


@dataclass
class Vehicle:
    id: str
    params: VehicleParams
    route: List[str]                  # ordered road ids
    lane_id: str                      # lane or lanelink id
    pos: float                        # front bumper, meters from lane start
    speed: float
    lane_change: LaneChangeState = field(default_factory=LaneChangeState)
    enter_time: float = 0.0
    shadow_of: Optional[str] = None

    @property
    def is_shadow(self) -> bool:
        return self.shadow_of is not None

    def make_shadow(self, target_lane_id: str) -> "Vehicle":
        return replace(self, id=f"shadow_{self.id}", lane_id=target_lane_id,
                       lane_change=LaneChangeState(), shadow_of=self.id)
