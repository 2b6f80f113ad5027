"""Road network data model: roads grouped into lanes split into segments, and
intersections holding roadlinks, lanelinks, signal phases and cross points.

Networks load from a JSON document (grammar in docs/formats.md). Parsing
resolves every cross-reference and precomputes geometry (lane center polylines,
lanelink paths, cross points); `validate` reports value-level diagnostics
without raising.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional

import numpy as np

from . import geometry
from .constants import SEGMENT_LENGTH
from .errors import ParseError, SemanticError
from .intersection import CrossPoint


class Point(NamedTuple):
    x: float
    y: float


STRAIGHT = "go_straight"
TURN_LEFT = "turn_left"
TURN_RIGHT = "turn_right"
ROADLINK_TYPES = (STRAIGHT, TURN_LEFT, TURN_RIGHT)

# straight movers outrank right turns outrank left turns at cross points
PRIORITY = {STRAIGHT: 2, TURN_RIGHT: 1, TURN_LEFT: 0}


@dataclass
class Lane:
    id: str
    road: "Road"
    index: int
    width: float
    max_speed: float
    points: np.ndarray          # center polyline of this lane
    cum: np.ndarray             # arc lengths per vertex
    length: float
    seg_len: float = SEGMENT_LENGTH
    n_segments: int = 1
    outgoing: List["LaneLink"] = field(default_factory=list)

    def __repr__(self):
        return f"Lane({self.id}, len={self.length:.1f})"


@dataclass
class Road:
    id: str
    start_intersection: str
    end_intersection: str
    points: np.ndarray
    lanes: List[Lane]

    def __repr__(self):
        return f"Road({self.id}, lanes={len(self.lanes)})"


@dataclass
class LaneLink:
    id: str
    road_link: "RoadLink"
    start_lane: Lane
    end_lane: Lane
    points: np.ndarray
    cum: np.ndarray
    length: float

    def __repr__(self):
        return f"LaneLink({self.id})"


@dataclass
class RoadLink:
    id: str
    intersection: "Intersection"
    kind: str                  # one of ROADLINK_TYPES
    start_road: Road
    end_road: Road
    lane_links: List[LaneLink]

    @property
    def priority(self) -> int:
        return PRIORITY[self.kind]


@dataclass
class SignalPhase:
    available_road_links: List[int]   # indices into intersection.road_links
    time: float                       # auto-advance dwell, seconds


@dataclass
class Intersection:
    id: str
    point: Point
    virtual: bool
    road_links: List[RoadLink] = field(default_factory=list)
    phases: List[SignalPhase] = field(default_factory=list)
    cross_points: List[CrossPoint] = field(default_factory=list)

    def __repr__(self):
        return f"Intersection({self.id}, virtual={self.virtual})"


@dataclass
class RoadNet:
    intersections: Dict[str, Intersection]
    roads: Dict[str, Road]
    lanes: Dict[str, Lane]
    lane_links: Dict[str, LaneLink]
    # lanelinks in roadnet declaration order; fixes the replay signal column order
    lane_link_order: List[LaneLink] = field(default_factory=list)


@dataclass
class Diagnostic:
    severity: str    # "error" | "warning"
    entity: str
    message: str


def lane_id(road_id: str, index: int) -> str:
    return f"{road_id}_{index}"


def segment_of(lane: Lane, pos: float) -> int:
    """Spatial index bucket for a longitudinal position.

    Buckets are seg_len wide; the last bucket absorbs the remainder of the
    lane, so it is the target for every pos in [ (n-1)*seg_len, length ].
    """
    if pos < 0 or pos > lane.length:
        raise ValueError(f"pos {pos} outside lane {lane.id} [0, {lane.length}]")
    idx = int(pos // lane.seg_len)
    return min(idx, lane.n_segments - 1)


def _req(obj: dict, key: str, ctx: str):
    if key not in obj:
        raise ParseError(f"{ctx}: missing required field {key!r}")
    return obj[key]


def _point(obj, ctx: str) -> Point:
    if not isinstance(obj, dict):
        raise ParseError(f"{ctx}: point must be an object with x and y")
    return Point(float(_req(obj, "x", ctx)), float(_req(obj, "y", ctx)))


def _lane_offsets(widths: List[float]) -> List[float]:
    """Center offset of each lane to the right of the road polyline."""
    out = []
    acc = 0.0
    for w in widths:
        out.append(acc + w * 0.5)
        acc += w
    return out


def parse_roadnet(text: str, segment_length: float = SEGMENT_LENGTH,
                  path: Optional[str] = None) -> RoadNet:
    """Parse a roadnet document. Unknown extra fields are ignored; missing
    required fields, dangling references and out-of-range lane indices are
    rejected with the offending id in the message.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, path=path, line=e.lineno, col=e.colno) from None
    if not isinstance(doc, dict):
        raise ParseError("roadnet document must be an object", path=path)

    roads: Dict[str, Road] = {}
    lanes: Dict[str, Lane] = {}
    for rd in _req(doc, "roads", "roadnet"):
        rid = str(_req(rd, "id", "road"))
        if rid in roads:
            raise ParseError(f"duplicate road id {rid!r}", path=path)
        pts = geometry.as_polyline([_point(p, f"road {rid}")
                                    for p in _req(rd, "points", f"road {rid}")])
        geometry.check_nondegenerate(pts, f"road {rid}")
        lane_specs = _req(rd, "lanes", f"road {rid}")
        if not lane_specs:
            raise ParseError(f"road {rid!r} has no lanes", path=path)
        widths = [float(_req(l, "width", f"road {rid} lane {i}"))
                  for i, l in enumerate(lane_specs)]
        road = Road(id=rid,
                    start_intersection=str(_req(rd, "startIntersection", f"road {rid}")),
                    end_intersection=str(_req(rd, "endIntersection", f"road {rid}")),
                    points=pts, lanes=[])
        for i, (spec, off) in enumerate(zip(lane_specs, _lane_offsets(widths))):
            lpts = geometry.offset_polyline(pts, off)
            cum = geometry.cumulative_lengths(lpts)
            length = float(cum[-1])
            ln = Lane(id=lane_id(rid, i), road=road, index=i,
                      width=widths[i],
                      max_speed=float(_req(spec, "maxSpeed", f"road {rid} lane {i}")),
                      points=lpts, cum=cum, length=length,
                      seg_len=segment_length,
                      n_segments=max(1, int(length // segment_length)))
            road.lanes.append(ln)
            lanes[ln.id] = ln
        roads[rid] = road

    intersections: Dict[str, Intersection] = {}
    lane_links: Dict[str, LaneLink] = {}
    order: List[LaneLink] = []
    for it in _req(doc, "intersections", "roadnet"):
        iid = str(_req(it, "id", "intersection"))
        if iid in intersections:
            raise ParseError(f"duplicate intersection id {iid!r}", path=path)
        inter = Intersection(id=iid,
                             point=_point(_req(it, "point", f"intersection {iid}"),
                                          f"intersection {iid}"),
                             virtual=bool(_req(it, "virtual", f"intersection {iid}")))
        for j, rl in enumerate(_req(it, "roadLinks", f"intersection {iid}")):
            ctx = f"intersection {iid} roadLink {j}"
            kind = str(_req(rl, "type", ctx))
            if kind not in ROADLINK_TYPES:
                raise ParseError(f"{ctx}: unknown type {kind!r}")
            sr = str(_req(rl, "startRoad", ctx))
            er = str(_req(rl, "endRoad", ctx))
            if sr not in roads:
                raise SemanticError(f"{ctx}: unknown startRoad {sr!r}")
            if er not in roads:
                raise SemanticError(f"{ctx}: unknown endRoad {er!r}")
            rlink = RoadLink(id=f"{iid}_rl{j}", intersection=inter, kind=kind,
                             start_road=roads[sr], end_road=roads[er],
                             lane_links=[])
            for k, ll in enumerate(_req(rl, "laneLinks", ctx)):
                lctx = f"{ctx} laneLink {k}"
                si = int(_req(ll, "startLaneIndex", lctx))
                ei = int(_req(ll, "endLaneIndex", lctx))
                if not (0 <= si < len(roads[sr].lanes)):
                    raise SemanticError(
                        f"{lctx}: startLane {lane_id(sr, si)!r} does not exist")
                if not (0 <= ei < len(roads[er].lanes)):
                    raise SemanticError(
                        f"{lctx}: endLane {lane_id(er, ei)!r} does not exist")
                start_lane = roads[sr].lanes[si]
                end_lane = roads[er].lanes[ei]
                if "points" in ll and ll["points"]:
                    pts = geometry.as_polyline([_point(p, lctx) for p in ll["points"]])
                else:
                    pts = np.array([start_lane.points[-1], end_lane.points[0]])
                geometry.check_nondegenerate(pts, lctx)
                cum = geometry.cumulative_lengths(pts)
                link = LaneLink(id=f"{iid}_rl{j}_ll{k}", road_link=rlink,
                                start_lane=start_lane, end_lane=end_lane,
                                points=pts, cum=cum, length=float(cum[-1]))
                rlink.lane_links.append(link)
                start_lane.outgoing.append(link)
                lane_links[link.id] = link
                order.append(link)
            inter.road_links.append(rlink)
        tl = it.get("trafficLight")
        if tl is not None:
            for p, ph in enumerate(_req(tl, "lightphases", f"intersection {iid}")):
                pctx = f"intersection {iid} phase {p}"
                avail = [int(x) for x in _req(ph, "availableRoadLinks", pctx)]
                for x in avail:
                    if not (0 <= x < len(inter.road_links)):
                        raise SemanticError(f"{pctx}: roadLink index {x} out of range")
                inter.phases.append(SignalPhase(available_road_links=avail,
                                                time=float(_req(ph, "time", pctx))))
        intersections[iid] = inter

    for rd in roads.values():
        for end in (rd.start_intersection, rd.end_intersection):
            if end not in intersections:
                raise SemanticError(f"road {rd.id!r}: unknown intersection {end!r}")

    net = RoadNet(intersections=intersections, roads=roads, lanes=lanes,
                  lane_links=lane_links, lane_link_order=order)
    for inter in intersections.values():
        inter.cross_points = compute_cross_points(inter)
    return net


def parse_roadnet_file(path, segment_length: float = SEGMENT_LENGTH) -> RoadNet:
    with open(path, "r", encoding="utf-8") as f:
        return parse_roadnet(f.read(), segment_length=segment_length, path=str(path))


def compute_cross_points(inter: Intersection) -> List[CrossPoint]:
    """Pairwise path conflicts between the intersection's lanelinks.

    One cross point per unordered lanelink pair whose polylines touch,
    excluding pairs that share a start lane (ordering there is already fixed by
    car-following on the shared approach). Pairs that merely merge into the
    same lane DO conflict and meet at the shared endpoint. When two paths touch
    more than once, the contact with the smallest distance along the
    lexicographically smaller lanelink id wins. Output is ordered by
    (laneLinkA id, laneLinkB id).
    """
    links = [ll for rl in inter.road_links for ll in rl.lane_links]
    for ll in links:
        geometry.check_nondegenerate(ll.points, f"laneLink {ll.id}")
    out: List[CrossPoint] = []
    pairs = []
    for i in range(len(links)):
        for j in range(i + 1, len(links)):
            a, b = links[i], links[j]
            if a.start_lane is b.start_lane:
                continue
            if a.id > b.id:
                a, b = b, a
            pairs.append((a, b))
    pairs.sort(key=lambda p: (p[0].id, p[1].id))
    for a, b in pairs:
        hits = geometry.polyline_intersections(a.points, b.points)
        if not hits:
            continue
        dist_a, dist_b, angle = hits[0]
        out.append(CrossPoint(id=f"{inter.id}_cp{len(out)}",
                              laneLinkA=a.id, laneLinkB=b.id,
                              distA=dist_a, distB=dist_b, angle=angle))
    return out


def validate(net: RoadNet) -> List[Diagnostic]:
    """Value-level checks on a parsed network. Reference integrity is already
    guaranteed by parse_roadnet; this reports bad values without raising."""
    diags: List[Diagnostic] = []

    def err(entity, msg):
        diags.append(Diagnostic("error", entity, msg))

    for lane in net.lanes.values():
        if lane.max_speed <= 0:
            err(lane.id, f"lane maxSpeed must be positive, got {lane.max_speed}")
        if lane.width <= 0:
            err(lane.id, f"lane width must be positive, got {lane.width}")
        if lane.length <= 0:
            err(lane.id, "lane has zero length")
    for road in net.roads.values():
        if road.start_intersection == road.end_intersection:
            err(road.id, "road starts and ends at the same intersection")
    for inter in net.intersections.values():
        if not inter.virtual and not inter.phases:
            err(inter.id, "non-virtual intersection has no signal phases")
        for cp in inter.cross_points:
            lla = net.lane_links[cp.laneLinkA]
            llb = net.lane_links[cp.laneLinkB]
            if not (-1e-6 <= cp.distA <= lla.length + 1e-6):
                err(cp.id, "cross point outside laneLinkA path")
            if not (-1e-6 <= cp.distB <= llb.length + 1e-6):
                err(cp.id, "cross point outside laneLinkB path")
    return diags


def to_document(net: RoadNet) -> dict:
    """Rebuild the JSON document form (inverse of parse_roadnet up to float
    formatting and ignored extras)."""
    def pts(arr):
        return [{"x": float(x), "y": float(y)} for x, y in arr]

    inters = []
    for inter in net.intersections.values():
        item = {
            "id": inter.id,
            "point": {"x": inter.point.x, "y": inter.point.y},
            "virtual": inter.virtual,
            "roadLinks": [
                {
                    "type": rl.kind,
                    "startRoad": rl.start_road.id,
                    "endRoad": rl.end_road.id,
                    "laneLinks": [
                        {"startLaneIndex": ll.start_lane.index,
                         "endLaneIndex": ll.end_lane.index,
                         "points": pts(ll.points)}
                        for ll in rl.lane_links
                    ],
                }
                for rl in inter.road_links
            ],
        }
        if inter.phases or not inter.virtual:
            item["trafficLight"] = {
                "lightphases": [
                    {"availableRoadLinks": list(ph.available_road_links),
                     "time": ph.time}
                    for ph in inter.phases
                ]
            }
        inters.append(item)
    roads = [
        {
            "id": rd.id,
            "startIntersection": rd.start_intersection,
            "endIntersection": rd.end_intersection,
            "points": pts(rd.points),
            "lanes": [{"width": ln.width, "maxSpeed": ln.max_speed}
                      for ln in rd.lanes],
        }
        for rd in net.roads.values()
    ]
    return {"intersections": inters, "roads": roads}
