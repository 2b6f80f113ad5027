"""Synthetic grid scenarios: an (rows x cols) lattice of signalized
intersections ringed by virtual border nodes, plus matching flow and config
documents. Used by the gen-grid CLI command and by benchmarks.

Naming scheme: node (i, j) sits at (i*road_length, j*road_length) with
internal nodes at 1 <= i <= cols, 1 <= j <= rows. road_{i}_{j}_{d} leaves node
(i, j) heading d where d 0=+x, 1=+y, 2=-x, 3=-y.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from . import geometry, roadnet
from .kinematics import VehicleParams

DIRS = ((1, 0), (0, 1), (-1, 0), (0, -1))


@dataclass
class GridParams:
    road_length: float = 300.0
    lanes_per_road: int = 1
    lane_width: float = 4.0
    max_speed: float = 16.67
    green_time: float = 30.0     # straight phases
    left_time: float = 15.0      # protected left phases
    all_green: bool = False      # one permissive phase, for unsignalized stress


def intersection_name(i: int, j: int) -> str:
    return f"intersection_{i}_{j}"


def road_name(i: int, j: int, d: int) -> str:
    return f"road_{i}_{j}_{d}"


def _nodes(rows: int, cols: int) -> Dict[Tuple[int, int], bool]:
    """Map node -> is_internal. Border nodes exist only across from an
    internal node (no corners)."""
    nodes = {}
    for i in range(1, cols + 1):
        for j in range(1, rows + 1):
            nodes[(i, j)] = True
    for j in range(1, rows + 1):
        nodes[(0, j)] = False
        nodes[(cols + 1, j)] = False
    for i in range(1, cols + 1):
        nodes[(i, 0)] = False
        nodes[(i, rows + 1)] = False
    return nodes


def _node_order(rows: int, cols: int):
    nodes = _nodes(rows, cols)
    return sorted(nodes), nodes


# approach order (W, E, N, S) x movement order (straight, left, right) gives
# roadLink indices 0..11; rights stay green in every phase
_MOVES = {
    # approach heading: straight, left, right exit directions
    0: (0, 1, 3),   # arriving eastbound
    2: (2, 3, 1),   # arriving westbound
    3: (3, 0, 2),   # arriving southbound
    1: (1, 2, 0),   # arriving northbound
}
_APPROACHES = (0, 2, 3, 1)  # from W, from E, from N, from S
_KINDS = (roadnet.STRAIGHT, roadnet.TURN_LEFT, roadnet.TURN_RIGHT)


def _phase_plan(p: GridParams) -> List[dict]:
    if p.all_green:
        return [{"availableRoadLinks": list(range(12)), "time": 3600.0}]
    rights = [2, 5, 8, 11]
    groups = [([0, 3], p.green_time),    # E-W straight
              ([1, 4], p.left_time),     # E-W left
              ([6, 9], p.green_time),    # N-S straight
              ([7, 10], p.left_time)]    # N-S left
    return [{"availableRoadLinks": sorted(g + rights), "time": t}
            for g, t in groups]


def build_grid_document(rows: int, cols: int,
                        params: Optional[GridParams] = None) -> dict:
    if rows < 1 or cols < 1:
        raise ValueError("grid needs rows >= 1 and cols >= 1")
    p = params or GridParams()
    L = p.road_length
    # carve lane area plus a margin out of each road end at internal nodes
    R = p.lanes_per_road * p.lane_width + 6.0
    order, nodes = _node_order(rows, cols)

    roads = []
    road_ids = set()
    for (i, j) in order:
        for d, (dx, dy) in enumerate(DIRS):
            ti, tj = i + dx, j + dy
            if (ti, tj) not in nodes:
                continue
            if not (nodes[(i, j)] or nodes[(ti, tj)]):
                continue
            x0, y0 = i * L, j * L
            x1, y1 = ti * L, tj * L
            if nodes[(i, j)]:
                x0, y0 = x0 + dx * R, y0 + dy * R
            if nodes[(ti, tj)]:
                x1, y1 = x1 - dx * R, y1 - dy * R
            rid = road_name(i, j, d)
            roads.append({
                "id": rid,
                "startIntersection": intersection_name(i, j),
                "endIntersection": intersection_name(ti, tj),
                "points": [{"x": x0, "y": y0}, {"x": x1, "y": y1}],
                "lanes": [{"width": p.lane_width, "maxSpeed": p.max_speed}
                          for _ in range(p.lanes_per_road)],
            })
            road_ids.add(rid)

    def lane_end(rid: str, idx: int, at_start: bool):
        rd = next(r for r in roads if r["id"] == rid)
        (ax, ay), (bx, by) = ((q["x"], q["y"]) for q in rd["points"])
        ux, uy = bx - ax, by - ay
        n = math.hypot(ux, uy)
        ux, uy = ux / n, uy / n
        off = (idx + 0.5) * p.lane_width
        # right-hand normal of the travel direction
        nx, ny = uy, -ux
        x, y = (ax, ay) if at_start else (bx, by)
        return (x + nx * off, y + ny * off), (ux, uy)

    inters = []
    for (i, j) in order:
        internal = nodes[(i, j)]
        item = {
            "id": intersection_name(i, j),
            "point": {"x": i * L, "y": j * L},
            "virtual": not internal,
            "roadLinks": [],
        }
        if internal:
            for ad in _APPROACHES:
                # approach ad arrives from node (i,j) - dir(ad)
                fx, fy = i - DIRS[ad][0], j - DIRS[ad][1]
                start = road_name(fx, fy, ad)
                for kind, out_dir in zip(_KINDS, _MOVES[ad]):
                    end = road_name(i, j, out_dir)
                    if start not in road_ids or end not in road_ids:
                        continue
                    if kind == roadnet.STRAIGHT:
                        pairs = [(k, k) for k in range(p.lanes_per_road)]
                    elif kind == roadnet.TURN_LEFT:
                        pairs = [(0, 0)]
                    else:
                        pairs = [(p.lanes_per_road - 1, p.lanes_per_road - 1)]
                    lls = []
                    for si, ei in pairs:
                        (sx, sy), sdir = lane_end(start, si, at_start=False)
                        (ex, ey), edir = lane_end(end, ei, at_start=True)
                        if kind == roadnet.STRAIGHT:
                            pts = [(sx, sy), (ex, ey)]
                        else:
                            curve = geometry.turn_curve((sx, sy), sdir,
                                                        (ex, ey), edir)
                            pts = [(float(x), float(y)) for x, y in curve]
                        lls.append({"startLaneIndex": si, "endLaneIndex": ei,
                                    "points": [{"x": x, "y": y} for x, y in pts]})
                    item["roadLinks"].append({
                        "type": kind, "startRoad": start, "endRoad": end,
                        "laneLinks": lls,
                    })
            item["trafficLight"] = {"lightphases": _phase_plan(p)}
        inters.append(item)
    return {"intersections": inters, "roads": roads}


def build_grid(rows: int, cols: int,
               params: Optional[GridParams] = None) -> roadnet.RoadNet:
    doc = build_grid_document(rows, cols, params)
    return roadnet.parse_roadnet(json.dumps(doc))


def _straight_route(rows: int, cols: int, entry: Tuple[int, int]) -> List[str]:
    i, j = entry
    if i == 0:
        return [road_name(k, j, 0) for k in range(0, cols + 1)]
    if i == cols + 1:
        return [road_name(k, j, 2) for k in range(cols + 1, 0, -1)]
    if j == 0:
        return [road_name(i, k, 1) for k in range(0, rows + 1)]
    return [road_name(i, k, 3) for k in range(rows + 1, 0, -1)]


def _turn_route(rows: int, cols: int, entry: Tuple[int, int],
                left: bool) -> List[str]:
    """Enter, turn at the first intersection, run straight to the border."""
    i, j = entry
    if i == 0:
        head, ti, tj = 0, 1, j
    elif i == cols + 1:
        head, ti, tj = 2, cols, j
    elif j == 0:
        head, ti, tj = 1, i, 1
    else:
        head, ti, tj = 3, i, rows
    out = _MOVES[head][1 if left else 2]
    route = [road_name(i, j, head)]
    k, l = ti, tj
    while True:
        route.append(road_name(k, l, out))
        k += DIRS[out][0]
        l += DIRS[out][1]
        if k < 1 or k > cols or l < 1 or l > rows:
            return route


def vehicle_template(params: Optional[VehicleParams] = None) -> dict:
    v = params or VehicleParams()
    return {
        "length": v.length, "width": v.width,
        "maxPosAcc": v.maxPosAcc, "maxNegAcc": v.maxNegAcc,
        "usualPosAcc": v.usualPosAcc, "usualNegAcc": v.usualNegAcc,
        "minGap": v.minGap, "maxSpeed": v.maxSpeed,
        "headwayTime": v.headwayTime,
    }


def build_flow_document(rows: int, cols: int, volume: float,
                        turn_volume: float = 0.0,
                        start_time: float = 0.0, end_time: float = -1.0,
                        vehicle: Optional[dict] = None) -> list:
    """One straight-through flow per border entry at `volume` vehicles/hour,
    plus optional left and right turn flows at `turn_volume` each."""
    if volume <= 0:
        raise ValueError("volume must be positive")
    veh = vehicle or vehicle_template()
    order, nodes = _node_order(rows, cols)
    entries = [n for n in order if not nodes[n]]
    flows = []

    def add(route, vol):
        flows.append({
            "vehicle": dict(veh),
            "route": route,
            "interval": 3600.0 / vol,
            "startTime": start_time,
            "endTime": end_time,
        })

    for entry in entries:
        add(_straight_route(rows, cols, entry), volume)
        if turn_volume > 0:
            add(_turn_route(rows, cols, entry, left=True), turn_volume)
            add(_turn_route(rows, cols, entry, left=False), turn_volume)
    return flows


def build_config_document(dir_path: str, *,
                          roadnet_file: str = "roadnet.json",
                          flow_file: str = "flow.json",
                          interval: float = 1.0, seed: int = 0,
                          threads: int = 1, lane_change: bool = False,
                          rl_traffic_light: bool = False,
                          save_replay: bool = False) -> dict:
    if dir_path and not dir_path.endswith(os.sep):
        dir_path = dir_path + os.sep
    return {
        "interval": interval,
        "seed": seed,
        "dir": dir_path,
        "roadnetFile": roadnet_file,
        "flowFile": flow_file,
        "rlTrafficLight": rl_traffic_light,
        "laneChange": lane_change,
        "saveReplay": save_replay,
        "roadnetLogFile": "roadnet.log.json",
        "replayLogFile": "replay.txt",
        "threads": threads,
    }


def write_grid_scenario(out_dir: str, rows: int, cols: int, volume: float,
                        params: Optional[GridParams] = None,
                        turn_volume: float = 0.0, seed: int = 0,
                        threads: int = 1,
                        save_replay: bool = False) -> Dict[str, str]:
    """Write roadnet.json, flow.json and config.json into out_dir."""
    p = params or GridParams()
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "roadnet": os.path.join(out_dir, "roadnet.json"),
        "flow": os.path.join(out_dir, "flow.json"),
        "config": os.path.join(out_dir, "config.json"),
    }
    with open(paths["roadnet"], "w", encoding="utf-8") as f:
        json.dump(build_grid_document(rows, cols, p), f)
    with open(paths["flow"], "w", encoding="utf-8") as f:
        json.dump(build_flow_document(rows, cols, volume, turn_volume), f,
                  indent=2)
    cfg = build_config_document(out_dir, seed=seed, threads=threads,
                                lane_change=p.lanes_per_road > 1,
                                save_replay=save_replay)
    with open(paths["config"], "w", encoding="utf-8") as f:
        json.dump(cfg, f, indent=2)
    return paths
