"""Engine step-loop tests: spawning, motion, signals, counters, reset.

Expected trajectories are hand-computed from the trapezoid update rule
(pos += (vOld + vNew)/2 * dt with +2 m/s^2 acceleration, capped by the
lane limit), so the engine is checked against arithmetic, not itself.
"""

import json
import math
import re

import pytest

from trafficsim.config import EngineConfig
from trafficsim.engine import Engine, create_engine
from trafficsim.errors import (ConfigError, InvariantViolation, RouteError,
                               SemanticError)
from trafficsim.roadnet import parse_roadnet_file

# single 100 m straight road "r", one lane, maxSpeed 10, between two
# virtual endpoints; the simplest network an engine will accept
SINGLE_ROAD_NET = {
    "intersections": [
        {"id": "a", "point": {"x": 0.0, "y": 0.0}, "virtual": True,
         "roads": ["r"], "roadLinks": [], "trafficLight": {"lightphases": []}},
        {"id": "b", "point": {"x": 100.0, "y": 0.0}, "virtual": True,
         "roads": ["r"], "roadLinks": [], "trafficLight": {"lightphases": []}},
    ],
    "roads": [
        {"id": "r", "startIntersection": "a", "endIntersection": "b",
         "points": [{"x": 0.0, "y": 0.0}, {"x": 100.0, "y": 0.0}],
         "lanes": [{"width": 4.0, "maxSpeed": 10.0}]},
    ],
}


@pytest.fixture(scope="module")
def single_road(tmp_path_factory):
    out = tmp_path_factory.mktemp("single_road")
    net = out / "roadnet.json"
    flow = out / "flow.json"
    net.write_text(json.dumps(SINGLE_ROAD_NET))
    flow.write_text("[]")
    return {"roadnet": str(net), "flow": str(flow)}


def _engine(paths, **over):
    cfg = EngineConfig(roadnet_file=paths["roadnet"],
                       flow_file=paths["flow"], **over)
    return Engine(cfg)


# -- construction ------------------------------------------------------------

def test_fresh_engine_at_time_zero(grid1):
    eng = _engine(grid1)
    assert eng.get_current_time() == 0.0
    assert eng.steps == 0
    assert eng.get_vehicle_count() == 0
    assert eng.get_vehicles() == []
    assert eng.get_average_travel_time() == 0.0
    assert all(v == 0 for v in eng.stats.values())
    colors = eng.get_lanelink_colors()
    assert len(colors) == 12
    assert set(colors.values()) <= {"r", "g"}   # no yellow before any switch
    assert "g" in colors.values() and "r" in colors.values()


def test_missing_flow_file(grid1, tmp_path):
    cfg = EngineConfig(roadnet_file=grid1["roadnet"],
                       flow_file=str(tmp_path / "nope.json"))
    with pytest.raises(FileNotFoundError, match="nope.json"):
        Engine(cfg)


def test_bad_thread_count(grid1):
    with pytest.raises(ConfigError, match="threads"):
        EngineConfig(roadnet_file=grid1["roadnet"], flow_file=grid1["flow"],
                     threads=0)


def test_invalid_roadnet_rejected(tmp_path):
    doc = json.loads(json.dumps(SINGLE_ROAD_NET))
    doc["roads"][0]["lanes"][0]["maxSpeed"] = 0.0
    net = tmp_path / "bad_net.json"
    flow = tmp_path / "flow.json"
    net.write_text(json.dumps(doc))
    flow.write_text("[]")
    with pytest.raises(SemanticError):
        _engine({"roadnet": str(net), "flow": str(flow)})


def test_flow_entry_lane_out_of_range(tmp_path):
    net = tmp_path / "roadnet.json"
    flow = tmp_path / "flow.json"
    net.write_text(json.dumps(SINGLE_ROAD_NET))
    flow.write_text(json.dumps(
        [{"vehicle": {}, "route": ["r"], "interval": 10.0, "entryLane": 5}]))
    with pytest.raises(SemanticError, match="entry lane"):
        _engine({"roadnet": str(net), "flow": str(flow)})


# -- stepping an empty world -------------------------------------------------

def test_empty_network_only_time_advances(single_road):
    eng = _engine(single_road)
    for _ in range(5):
        eng.next_step()
    assert eng.get_current_time() == 5.0
    assert eng.steps == 5
    assert eng.get_vehicle_count() == 0
    assert eng.get_lane_vehicle_count() == {"r_0": 0}
    assert eng.get_average_travel_time() == 0.0
    assert all(v == 0 for v in eng.stats.values())


# -- motion of a single pushed vehicle ---------------------------------------

def test_acceleration_from_rest(single_road):
    eng = _engine(single_road)
    vid = eng.push_vehicle({}, ["r"])
    assert vid == "push_0"
    assert eng.get_vehicles() == []          # visible only after a step

    eng.next_step()                          # insertion step: held at rest
    assert eng.get_vehicles() == [vid]
    assert eng.get_vehicle_speed()[vid] == 0.0
    x0 = eng.get_vehicle_poses()[vid]["x"]
    assert x0 == pytest.approx(0.0, abs=1e-12)

    # +2 m/s^2 to the 10 m/s lane cap; trapezoid displacement each step
    want = [(2.0, 1.0), (4.0, 4.0), (6.0, 9.0), (8.0, 16.0),
            (10.0, 25.0), (10.0, 35.0), (10.0, 45.0)]
    for speed, pos in want:
        eng.next_step()
        assert eng.get_vehicle_speed()[vid] == pytest.approx(speed)
        assert eng.get_vehicle_poses()[vid]["x"] == pytest.approx(pos)
        assert eng.get_vehicle_poses()[vid]["heading"] == pytest.approx(0.0)

    # 55, 65, 75, 85, 95, then 105 > 100: leaves during step 14
    while eng.get_vehicle_count():
        eng.next_step()
    assert eng.steps == 14
    assert eng.stats["finished"] == 1
    assert eng.stats["spawned"] == 1
    assert eng.stats["boundaryClamps"] == 0


def test_average_travel_time_running_then_frozen(single_road):
    eng = _engine(single_road)
    eng.push_vehicle({}, ["r"])
    eng.next_step()
    # entered at t=0, still driving at t=1
    assert eng.get_average_travel_time() == pytest.approx(1.0)
    eng.next_step()
    assert eng.get_average_travel_time() == pytest.approx(2.0)
    while eng.get_vehicle_count():
        eng.next_step()
    final = eng.get_average_travel_time()
    assert final == pytest.approx(14.0)
    for _ in range(5):
        eng.next_step()
    assert eng.get_average_travel_time() == final


# -- push validation and queueing --------------------------------------------

def test_push_rejects_broken_routes(grid1):
    eng = _engine(grid1)
    # exit roads end at virtual intersections: reversing a hop disconnects it
    net = parse_roadnet_file(grid1["roadnet"])
    inter = next(i for i in net.intersections.values() if not i.virtual)
    rl = inter.road_links[0]
    with pytest.raises(RouteError, match="push"):
        eng.push_vehicle({}, [rl.end_road.id, rl.start_road.id])
    with pytest.raises(RouteError, match="out of range"):
        eng.push_vehicle({}, [rl.start_road.id], lane=7)
    assert eng.stats["queued"] == 0
    assert eng.get_vehicle_count() == 0


def test_push_queue_fifo_and_conservation(single_road):
    eng = _engine(single_road)
    pushed = [eng.push_vehicle({}, ["r"]) for _ in range(6)]
    assert pushed == [f"push_{i}" for i in range(6)]
    assert eng.stats["queued"] == 6
    assert eng.stats["spawned"] == 6        # counted on acceptance, not entry
    for _ in range(60):
        eng.next_step()
        s = eng.stats
        # every pushed vehicle is queued, driving, or finished at all times
        assert eng.get_vehicle_count() == 6 - s["queued"] - s["finished"]
        order = eng.get_lane_vehicles()["r_0"]
        # front-to-back order must be a consecutive run of push ids
        assert order == pushed[pushed.index(order[0]):][:len(order)] if order \
            else True
    assert eng.stats["finished"] == 6
    assert eng.stats["queued"] == 0
    assert eng.get_vehicle_count() == 0


def test_lane_counts_and_waiting_threshold(single_road):
    eng = _engine(single_road)
    for _ in range(3):
        eng.push_vehicle({}, ["r"])
    while eng.get_vehicle_count() < 3:
        eng.next_step()
    assert eng.get_lane_vehicle_count() == {"r_0": 3}
    assert set(eng.get_vehicles()) == {"push_0", "push_1", "push_2"}
    # waiting means speed below 0.1 m/s, strictly
    slot = next(s for s in range(eng.pool.n) if eng._ids[s] == "push_2")
    eng.pool.speed[slot] = 0.05
    assert eng.get_lane_waiting_vehicle_count()["r_0"] == 1
    eng.pool.speed[slot] = 0.1
    assert eng.get_lane_waiting_vehicle_count()["r_0"] == 0


# -- signals -----------------------------------------------------------------

def _phase_rl_sets(net):
    inter = next(i for i in net.intersections.values() if not i.virtual)
    return inter.id, [set(ph.available_road_links) for ph in inter.phases]


def _rl_index(lanelink_id):
    return int(re.search(r"_rl(\d+)_ll\d+$", lanelink_id).group(1))


def test_set_tl_phase_yellow_window(grid1, grid1_net):
    eng = _engine(grid1)
    inter, phases = _phase_rl_sets(grid1_net)
    p0, p1 = phases[0], phases[1]

    eng.set_tl_phase(inter, 1)
    for ll, c in eng.get_lanelink_colors().items():
        j = _rl_index(ll)
        if j in p0 & p1:
            assert c == "g"      # kept movements stay green through yellow
        elif j in p0:
            assert c == "y"      # losing movements get the yellow window
        else:
            assert c == "r"      # gaining movements stay red until the switch
    for _ in range(3):           # yellowTime 3 s at 1 s steps
        eng.next_step()
    for ll, c in eng.get_lanelink_colors().items():
        assert c == ("g" if _rl_index(ll) in p1 else "r")


def test_set_tl_phase_noop_and_cancel(grid1, grid1_net):
    eng = _engine(grid1)
    inter, _ = _phase_rl_sets(grid1_net)
    before = eng.get_lanelink_colors()
    eng.set_tl_phase(inter, 0)               # already current: nothing happens
    assert eng.get_lanelink_colors() == before
    eng.set_tl_phase(inter, 1)               # pending, yellow showing
    assert "y" in eng.get_lanelink_colors().values()
    eng.set_tl_phase(inter, 0)               # re-request current: cancels
    assert eng.get_lanelink_colors() == before
    eng.set_tl_phase(inter, 1, force_immediate=True)
    assert "y" not in eng.get_lanelink_colors().values()
    assert eng.get_lanelink_colors() != before


def test_set_tl_phase_bad_arguments(grid1, grid1_net):
    eng = _engine(grid1)
    inter, phases = _phase_rl_sets(grid1_net)
    with pytest.raises(KeyError):
        eng.set_tl_phase("no_such_intersection", 0)
    with pytest.raises(IndexError, match="out of range"):
        eng.set_tl_phase(inter, len(phases))


def test_phase_durations_roundtrip_and_autocycle(grid1, grid1_net):
    eng = _engine(grid1, rl_traffic_light=False)
    inter, phases = _phase_rl_sets(grid1_net)
    n = len(phases)
    assert len(eng.get_phase_durations(inter)) == n
    with pytest.raises(ValueError):
        eng.set_phase_durations(inter, [5.0] * (n + 1))
    with pytest.raises(ValueError):
        eng.set_phase_durations(inter, [5.0] * (n - 1) + [0.0])
    eng.set_phase_durations(inter, [2.0] * n)
    assert eng.get_phase_durations(inter) == [2.0] * n
    seen = set()
    for _ in range(5 * n):
        eng.next_step()
        greens = frozenset(ll for ll, c in eng.get_lanelink_colors().items()
                           if c == "g")
        seen.add(greens)
    assert len(seen) >= 3        # the controller cycles on its own


# -- red light queueing ------------------------------------------------------

def test_red_queue_forms_standing_platoon(grid1, grid1_net):
    # rl control on and never commanded: phase 0 holds, cross flows queue
    eng = _engine(grid1)
    inter, phases = _phase_rl_sets(grid1_net)
    # flows are straight-only, so queueing needs a red *straight* movement
    red_lane = next(
        rl.lane_links[0].start_lane.id
        for j, rl in enumerate(
            next(i for i in grid1_net.intersections.values() if not i.virtual)
            .road_links)
        if j not in phases[0] and rl.kind == "go_straight")
    for _ in range(130):
        eng.next_step()
    waiting = eng.get_lane_waiting_vehicle_count()[red_lane]
    assert waiting >= 3
    # the planner stops everyone before the line; the commit-time red
    # backstop should never need to fire
    assert eng.stats["redLineHolds"] == 0
    assert eng.stats["finished"] > 0         # the green direction flows

    ids = eng.get_lane_vehicles()[red_lane]
    poses = eng.get_vehicle_poses()
    speeds = eng.get_vehicle_speed()
    for front, back in zip(ids, ids[1:]):
        if speeds[front] > 0.1 or speeds[back] > 0.1:
            continue
        dx = poses[front]["x"] - poses[back]["x"]
        dy = poses[front]["y"] - poses[back]["y"]
        gap = math.hypot(dx, dy) - 5.0       # bumper gap, 5 m bodies
        # standing spacing settles near the 2.5 m minGap; the commit step
        # can undershoot by at most dec*dt^2/8
        assert 1.9 <= gap <= 4.5


# -- volume scaling ----------------------------------------------------------

def test_scale_volume_doubles_spawns_and_reset_restores(grid1):
    eng = _engine(grid1)
    for _ in range(60):
        eng.next_step()
    base = eng.stats["spawned"]
    assert base == 20            # 4 flows, 12 s interval, dues at 0..48

    eng.reset()
    eng.scale_volume(2.0)
    for _ in range(60):
        eng.next_step()
    assert eng.stats["spawned"] == 40

    eng.reset()                  # reset drops the scaling
    for _ in range(60):
        eng.next_step()
    assert eng.stats["spawned"] == base

    with pytest.raises(ValueError):
        eng.scale_volume(0.0)


# -- reset and determinism ---------------------------------------------------

def _drive(eng, inter, n_phases, steps=40):
    for k in range(steps):
        if k % 10 == 0:
            eng.set_tl_phase(inter, (k // 10) % n_phases)
        eng.next_step()
    return (list(eng.replay_lines), dict(eng.stats), eng.get_vehicle_poses())


def test_reset_reproduces_identical_run(grid1, grid1_net, tmp_path):
    cfg = EngineConfig(roadnet_file=grid1["roadnet"], flow_file=grid1["flow"],
                       save_replay=True,
                       replay_file=str(tmp_path / "replay.txt"),
                       roadnet_log_file=str(tmp_path / "net.json"))
    inter, phases = _phase_rl_sets(grid1_net)
    with create_engine(cfg) as eng:
        first = _drive(eng, inter, len(phases))
        assert len(first[0]) == 40
        eng.reset()
        assert eng.get_current_time() == 0.0
        assert eng.replay_lines == []
        assert all(v == 0 for v in eng.stats.values())
        second = _drive(eng, inter, len(phases))
        assert second == first
        eng.reset(keep_rng=True)             # model draws no randomness
        third = _drive(eng, inter, len(phases))
        assert third == first
    # the log file keeps accumulating across resets; memory does not
    lines = (tmp_path / "replay.txt").read_text().splitlines()
    assert lines == first[0] * 3
    json.loads((tmp_path / "net.json").read_text())


def test_thread_count_does_not_change_results(grid1, grid1_net):
    inter, phases = _phase_rl_sets(grid1_net)
    runs = []
    for threads in (1, 2):
        cfg = EngineConfig(roadnet_file=grid1["roadnet"],
                           flow_file=grid1["flow"], threads=threads,
                           save_replay=True)
        runs.append(_drive(Engine(cfg), inter, len(phases), steps=50))
    assert runs[0] == runs[1]


def test_observations_do_not_mutate_state(grid1):
    eng = _engine(grid1)
    for _ in range(20):
        eng.next_step()
    def snap(e):
        return (e.get_current_time(), dict(e.stats), e.get_vehicles(),
                e.get_lane_vehicle_count(), e.get_lane_waiting_vehicle_count(),
                e.get_lane_vehicles(), e.get_vehicle_speed(),
                e.get_vehicle_poses(), e.get_lanelink_colors(),
                e.get_average_travel_time())
    assert snap(eng) == snap(eng)


# -- invariant auditing ------------------------------------------------------

def _two_on_lane(paths, debug):
    cfg = EngineConfig(roadnet_file=paths["roadnet"], flow_file=paths["flow"])
    eng = Engine(cfg, debug=debug)
    eng.push_vehicle({}, ["r"])
    eng.push_vehicle({}, ["r"])
    while eng.get_vehicle_count() < 2:
        eng.next_step()
    slots = {eng._ids[s]: s for s in range(eng.pool.n)}
    # self-referential back link: breaks the lane list structure
    eng.pool.prv[slots["push_1"]] = slots["push_1"]
    return eng


def test_audit_raises_in_debug_mode(single_road):
    eng = _two_on_lane(single_road, debug=True)
    with pytest.raises(InvariantViolation, match="step"):
        eng.next_step()


def test_audit_counts_failures_outside_debug(single_road):
    eng = _two_on_lane(single_road, debug=False)
    eng.next_step()
    assert eng.stats["auditFailures"] >= 1


def test_close_is_idempotent(single_road):
    with create_engine(EngineConfig(roadnet_file=single_road["roadnet"],
                                    flow_file=single_road["flow"])) as eng:
        eng.next_step()
    eng.close()
