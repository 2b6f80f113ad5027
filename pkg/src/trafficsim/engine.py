"""Simulation engine: spawn, signals, parallel plan, serial commit, record.

The step pipeline:

    1. spawn vehicles due in [now, now+dt) (new arrivals hold one step)
    2. advance signal timers and yellow transitions
    3. PLAN: rebuild cross-point claims, then per-vehicle speed planning and
       lane-change intents against the committed snapshot (parallel)
    4. COMMIT: apply speeds, advance, migrate across boundaries, finish and
       begin lane changes, in one fixed global order (serial)
    5. rebuild segment registries
    6. append a replay record; time += interval

Thread count can change the schedule of step 3 but not its writes, so replay
bytes are identical for any `threads` setting.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import fields, replace

import numpy as np

from . import jitsetup
from .config import EngineConfig, load_config
from .constants import WAITING_SPEED
from .demand import (LaneTail, check_route, due_spawns, insertion_speed,
                     parse_flow_file)
from .errors import InvariantViolation, RouteError, SemanticError
from .kernels import (GREEN, NO_VEH, RED, YELLOW, NetArrays, VehPool,
                      _choose_link, _list_insert, audit_kernel, claims_kernel,
                      commit_kernel, plan_kernel, poses_kernel,
                      segments_kernel)
from .kinematics import VehicleParams
from .replay import COLOR_CHARS, format_record, roadnet_geometry
from .roadnet import parse_roadnet_file, validate

_AUDIT_MESSAGES = {
    1: "negative gap between consecutive vehicles",
    2: "position outside location bounds",
    3: "speed outside legal range",
    4: "corrupt location list links",
    5: "dead vehicle still listed",
    6: "vehicle listed on wrong location",
    7: "listed vehicle count does not match alive count",
}


class _Queued:
    __slots__ = ("vid", "params", "route_off", "route_len", "start_still")

    def __init__(self, vid, params, route_off, route_len, start_still):
        self.vid = vid
        self.params = params
        self.route_off = route_off
        self.route_len = route_len
        self.start_still = start_still


class Engine:
    """Exclusive-access simulation engine.

    `config` is an EngineConfig or a path to a config file. With debug=True
    every step is audited and violations raise InvariantViolation; otherwise
    they are counted and the run continues.
    """

    def __init__(self, config, debug: bool = False):
        if not isinstance(config, EngineConfig):
            config = load_config(config)
        self.config = config
        self._debug = debug
        jitsetup.set_threads(config.threads)

        self.net = parse_roadnet_file(config.roadnet_file,
                                      config.segment_length)
        problems = [d for d in validate(self.net) if d.severity == "error"]
        if problems:
            raise SemanticError("; ".join(
                f"{d.entity}: {d.message}" for d in problems))
        self.arrays = NetArrays(self.net, config.segment_length)
        self.flows = parse_flow_file(config.flow_file, self.net)
        self._base_flows = list(self.flows)
        self._base_phase_time = self.arrays.phase_time.copy()

        a = self.arrays
        for f in self.flows:
            r = a.road_index[f.route[0]]
            n_entry = int(a.road_n_lanes[r])
            if f.entry_lane is not None and not 0 <= f.entry_lane < n_entry:
                raise SemanticError(
                    f"flow {f.index}: entry lane {f.entry_lane} out of range "
                    f"for road {f.route[0]!r}")

        self._routes_buf = np.zeros(256, dtype=np.int64)
        self._routes_len = 0
        self._flow_routes = []
        for f in self.flows:
            idxs = [a.road_index[rid] for rid in f.route]
            self._flow_routes.append(self._add_route(idxs))

        self._rng = np.random.default_rng(config.seed)
        self._replay_fh = None
        if config.save_replay and config.replay_file:
            self._replay_fh = open(config.replay_file, "w",
                                   encoding="utf-8")
        if config.save_replay and config.roadnet_log_file:
            with open(config.roadnet_log_file, "w", encoding="utf-8") as fh:
                json.dump(roadnet_geometry(self.net), fh)

        self._reset_world()

    # -- construction helpers ------------------------------------------------

    def _add_route(self, idxs):
        need = self._routes_len + len(idxs)
        if need > self._routes_buf.size:
            cap = self._routes_buf.size
            while cap < need:
                cap *= 2
            grown = np.zeros(cap, dtype=np.int64)
            grown[:self._routes_len] = self._routes_buf[:self._routes_len]
            self._routes_buf = grown
        off = self._routes_len
        self._routes_buf[off:need] = idxs
        self._routes_len = need
        return off, len(idxs)

    def _reset_world(self):
        a = self.arrays
        self.flows = list(self._base_flows)
        a.phase_time[:] = self._base_phase_time
        self.pool = VehPool(a.n_lanes + a.n_links, a.n_segments)
        self._ids = []
        self._slots = {}
        self._queues = {}
        self._steps = 0
        self._spawned_total = 0
        self._finished = 0
        self._duration_sum = 0.0
        self._boundary_clamps = 0
        self._red_holds = 0
        self._sentinel_warnings = 0
        self._deadlock_creeps = 0
        self._lc_begun = 0
        self._lc_finished = 0
        self._audit_failures = 0
        self._push_count = 0
        self._flow_ordinal = [0] * len(self.flows)
        self._wmax = 0.0
        self.replay_lines = []
        n_cp = max(1, a.n_cp)
        self._cp_rank = np.zeros(n_cp, dtype=np.int64)
        self._cp_eta = np.zeros(n_cp)
        self._cp_vid = np.zeros(n_cp, dtype=np.int64)
        self._cur_phase = np.zeros(a.n_inter, dtype=np.int64)
        self._pending = np.full(a.n_inter, -1, dtype=np.int64)
        self._yellow_left = np.zeros(a.n_inter)
        self._time_in_phase = np.zeros(a.n_inter)
        self._rl_color = np.zeros(max(1, a.n_roadlinks), dtype=np.int64)
        self._recompute_colors()

    # -- signals -------------------------------------------------------------

    def _recompute_colors(self):
        a = self.arrays
        col = self._rl_color
        col[:a.n_roadlinks] = RED
        for i in range(a.n_inter):
            p0 = a.inter_ph_off[i]
            p1 = a.inter_ph_off[i + 1]
            if p0 == p1:
                # unsignalized: permanently green, arbitration still applies
                col[a.inter_rl_off[i]:a.inter_rl_off[i + 1]] = GREEN
                continue
            cur = p0 + self._cur_phase[i]
            members = a.phase_rl[a.phase_rl_off[cur]:a.phase_rl_off[cur + 1]]
            if self._pending[i] >= 0:
                nxt = p0 + self._pending[i]
                keep = set(a.phase_rl[
                    a.phase_rl_off[nxt]:a.phase_rl_off[nxt + 1]].tolist())
                for x in members:
                    col[x] = GREEN if int(x) in keep else YELLOW
            else:
                col[members] = GREEN

    def _advance_signals(self, dt):
        a = self.arrays
        dirty = False
        for i in range(a.n_inter):
            p0 = a.inter_ph_off[i]
            n_ph = a.inter_ph_off[i + 1] - p0
            if n_ph == 0:
                continue
            if self._pending[i] >= 0:
                self._yellow_left[i] -= dt
                if self._yellow_left[i] <= 1e-9:
                    self._cur_phase[i] = self._pending[i]
                    self._pending[i] = -1
                    self._time_in_phase[i] = 0.0
                    dirty = True
            elif not self.config.rl_traffic_light:
                self._time_in_phase[i] += dt
                if (n_ph > 1 and self._time_in_phase[i]
                        >= a.phase_time[p0 + self._cur_phase[i]] - 1e-9):
                    # automatic switches honor the same yellow window as
                    # commanded ones, so approach braking stays feasible
                    nxt = (self._cur_phase[i] + 1) % n_ph
                    if self.config.yellow_time <= 0:
                        self._cur_phase[i] = nxt
                        self._time_in_phase[i] = 0.0
                    else:
                        self._pending[i] = nxt
                        self._yellow_left[i] = self.config.yellow_time
                    dirty = True
        if dirty:
            self._recompute_colors()

    def set_tl_phase(self, intersection_id: str, phase_index: int,
                     force_immediate: bool = False):
        """Command a phase switch; roadlinks losing green hold yellow for
        yellowTime before the new phase activates. Equal phase is a no-op."""
        a = self.arrays
        i = a.inter_index[intersection_id]
        n_ph = int(a.inter_ph_off[i + 1] - a.inter_ph_off[i])
        if not 0 <= phase_index < n_ph:
            raise IndexError(
                f"phase {phase_index} out of range for {intersection_id} "
                f"({n_ph} phases)")
        if phase_index == self._pending[i]:
            return
        if phase_index == self._cur_phase[i]:
            if self._pending[i] >= 0:    # cancel an in-flight switch
                self._pending[i] = -1
                self._yellow_left[i] = 0.0
                self._recompute_colors()
            return
        if force_immediate or self.config.yellow_time <= 0:
            self._cur_phase[i] = phase_index
            self._pending[i] = -1
            self._time_in_phase[i] = 0.0
        else:
            self._pending[i] = phase_index
            self._yellow_left[i] = self.config.yellow_time
        self._recompute_colors()

    def get_phase_durations(self, intersection_id: str):
        a = self.arrays
        i = a.inter_index[intersection_id]
        p0, p1 = int(a.inter_ph_off[i]), int(a.inter_ph_off[i + 1])
        return [float(x) for x in a.phase_time[p0:p1]]

    def set_phase_durations(self, intersection_id: str, durations):
        """Replace an intersection's auto-advance phase durations (seconds).
        Takes effect from the current phase's next expiry; reset() restores
        the scenario's values."""
        a = self.arrays
        i = a.inter_index[intersection_id]
        p0, p1 = int(a.inter_ph_off[i]), int(a.inter_ph_off[i + 1])
        if len(durations) != p1 - p0:
            raise ValueError(
                f"{intersection_id} has {p1 - p0} phases, "
                f"got {len(durations)} durations")
        if any(d <= 0 for d in durations):
            raise ValueError("phase durations must be positive")
        a.phase_time[p0:p1] = durations

    # -- demand --------------------------------------------------------------

    def _enqueue(self, vid, params, route_off, route_len, entry_lane,
                 start_still):
        q = self._queues.setdefault(entry_lane, deque())
        q.append(_Queued(vid, params, route_off, route_len, start_still))
        self._spawned_total += 1

    def _spawn(self, now, dt):
        a = self.arrays
        # window end is the next step's `now` float, so step windows
        # partition the schedule exactly (no drop or double at any dt)
        until = (self._steps + 1) * dt
        for req in due_spawns(self.flows, now, until):
            f = req.flow
            # the monotone per-flow counter (not the schedule ordinal) names
            # vehicles and rotates entry lanes, so live re-scheduling can
            # never reuse an id
            ordinal = self._flow_ordinal[f.index]
            r = a.road_index[f.route[0]]
            n_entry = int(a.road_n_lanes[r])
            li = f.entry_lane if f.entry_lane is not None \
                else ordinal % n_entry
            lane = int(a.road_first_lane[r]) + li
            off, ln = self._flow_routes[f.index]
            self._enqueue(f"flow_{f.index}_{ordinal}", f.vehicle,
                          off, ln, lane, False)
            self._flow_ordinal[f.index] = ordinal + 1
        for lane in sorted(self._queues):
            q = self._queues[lane]
            while q:
                if not self._try_insert(lane, q[0], now, dt):
                    break
                q.popleft()

    def _try_insert(self, lane, item, now, dt):
        a, p = self.arrays, self.pool
        tail_slot = int(p.loc_tail[lane])
        tail = None
        if tail_slot != NO_VEH:
            tail = LaneTail(float(p.pos[tail_slot]),
                            float(p.length[tail_slot]),
                            float(p.speed[tail_slot]),
                            float(p.max_neg_acc[tail_slot]))
        v0 = insertion_speed(item.params, tail, float(a.loc_limit[lane]), dt)
        if v0 is None:
            return False
        if item.start_still:
            v0 = 0.0
        s = p.alloc()
        vp = item.params
        p.pos[s] = 0.0
        p.speed[s] = v0
        p.length[s] = vp.length
        p.width[s] = vp.width
        p.max_pos_acc[s] = vp.maxPosAcc
        p.max_neg_acc[s] = vp.maxNegAcc
        p.usual_pos_acc[s] = vp.usualPosAcc
        p.usual_neg_acc[s] = vp.usualNegAcc
        p.min_gap[s] = vp.minGap
        p.max_speed[s] = vp.maxSpeed
        p.headway_time[s] = vp.headwayTime
        p.enter_time[s] = now
        p.lc_progress[s] = 0.0
        p.lc_cool_until[s] = 0.0
        p.blocked_time[s] = 0.0
        p.plan_speed[s] = v0
        p.loc[s] = lane
        p.route_off[s] = item.route_off
        p.route_len[s] = item.route_len
        p.route_pos[s] = 0
        p.next_ll[s] = _choose_link(lane, self._routes_buf,
                                    item.route_off, 0, item.route_len,
                                    a.lane_out_off, a.lane_out_ll,
                                    a.ll_end_road, a.n_lanes)
        p.lc_partner[s] = NO_VEH
        p.lc_want[s] = -1
        p.alive[s] = 1
        p.shadow[s] = 0
        p.hold[s] = 1
        p.warn[s] = 0
        _list_insert(s, lane, 0.0, p.loc_head, p.loc_tail, p.prv, p.nxt,
                     p.pos)
        self._ids.append(item.vid)
        self._slots[item.vid] = s
        if vp.width > self._wmax:
            self._wmax = vp.width
        return True

    def push_vehicle(self, params, route, lane: int = 0) -> str:
        """Enqueue one vehicle for insertion at the route's first road.
        Joins the same per-lane queue demand spawning uses; the id is
        returned immediately, insertion happens when space permits."""
        if isinstance(params, dict):
            allowed = {f.name for f in fields(VehicleParams)}
            params = replace(VehicleParams(),
                             **{k: float(v) for k, v in params.items()
                                if k in allowed})
        route = tuple(route)
        check_route(route, self.net, "push")
        a = self.arrays
        r = a.road_index[route[0]]
        if not 0 <= lane < int(a.road_n_lanes[r]):
            raise RouteError(
                f"push: lane {lane} out of range for road {route[0]!r}")
        off, ln = self._add_route([a.road_index[rid] for rid in route])
        vid = f"push_{self._push_count}"
        self._push_count += 1
        self._enqueue(vid, params, off, ln,
                      int(a.road_first_lane[r]) + lane, True)
        return vid

    # -- stepping ------------------------------------------------------------

    def next_step(self):
        cfg = self.config
        dt = cfg.step_interval
        now = self._steps * dt
        a = self.arrays

        self._spawn(now, dt)
        self._advance_signals(dt)

        p = self.pool
        n = p.n
        if n > 0:
            claims_kernel(
                a.n_inter, dt, a.inter_cp_off, a.inter_ll_off, a.inter_ll,
                a.ll_cp_off, a.ll_cp_idx, a.ll_cp_dist, a.cp_sin, a.ll_prio,
                a.ll_start_lane, a.loc_len, a.n_lanes, a.ll_rl,
                self._rl_color, p.loc_head, p.nxt, p.pos, p.speed, p.length,
                p.next_ll, p.shadow, p.max_neg_acc, self._wmax,
                self._cp_rank, self._cp_eta, self._cp_vid)
            plan_kernel(
                n, dt, now, a.n_lanes,
                1 if cfg.lane_change else 0, a.seg_len,
                a.loc_len, a.loc_limit, a.lane_out_off, a.lane_out_ll,
                a.ll_end_lane, a.ll_end_road, a.ll_rl, self._rl_color,
                a.ll_cp_off, a.ll_cp_idx, a.ll_cp_dist, a.cp_sin,
                self._cp_vid,
                a.lane_seg_off, a.lane_nseg, p.seg_head,
                a.road_of_lane, a.lane_in_road, a.road_first_lane,
                a.road_n_lanes,
                self._routes_buf, p.route_off, p.route_len, p.route_pos,
                p.loc_head, p.loc_tail, p.prv, p.nxt,
                p.alive, p.shadow, p.hold, p.loc, p.pos, p.speed,
                p.length, p.width, p.max_pos_acc, p.max_neg_acc,
                p.usual_pos_acc, p.usual_neg_acc, p.min_gap, p.max_speed,
                p.headway_time, p.next_ll, p.lc_partner, p.lc_progress,
                p.lc_cool_until, p.blocked_time,
                p.plan_speed, p.lc_want, p.warn)
            p.ensure(n + int(np.count_nonzero(p.lc_want[:n] >= 0)))
            p.next_free[0] = n
            out_i = np.zeros(5, dtype=np.int64)
            out_f = np.zeros(1)
            commit_kernel(
                n, dt, now, a.n_lanes,
                a.loc_len, a.lane_out_off, a.lane_out_ll, a.ll_end_lane,
                a.ll_end_road, a.ll_rl, self._rl_color,
                self._routes_buf, p.route_off, p.route_len, p.route_pos,
                p.loc_head, p.loc_tail, p.prv, p.nxt,
                p.alive, p.shadow, p.hold, p.loc, p.pos, p.speed,
                p.length, p.width, p.max_pos_acc, p.max_neg_acc,
                p.usual_pos_acc, p.usual_neg_acc, p.min_gap, p.max_speed,
                p.headway_time, p.next_ll, p.lc_partner, p.lc_progress,
                p.lc_cool_until, p.blocked_time, p.enter_time,
                p.plan_speed, p.lc_want,
                p.migr_v, p.migr_loc, p.migr_pos, p.next_free, out_i, out_f)
            new_n = int(p.next_free[0])
            for s in range(n, new_n):
                orig = int(p.lc_partner[s])
                vid = f"shadow_{self._ids[orig]}"
                self._ids.append(vid)
                self._slots[vid] = s
            p.n = new_n
            self._finished += int(out_i[0])
            self._boundary_clamps += int(out_i[1])
            self._lc_finished += int(out_i[2])
            self._lc_begun += int(out_i[3])
            self._red_holds += int(out_i[4])
            self._duration_sum += float(out_f[0])
            if np.any(p.warn[:n]):
                self._sentinel_warnings += int(np.count_nonzero(
                    p.warn[:n] & 1))
                self._deadlock_creeps += int(np.count_nonzero(
                    p.warn[:n] & 2))
                p.warn[:n] = 0
            segments_kernel(a.n_lanes, a.lane_seg_off, a.lane_nseg,
                            a.seg_len, p.seg_head, p.loc_head, p.nxt, p.pos)
            self._audit()

        self._steps += 1
        if cfg.save_replay:
            self._record()

    def _audit(self):
        a, p = self.arrays, self.pool
        out = np.zeros(3, dtype=np.int64)
        audit_kernel(p.n, a.n_lanes + a.n_links, a.loc_len, p.loc_head,
                     p.prv, p.nxt, p.alive, p.shadow, p.loc, p.pos, p.speed,
                     p.length, p.max_speed, out)
        if out[0] != 0:
            msg = (f"step {self._steps}: "
                   f"{_AUDIT_MESSAGES.get(int(out[0]), 'unknown violation')}"
                   f" (detail {int(out[1])}, {int(out[2])})")
            if self._debug:
                raise InvariantViolation(msg)
            self._audit_failures += 1

    def _record(self):
        a, p = self.arrays, self.pool
        n = p.n
        xs = np.zeros(n)
        ys = np.zeros(n)
        hd = np.zeros(n)
        if n:
            poses_kernel(n, p.alive, p.shadow, p.loc, p.pos,
                         a.loc_pts_off, a.loc_pts, a.loc_cum, xs, ys, hd)
        rows = sorted(
            (self._ids[s], s) for s in range(n)
            if p.alive[s] == 1 and p.shadow[s] == 0)
        entries = [(xs[s], ys[s], hd[s], p.speed[s], vid)
                   for vid, s in rows]
        colors = [int(self._rl_color[a.ll_rl[k]]) for k in range(a.n_links)]
        line = format_record(entries, colors)
        self.replay_lines.append(line)
        if self._replay_fh is not None:
            self._replay_fh.write(line + "\n")
            self._replay_fh.flush()

    # -- observations --------------------------------------------------------

    def get_current_time(self) -> float:
        return self._steps * self.config.step_interval

    @property
    def steps(self) -> int:
        return self._steps

    def _public_mask(self):
        p = self.pool
        n = p.n
        return (p.alive[:n] == 1) & (p.shadow[:n] == 0)

    def get_vehicle_count(self) -> int:
        return int(np.count_nonzero(self._public_mask()))

    def get_vehicles(self):
        p = self.pool
        m = self._public_mask()
        return [self._ids[s] for s in np.flatnonzero(m)]

    def _lane_counts(self, extra_mask=None):
        a, p = self.arrays, self.pool
        n = p.n
        m = self._public_mask() & (p.loc[:n] < a.n_lanes)
        if extra_mask is not None:
            m = m & extra_mask
        counts = np.bincount(p.loc[:n][m], minlength=a.n_lanes)
        return {a.loc_id[l]: int(counts[l]) for l in range(a.n_lanes)}

    def get_lane_vehicle_count(self):
        return self._lane_counts()

    def get_lane_waiting_vehicle_count(self):
        p = self.pool
        return self._lane_counts(p.speed[:p.n] < WAITING_SPEED)

    def get_lane_vehicles(self):
        a, p = self.arrays, self.pool
        out = {}
        for l in range(a.n_lanes):
            ids = []
            v = int(p.loc_head[l])
            while v != NO_VEH:
                if p.shadow[v] == 0:
                    ids.append(self._ids[v])
                v = int(p.nxt[v])
            out[a.loc_id[l]] = ids
        return out

    def get_vehicle_speed(self):
        p = self.pool
        return {self._ids[s]: float(p.speed[s])
                for s in np.flatnonzero(self._public_mask())}

    def get_average_travel_time(self) -> float:
        p = self.pool
        now = self.get_current_time()
        m = self._public_mask()
        n_on = int(np.count_nonzero(m))
        cnt = self._finished + n_on
        if cnt == 0:
            return 0.0
        total = self._duration_sum + float(
            np.sum(now - p.enter_time[:p.n][m]))
        return total / cnt

    def get_vehicle_poses(self):
        """World pose per vehicle: {id: {x, y, heading, speed}}. Heading is
        radians counterclockwise from +x along the lane at the vehicle's
        front bumper."""
        a, p = self.arrays, self.pool
        n = p.n
        xs = np.zeros(n)
        ys = np.zeros(n)
        hd = np.zeros(n)
        if n:
            poses_kernel(n, p.alive, p.shadow, p.loc, p.pos,
                         a.loc_pts_off, a.loc_pts, a.loc_cum, xs, ys, hd)
        return {self._ids[s]: {"x": float(xs[s]), "y": float(ys[s]),
                               "heading": float(hd[s]),
                               "speed": float(p.speed[s])}
                for s in np.flatnonzero(self._public_mask())}

    def get_lanelink_colors(self):
        """Current signal color per lanelink id: "r", "y" or "g"."""
        a = self.arrays
        return {a.loc_id[a.n_lanes + k]:
                COLOR_CHARS[int(self._rl_color[a.ll_rl[k]])]
                for k in range(a.n_links)}

    def scale_volume(self, factor: float):
        """Multiply all flow rates by `factor` from the next spawn cycle on.

        Each flow keeps its already-scheduled next spawn time; later spawns
        follow at interval/factor. reset() restores the scenario's demand.
        """
        if factor <= 0:
            raise ValueError("volume factor must be positive")
        now = self.get_current_time()
        rescaled = []
        for f in self.flows:
            k = max(0, math.ceil((now - f.start_time) / f.interval - 1e-9))
            nxt = f.start_time + k * f.interval
            rescaled.append(replace(f, start_time=nxt,
                                    interval=f.interval / factor))
        self.flows = rescaled

    # -- lifecycle -----------------------------------------------------------

    def reset(self, keep_rng: bool = False):
        """Return to the post-construction state. The RNG reseeds from
        config.seed unless keep_rng; the replay file keeps accumulating."""
        self._reset_world()
        if not keep_rng:
            self._rng = np.random.default_rng(self.config.seed)

    def close(self):
        if self._replay_fh is not None:
            self._replay_fh.close()
            self._replay_fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False

    # counters the test suite and benchmarks read
    @property
    def stats(self):
        return {
            "spawned": self._spawned_total,
            "finished": self._finished,
            "queued": sum(len(q) for q in self._queues.values()),
            "boundaryClamps": self._boundary_clamps,
            "redLineHolds": self._red_holds,
            "sentinelWarnings": self._sentinel_warnings,
            "deadlockCreeps": self._deadlock_creeps,
            "laneChangesBegun": self._lc_begun,
            "laneChangesFinished": self._lc_finished,
            "auditFailures": self._audit_failures,
        }


def create_engine(config, debug: bool = False) -> Engine:
    return Engine(config, debug=debug)
