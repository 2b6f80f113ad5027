"""Flat-array simulation core.

The object model (roadnet, vehicle) is compiled once into struct-of-arrays
form; every step then runs jitted kernels over those arrays. Locations share
one id space: lanes 0..L-1 in roadnet order, then lanelinks L..L+K-1 in
declaration order. Vehicles on a location form a doubly linked list ordered
front to back (prv = toward the front, head = frontmost).

Parallel kernels (claims, plan, segments, poses) only write to elements they
own (per intersection / per vehicle / per lane), so the thread schedule cannot
change results: thread-count invariance is structural. The commit kernel is
serial and applies every mutation in one fixed global order.
"""

from __future__ import annotations

import math

import numpy as np

from . import jitsetup  # noqa: F401  (must precede numba import)
from numba import njit, prange

from .constants import (CREEP_AFTER, CREEP_SPEED, GAIN_THRESHOLD,
                        LC_COOLDOWN, LC_DURATION, MAX_BOUNDARY_CARRIES,
                        NOTIFY_RADIUS, SIBLING_CLEAR, V_MIN_EST,
                        WAITING_SPEED, YIELD_BUFFER)
from .kinematics import (_clamp_speed_jit, _hard_stop_bound_jit,
                         _headway_speed_jit, _no_collision_speed_jit)

NO_VEH = -1
ROUTE_END = -2
NO_LINK = -1

# signal colors; replay characters are "ryg"[color]
RED, YELLOW, GREEN = 0, 1, 2

# Stop-line standoff. The stop chain's terminal step moves v*dt/2 while the
# remaining distance is v^2/(2*dec), overshooting by up to dec*dt^2/8 once
# v < dec*dt; targeting the stop this far short of the line keeps the worst
# tail creep on the legal side (dec 4.5, dt 1 -> 0.5625).
STOP_MARGIN = 0.6


class NetArrays:
    """Static network in kernel form. Built once per engine."""

    def __init__(self, net, segment_length: float):
        lanes = list(net.lanes.values())
        links = list(net.lane_link_order)
        self.net = net
        self.n_lanes = L = len(lanes)
        self.n_links = K = len(links)
        self.lane_index = {l.id: i for i, l in enumerate(lanes)}
        self.link_index = {ll.id: L + k for k, ll in enumerate(links)}
        self.loc_id = [l.id for l in lanes] + [ll.id for ll in links]
        self.seg_len = float(segment_length)

        self.loc_len = np.array([l.length for l in lanes]
                                + [ll.length for ll in links])
        self.loc_limit = np.array(
            [l.max_speed for l in lanes]
            + [min(ll.start_lane.max_speed, ll.end_lane.max_speed)
               for ll in links])

        roads = list(net.roads.values())
        self.road_index = {r.id: i for i, r in enumerate(roads)}
        self.road_of_lane = np.array([self.road_index[l.road.id]
                                      for l in lanes], dtype=np.int64)
        self.lane_in_road = np.array([l.index for l in lanes], dtype=np.int64)
        self.road_first_lane = np.array(
            [self.lane_index[r.lanes[0].id] for r in roads], dtype=np.int64)
        self.road_n_lanes = np.array([len(r.lanes) for r in roads],
                                     dtype=np.int64)

        off, out = [0], []
        for l in lanes:
            out.extend(self.link_index[ll.id] for ll in l.outgoing)
            off.append(len(out))
        self.lane_out_off = np.array(off, dtype=np.int64)
        self.lane_out_ll = np.array(out, dtype=np.int64)

        self.ll_start_lane = np.array(
            [self.lane_index[ll.start_lane.id] for ll in links], dtype=np.int64)
        self.ll_end_lane = np.array(
            [self.lane_index[ll.end_lane.id] for ll in links], dtype=np.int64)
        self.ll_end_road = np.array(
            [self.road_index[ll.end_lane.road.id] for ll in links],
            dtype=np.int64)
        self.ll_prio = np.array([ll.road_link.priority for ll in links],
                                dtype=np.int64)

        nseg = np.array([max(1, int(l.length // self.seg_len))
                         for l in lanes], dtype=np.int64)
        self.lane_nseg = nseg
        self.lane_seg_off = np.zeros(L + 1, dtype=np.int64)
        np.cumsum(nseg, out=self.lane_seg_off[1:])
        self.n_segments = int(self.lane_seg_off[-1])

        po, xs, cs = [0], [], []
        for obj in lanes + links:
            for x, y in obj.points:
                xs.append((x, y))
            cs.extend(obj.cum)
            po.append(len(xs))
        self.loc_pts_off = np.array(po, dtype=np.int64)
        self.loc_pts = np.array(xs, dtype=np.float64)
        self.loc_cum = np.array(cs, dtype=np.float64)

        inters = list(net.intersections.values())
        self.inter_index = {it.id: i for i, it in enumerate(inters)}
        self.inter_id = [it.id for it in inters]
        self.n_inter = len(inters)

        rl_off = [0]
        n_rl = 0
        rl_of_ll = np.full(K, -1, dtype=np.int64)
        ph_off, ph_time, ph_rl_off, ph_rl = [0], [], [0], []
        ill_off, ill = [0], []
        for it in inters:
            first_rl = n_rl
            for rl in it.road_links:
                members = [self.link_index[x.id] for x in rl.lane_links]
                for m in members:
                    rl_of_ll[m - L] = n_rl
                ill.extend(members)
                n_rl += 1
            rl_off.append(n_rl)
            for ph in it.phases:
                ph_rl.extend(first_rl + x for x in ph.available_road_links)
                ph_rl_off.append(len(ph_rl))
                ph_time.append(ph.time)
            ph_off.append(len(ph_time))
            ill_off.append(len(ill))
        self.n_roadlinks = n_rl
        self.inter_rl_off = np.array(rl_off, dtype=np.int64)
        self.ll_rl = rl_of_ll
        self.inter_ph_off = np.array(ph_off, dtype=np.int64)
        self.phase_time = np.array(ph_time, dtype=np.float64)
        self.phase_rl_off = np.array(ph_rl_off, dtype=np.int64)
        self.phase_rl = np.array(ph_rl, dtype=np.int64)
        self.inter_ll_off = np.array(ill_off, dtype=np.int64)
        self.inter_ll = np.array(ill, dtype=np.int64)

        cp_off, ca, cb, da, db, sn = [0], [], [], [], [], []
        per_link = [[] for _ in range(K)]
        for it in inters:
            for cp in it.cross_points:
                c = len(ca)
                a = self.link_index[cp.laneLinkA]
                b = self.link_index[cp.laneLinkB]
                ca.append(a)
                cb.append(b)
                da.append(cp.distA)
                db.append(cp.distB)
                sn.append(max(abs(math.sin(cp.angle)), 0.2))
                per_link[a - L].append((cp.distA, c))
                per_link[b - L].append((cp.distB, c))
            cp_off.append(len(ca))
        self.inter_cp_off = np.array(cp_off, dtype=np.int64)
        self.n_cp = len(ca)
        self.cp_ll_a = np.array(ca, dtype=np.int64)
        self.cp_ll_b = np.array(cb, dtype=np.int64)
        self.cp_dist_a = np.array(da, dtype=np.float64)
        self.cp_dist_b = np.array(db, dtype=np.float64)
        self.cp_sin = np.array(sn, dtype=np.float64)
        o, ci, cd = [0], [], []
        for k in range(K):
            for d, c in sorted(per_link[k]):
                ci.append(c)
                cd.append(d)
            o.append(len(ci))
        self.ll_cp_off = np.array(o, dtype=np.int64)
        self.ll_cp_idx = np.array(ci, dtype=np.int64)
        self.ll_cp_dist = np.array(cd, dtype=np.float64)


class VehPool:
    """Growable per-vehicle arrays plus the location linked lists."""

    FLOATS = ("pos speed length width max_pos_acc max_neg_acc usual_pos_acc "
              "usual_neg_acc min_gap max_speed headway_time enter_time "
              "lc_progress lc_cool_until blocked_time plan_speed").split()
    INTS = ("loc route_off route_len route_pos next_ll lc_partner lc_want "
            "prv nxt").split()
    FLAGS = "alive shadow hold warn".split()

    def __init__(self, n_loc: int, n_segments: int, cap: int = 1024):
        self.cap = cap
        self.n = 0
        for name in self.FLOATS:
            setattr(self, name, np.zeros(cap))
        for name in self.INTS:
            setattr(self, name, np.full(cap, -1, dtype=np.int64))
        for name in self.FLAGS:
            setattr(self, name, np.zeros(cap, dtype=np.int8))
        self.loc_head = np.full(n_loc, NO_VEH, dtype=np.int64)
        self.loc_tail = np.full(n_loc, NO_VEH, dtype=np.int64)
        self.seg_head = np.full(n_segments, NO_VEH, dtype=np.int64)
        self.routes_flat = np.zeros(0, dtype=np.int64)
        # migration buffers and the shadow-allocation cursor for the commit
        self.migr_v = np.zeros(cap, dtype=np.int64)
        self.migr_loc = np.zeros(cap, dtype=np.int64)
        self.migr_pos = np.zeros(cap)
        self.next_free = np.zeros(1, dtype=np.int64)

    def ensure(self, extra: int):
        need = self.n + extra
        if need <= self.cap:
            return
        new_cap = self.cap
        while new_cap < need:
            new_cap *= 2
        for name in self.FLOATS + self.INTS + self.FLAGS:
            old = getattr(self, name)
            grown = (np.full(new_cap, -1, old.dtype) if name in self.INTS
                     else np.zeros(new_cap, old.dtype))
            grown[:self.cap] = old
            setattr(self, name, grown)
        self.migr_v = np.zeros(new_cap, dtype=np.int64)
        self.migr_loc = np.zeros(new_cap, dtype=np.int64)
        self.migr_pos = np.zeros(new_cap)
        self.cap = new_cap

    def alloc(self) -> int:
        self.ensure(1)
        i = self.n
        self.n += 1
        return i


@njit(cache=True)
def _seg_of(p, seg_len, nseg):
    s = int(p // seg_len)
    if s < 0:
        s = 0
    if s > nseg - 1:
        s = nseg - 1
    return s


@njit(cache=True)
def _choose_link(lane, routes_flat, r_off, r_pos, r_len,
                 lane_out_off, lane_out_ll, ll_end_road, n_lanes):
    """Link continuing the route from `lane`: NO_LINK if this lane cannot
    serve it, ROUTE_END on the route's last road."""
    if r_pos >= r_len - 1:
        return ROUTE_END
    nxt_road = routes_flat[r_off + r_pos + 1]
    for q in range(lane_out_off[lane], lane_out_off[lane + 1]):
        ll = lane_out_ll[q]
        if ll_end_road[ll - n_lanes] == nxt_road:
            return ll
    return NO_LINK


@njit(cache=True)
def _list_insert(v, l, p, loc_head, loc_tail, prv, nxt, pos):
    """Insert v into location l's list at longitudinal position p, walking
    from the tail (arrivals are almost always rearmost)."""
    cur = loc_tail[l]
    while cur != NO_VEH and pos[cur] < p:
        cur = prv[cur]
    if cur == NO_VEH:
        old = loc_head[l]
        prv[v] = NO_VEH
        nxt[v] = old
        if old != NO_VEH:
            prv[old] = v
        else:
            loc_tail[l] = v
        loc_head[l] = v
    else:
        after = nxt[cur]
        prv[v] = cur
        nxt[v] = after
        nxt[cur] = v
        if after != NO_VEH:
            prv[after] = v
        else:
            loc_tail[l] = v


@njit(cache=True)
def _list_remove(v, l, loc_head, loc_tail, prv, nxt):
    p, q = prv[v], nxt[v]
    if p != NO_VEH:
        nxt[p] = q
    else:
        loc_head[l] = q
    if q != NO_VEH:
        prv[q] = p
    else:
        loc_tail[l] = p
    prv[v] = NO_VEH
    nxt[v] = NO_VEH


@njit(cache=True)
def _scan_lane(lane, p, lane_seg_off, lane_nseg, seg_len, seg_head, nxt, pos):
    """Nearest vehicle at-or-ahead of p and nearest strictly behind on a lane.

    Starts at the segment bucket holding p; an empty side extends bucket by
    bucket (the lane lists make each hop O(bucket)). Exactly equivalent to a
    full-lane scan.
    """
    nseg = lane_nseg[lane]
    base = lane_seg_off[lane]
    seg = _seg_of(p, seg_len, nseg)
    leader = NO_VEH
    follower = NO_VEH
    cur = seg_head[base + seg]
    while cur != NO_VEH and pos[cur] >= p:
        leader = cur
        cur = nxt[cur]
        if cur != NO_VEH and _seg_of(pos[cur], seg_len, nseg) != seg:
            cur = NO_VEH
    if cur != NO_VEH and _seg_of(pos[cur], seg_len, nseg) == seg:
        follower = cur
    if leader == NO_VEH:
        s = seg + 1
        while s < nseg:
            h = seg_head[base + s]
            if h != NO_VEH:
                t = h
                while (nxt[t] != NO_VEH
                       and _seg_of(pos[nxt[t]], seg_len, nseg) == s):
                    t = nxt[t]
                leader = t
                break
            s += 1
    if follower == NO_VEH:
        s = seg - 1
        while s >= 0:
            h = seg_head[base + s]
            if h != NO_VEH:
                follower = h
                break
            s -= 1
    return leader, follower


@njit(cache=True, parallel=True)
def claims_kernel(n_inter, dt, inter_cp_off, inter_ll_off, inter_ll,
                  ll_cp_off, ll_cp_idx, ll_cp_dist, cp_sin, ll_prio,
                  ll_start_lane, loc_len, n_lanes, ll_rl, rl_color,
                  loc_head, nxt, pos, speed, length, next_ll, shadow,
                  max_neg_acc, wmax, cp_rank, cp_eta, cp_vid):
    """Per cross point, the single best claimant this step.

    A vehicle's key is global per (vehicle, link): committed vehicles (already
    on the lanelink) outrank approachers past their hard-stop point, who
    outrank everyone who can still yield; within a class straight beats right
    beats left, then earlier arrival (committed: deeper in; approaching: time
    to the stop line), then lower id. One key per vehicle keeps pairwise
    ordering consistent across all shared cross points, so yields cannot form
    cycles; a grant is never revoked from a vehicle that can no longer honor
    the revocation, because entering the unstoppable class requires having
    held every needed grant while stoppable. Claims rebuild from scratch each
    step; each intersection writes only its own cross points.
    """
    for i in prange(n_inter):
        for c in range(inter_cp_off[i], inter_cp_off[i + 1]):
            cp_rank[c] = 127
            cp_eta[c] = 1e18
            cp_vid[c] = NO_VEH
        for e in range(inter_ll_off[i], inter_ll_off[i + 1]):
            ll = inter_ll[e]
            k = ll - n_lanes
            rank_on = 2 - ll_prio[k]
            v = loc_head[ll]
            while v != NO_VEH:
                eta = -pos[v]
                for q in range(ll_cp_off[k], ll_cp_off[k + 1]):
                    c = ll_cp_idx[q]
                    clear_self = ((wmax * 0.5 + length[v] * 0.5) / cp_sin[c]
                                  + YIELD_BUFFER)
                    if (pos[v] - 0.5 * length[v]
                            > ll_cp_dist[q] + clear_self):
                        continue    # center is out of the buffered window
                    if (rank_on < cp_rank[c]
                        or (rank_on == cp_rank[c]
                            and (eta < cp_eta[c]
                                 or (eta == cp_eta[c] and v < cp_vid[c])))):
                        cp_rank[c] = rank_on
                        cp_eta[c] = eta
                        cp_vid[c] = v
                v = nxt[v]
            if rl_color[ll_rl[k]] == RED:
                continue    # a red light cannot produce an entrant
            lane = ll_start_lane[k]
            v = loc_head[lane]
            while v != NO_VEH:
                if shadow[v] == 1:
                    v = nxt[v]
                    continue
                rem = loc_len[lane] - pos[v]
                if rem <= NOTIFY_RADIUS and next_ll[v] == ll:
                    u = speed[v]
                    if (u * u / (2.0 * max_neg_acc[v]) + u * dt * 0.5
                            > rem - STOP_MARGIN):
                        rank_app = 4 + rank_on   # past the hard-stop point
                    else:
                        rank_app = 8 + rank_on
                    eta = rem / max(u, V_MIN_EST)
                    for q in range(ll_cp_off[k], ll_cp_off[k + 1]):
                        c = ll_cp_idx[q]
                        if (rank_app < cp_rank[c]
                            or (rank_app == cp_rank[c]
                                and (eta < cp_eta[c]
                                     or (eta == cp_eta[c]
                                         and v < cp_vid[c])))):
                            cp_rank[c] = rank_app
                            cp_eta[c] = eta
                            cp_vid[c] = v
                # only the lane's first unentered vehicle competes, whatever
                # movement it serves: anyone behind it is boxed in and could
                # not use a grant anyway, and parking grants on a boxed-in
                # vehicle starves the queue heads of every approach into a
                # four-way standoff no creep can break (nobody is on a link)
                break


@njit(cache=True)
def _yield_target(v, k, on_link, rem, n_lanes, loc,
                  ll_cp_off, ll_cp_idx, ll_cp_dist,
                  cp_sin, cp_vid, pos, length, width):
    """Stop target imposed by unowned cross points of lanelink k, or a huge
    value when the vehicle owns everything relevant, plus whether the vehicle
    holds at least one grant of its own (a head claimant somewhere).

    Approaching vehicles (on_link false, rem = distance to the stop line) hold
    at the line while any conflict ahead is owned by someone else: nobody
    enters the box without owning their crossings. Vehicles already inside
    stop clearance + buffer short of a conflict they lost, but never brake for
    one their front has already reached. Conflicts owned by a vehicle on this
    same lanelink are not conflicts at all: car following spaces a column on
    one path, and treating the leader as a rival would stall the whole
    movement at the line for a full link traversal per vehicle.
    """
    target = 1e18
    owns_any = False
    for q in range(ll_cp_off[k], ll_cp_off[k + 1]):
        c = ll_cp_idx[q]
        owner = cp_vid[c]
        if owner == v:
            owns_any = True
            continue
        if owner == NO_VEH:
            continue
        if loc[owner] == n_lanes + k:
            continue
        if on_link:
            rel = ll_cp_dist[q] - pos[v]
            if rel <= 0.0:
                continue
        else:
            rel = rem + ll_cp_dist[q]
        clear = (width[owner] * 0.5 + length[v] * 0.5) / cp_sin[c]
        t = rel - clear - YIELD_BUFFER
        if not on_link and rem - STOP_MARGIN < t:
            t = rem - STOP_MARGIN
        if t < 0.0:
            t = 0.0
        if t < target:
            target = t
    return target, owns_any


@njit(cache=True, parallel=True)
def plan_kernel(n, dt, now, n_lanes, lane_change_on, seg_len,
                loc_len, loc_limit, lane_out_off, lane_out_ll,
                ll_end_lane, ll_end_road, ll_rl, rl_color,
                ll_cp_off, ll_cp_idx, ll_cp_dist, cp_sin, cp_vid,
                lane_seg_off, lane_nseg, seg_head,
                road_of_lane, lane_in_road, road_first_lane, road_n_lanes,
                routes_flat, route_off, route_len, route_pos,
                loc_head, loc_tail, prv, nxt,
                alive, shadow, hold, loc, pos, speed,
                length, width, max_pos_acc, max_neg_acc,
                usual_pos_acc, usual_neg_acc, min_gap, max_speed,
                headway_time, next_ll, lc_partner, lc_progress,
                lc_cool_until, blocked_time,
                plan_speed, lc_want, warn):
    """Per-vehicle speed planning and lane-change intents, reading only the
    committed snapshot. Each iteration writes plan_speed / lc_want / warn for
    its own vehicle and nothing else."""
    for v in prange(n):
        lc_want[v] = -1
        if alive[v] == 0 or shadow[v] == 1:
            continue
        if hold[v] == 1:
            plan_speed[v] = speed[v]
            continue
        u = speed[v]
        myloc = loc[v]
        on_link = myloc >= n_lanes
        bound = 1e18
        lane_lim = loc_limit[myloc]

        # nearest leader: own list first, then along the route within the
        # distance a leader could still bind
        lead = prv[v]
        lead_gap = 1e18
        lv = 0.0
        ld = 1.0
        if lead != NO_VEH:
            lead_gap = pos[lead] - length[lead] - pos[v]
            lv = speed[lead]
            ld = max_neg_acc[lead]
        else:
            vcap = u + max_pos_acc[v] * dt
            budget = (vcap * dt + vcap * vcap / (2.0 * max_neg_acc[v])
                      + min_gap[v] + headway_time[v] * vcap + SIBLING_CLEAR)
            cum = loc_len[myloc] - pos[v]
            wloc = myloc
            wrpos = route_pos[v]
            while cum < budget:
                if wloc < n_lanes:
                    # a freshly migrated vehicle whose back still hangs over
                    # the boundary of ANY outgoing link blocks this lane's end
                    bo = 1e18
                    bov = NO_VEH
                    for q in range(lane_out_off[wloc], lane_out_off[wloc + 1]):
                        sib = lane_out_ll[q]
                        t = loc_tail[sib]
                        if t != NO_VEH and pos[t] < length[t] + SIBLING_CLEAR:
                            eff = pos[t] - length[t]
                            if eff < bo or (eff == bo and t < bov):
                                bo = eff
                                bov = t
                    if bov != NO_VEH:
                        lead = bov
                        lead_gap = cum + bo
                        lv = speed[bov]
                        ld = max_neg_acc[bov]
                        break
                    if wloc == myloc:
                        nl = next_ll[v]
                    else:
                        nl = _choose_link(wloc, routes_flat, route_off[v],
                                          wrpos, route_len[v], lane_out_off,
                                          lane_out_ll, ll_end_road, n_lanes)
                    if nl < 0:
                        break
                    t = loc_tail[nl]
                    if t != NO_VEH:
                        lead = t
                        lead_gap = cum + pos[t] - length[t]
                        lv = speed[t]
                        ld = max_neg_acc[t]
                        break
                    cum += loc_len[nl]
                    wloc = nl
                else:
                    el = ll_end_lane[wloc - n_lanes]
                    t = loc_tail[el]
                    if t != NO_VEH:
                        lead = t
                        lead_gap = cum + pos[t] - length[t]
                        lv = speed[t]
                        ld = max_neg_acc[t]
                        break
                    cum += loc_len[el]
                    wrpos += 1
                    wloc = el
        if lead != NO_VEH:
            g = lead_gap - min_gap[v]
            if g < 0.0:
                g = 0.0
            s = _no_collision_speed_jit(u, lv, max_neg_acc[v], ld, g, dt)
            if s < 0.0:
                s = 0.0
                warn[v] |= 1
            if s < bound:
                bound = s
            h = _headway_speed_jit(lead_gap, headway_time[v], min_gap[v])
            if h < bound:
                bound = h

        if on_link:
            k = myloc - n_lanes
            tgt, owns_any = _yield_target(v, k, True, 0.0, n_lanes, loc,
                                          ll_cp_off, ll_cp_idx, ll_cp_dist,
                                          cp_sin, cp_vid, pos, length, width)
            if tgt < 1e17:
                b = _hard_stop_bound_jit(u, tgt, max_neg_acc[v], dt)
                if (owns_any and blocked_time[v] > CREEP_AFTER
                        and b < CREEP_SPEED):
                    # a head claimant pinned this long is in a grant cycle;
                    # creep through rather than freeze the box (anomaly)
                    b = CREEP_SPEED
                    warn[v] |= 2
                if b < bound:
                    bound = b
        else:
            rem = loc_len[myloc] - pos[v]
            nl = next_ll[v]
            if nl == NO_LINK:
                b = _hard_stop_bound_jit(u, rem - STOP_MARGIN,
                                         max_neg_acc[v], dt)
                if b < bound:
                    bound = b
            elif nl >= 0:
                color = rl_color[ll_rl[nl - n_lanes]]
                if color == RED:
                    b = _hard_stop_bound_jit(u, rem - STOP_MARGIN,
                                             max_neg_acc[v], dt)
                    if b < bound:
                        bound = b
                elif color == YELLOW:
                    # stop if a comfortable stop fits, or failing that a hard
                    # stop; a vehicle past both thresholds clears before red
                    if (u * u / (2.0 * usual_neg_acc[v]) + u * dt * 0.5
                            <= rem - STOP_MARGIN):
                        b = _hard_stop_bound_jit(u, rem - STOP_MARGIN,
                                                 usual_neg_acc[v], dt)
                        if b < bound:
                            bound = b
                    elif (u * u / (2.0 * max_neg_acc[v]) + u * dt * 0.5
                            <= rem - STOP_MARGIN):
                        b = _hard_stop_bound_jit(u, rem - STOP_MARGIN,
                                                 max_neg_acc[v], dt)
                        if b < bound:
                            bound = b
                if color != RED and rem <= NOTIFY_RADIUS:
                    # keep the box clear: cross the line only when the body
                    # fits beyond it, so a queue can never trap this vehicle
                    # over the line when the signal changes
                    if lead_gap - rem < length[v] + min_gap[v]:
                        b = _hard_stop_bound_jit(u, rem - STOP_MARGIN,
                                                 max_neg_acc[v], dt)
                        if b < bound:
                            bound = b
                    k = nl - n_lanes
                    tgt, _ = _yield_target(v, k, False, rem, n_lanes, loc,
                                           ll_cp_off, ll_cp_idx, ll_cp_dist,
                                           cp_sin, cp_vid, pos, length, width)
                    if tgt < 1e17:
                        b = _hard_stop_bound_jit(u, tgt, max_neg_acc[v], dt)
                        if b < bound:
                            bound = b

        # constraints of the paired shadow's lane bind the original too
        if lc_partner[v] != NO_VEH:
            sh = lc_partner[v]
            shloc = loc[sh]
            if loc_limit[shloc] < lane_lim:
                lane_lim = loc_limit[shloc]
            led2 = prv[sh]
            if led2 != NO_VEH:
                lg = pos[led2] - length[led2] - pos[sh]
                g = lg - min_gap[v]
                if g < 0.0:
                    g = 0.0
                s = _no_collision_speed_jit(u, speed[led2], max_neg_acc[v],
                                            max_neg_acc[led2], g, dt)
                if s < 0.0:
                    s = 0.0
                    warn[v] |= 1
                if s < bound:
                    bound = s
                h = _headway_speed_jit(lg, headway_time[v], min_gap[v])
                if h < bound:
                    bound = h
            # the target lane's own signal
            rem2 = loc_len[shloc] - pos[sh]
            nl2 = _choose_link(shloc, routes_flat, route_off[v], route_pos[v],
                               route_len[v], lane_out_off, lane_out_ll,
                               ll_end_road, n_lanes)
            if nl2 == NO_LINK:
                b = _hard_stop_bound_jit(u, rem2 - STOP_MARGIN,
                                         max_neg_acc[v], dt)
                if b < bound:
                    bound = b
            elif nl2 >= 0:
                color = rl_color[ll_rl[nl2 - n_lanes]]
                if color == RED:
                    b = _hard_stop_bound_jit(u, rem2 - STOP_MARGIN,
                                             max_neg_acc[v], dt)
                    if b < bound:
                        bound = b
                elif color == YELLOW:
                    if (u * u / (2.0 * usual_neg_acc[v]) + u * dt * 0.5
                            <= rem2 - STOP_MARGIN):
                        b = _hard_stop_bound_jit(u, rem2 - STOP_MARGIN,
                                                 usual_neg_acc[v], dt)
                        if b < bound:
                            bound = b
                    elif (u * u / (2.0 * max_neg_acc[v]) + u * dt * 0.5
                            <= rem2 - STOP_MARGIN):
                        b = _hard_stop_bound_jit(u, rem2 - STOP_MARGIN,
                                                 max_neg_acc[v], dt)
                        if b < bound:
                            bound = b

        plan_speed[v] = _clamp_speed_jit(bound, u, max_pos_acc[v],
                                         max_neg_acc[v], max_speed[v],
                                         lane_lim, dt)

        # lane-change intent (lanes only, not during a change, past cooldown)
        if (lane_change_on == 1 and not on_link
                and lc_partner[v] == NO_VEH and now >= lc_cool_until[v]):
            road = road_of_lane[myloc]
            li = lane_in_road[myloc]
            base = road_first_lane[road]
            cnt = road_n_lanes[road]
            if next_ll[v] == NO_LINK:
                # route rule: head for the nearest lane that serves the route
                bestd = 1 << 30
                bestl = -1
                for cj in range(cnt):
                    if cj == li:
                        continue
                    cand = base + cj
                    sll = _choose_link(cand, routes_flat, route_off[v],
                                       route_pos[v], route_len[v],
                                       lane_out_off, lane_out_ll, ll_end_road,
                                       n_lanes)
                    if sll == NO_LINK:
                        continue
                    d = cj - li if cj > li else li - cj
                    if d < bestd:
                        bestd = d
                        bestl = cj
                if bestl >= 0:
                    step = 1 if bestl > li else -1
                    lc_want[v] = base + li + step
            elif cnt > 1:
                # speed-gain rule over route-serving neighbors
                cur_gap = 1e9
                if prv[v] != NO_VEH:
                    cur_gap = pos[prv[v]] - length[prv[v]] - pos[v]
                bestg = -1.0
                bestt = -1
                for step in (-1, 1):
                    cj = li + step
                    if cj < 0 or cj >= cnt:
                        continue
                    cand = base + cj
                    if next_ll[v] != ROUTE_END:
                        sll = _choose_link(cand, routes_flat, route_off[v],
                                           route_pos[v], route_len[v],
                                           lane_out_off, lane_out_ll,
                                           ll_end_road, n_lanes)
                        if sll == NO_LINK:
                            continue
                    ldc, flc = _scan_lane(cand, pos[v], lane_seg_off,
                                          lane_nseg, seg_len, seg_head,
                                          nxt, pos)
                    gap_c = 1e9
                    if ldc != NO_VEH:
                        gap_c = pos[ldc] - length[ldc] - pos[v]
                    if gap_c <= cur_gap + GAIN_THRESHOLD:
                        continue
                    ok = True
                    if ldc != NO_VEH:
                        g2 = gap_c - min_gap[v]
                        if g2 < 0.0:
                            ok = False
                        else:
                            s2 = _no_collision_speed_jit(
                                u, speed[ldc], max_neg_acc[v],
                                max_neg_acc[ldc], g2, dt)
                            if s2 < u - max_neg_acc[v] * dt:
                                ok = False
                    if ok and flc != NO_VEH:
                        g3 = pos[v] - length[v] - pos[flc] - min_gap[flc]
                        if g3 < 0.0:
                            ok = False
                        else:
                            s3 = _no_collision_speed_jit(
                                speed[flc], u, max_neg_acc[flc],
                                max_neg_acc[v], g3, dt)
                            if s3 < speed[flc] - usual_neg_acc[flc] * dt:
                                ok = False
                    if ok and gap_c > bestg:
                        bestg = gap_c
                        bestt = cand
                if bestt >= 0:
                    lc_want[v] = bestt


@njit(cache=True)
def commit_kernel(n, dt, now, n_lanes,
                  loc_len, lane_out_off, lane_out_ll, ll_end_lane,
                  ll_end_road, ll_rl, rl_color,
                  routes_flat, route_off, route_len, route_pos,
                  loc_head, loc_tail, prv, nxt,
                  alive, shadow, hold, loc, pos, speed,
                  length, width, max_pos_acc, max_neg_acc,
                  usual_pos_acc, usual_neg_acc, min_gap, max_speed,
                  headway_time, next_ll, lc_partner, lc_progress,
                  lc_cool_until, blocked_time, enter_time,
                  plan_speed, lc_want,
                  migr_v, migr_loc, migr_pos, next_free, out_i, out_f):
    """Serial state commit: apply planned speeds, advance and migrate, finish
    and begin lane changes. Mutation order is fixed: vehicles by id for
    advancement, then migrations sorted by (location, descending pos, id),
    then change begins by id.

    out_i: 0 finished count, 1 boundary clamps, 2 changes finished,
           3 changes begun, 4 red-line holds. out_f: 0 summed travel
           durations.
    """
    migr_n = 0
    for v in range(n):
        if alive[v] == 0 or shadow[v] == 1:
            continue
        if hold[v] == 1:
            hold[v] = 0
            continue
        vnew = plan_speed[v]
        newpos = pos[v] + 0.5 * (speed[v] + vnew) * dt
        speed[v] = vnew
        partner = lc_partner[v]
        if partner != NO_VEH:
            lc_progress[v] += dt / LC_DURATION
            done = lc_progress[v] >= 1.0 - 1e-9
            seam = (newpos > loc_len[loc[v]]
                    or newpos > loc_len[loc[partner]])
            if done or seam:
                # the shadow's slot on the target lane becomes the vehicle's
                tgt = loc[partner]
                _list_remove(v, loc[v], loc_head, loc_tail, prv, nxt)
                pf = prv[partner]
                pb = nxt[partner]
                _list_remove(partner, tgt, loc_head, loc_tail, prv, nxt)
                prv[v] = pf
                nxt[v] = pb
                if pf != NO_VEH:
                    nxt[pf] = v
                else:
                    loc_head[tgt] = v
                if pb != NO_VEH:
                    prv[pb] = v
                else:
                    loc_tail[tgt] = v
                alive[partner] = 0
                lc_partner[partner] = NO_VEH
                lc_partner[v] = NO_VEH
                lc_progress[v] = 0.0
                lc_cool_until[v] = now + dt + LC_COOLDOWN
                loc[v] = tgt
                next_ll[v] = _choose_link(tgt, routes_flat, route_off[v],
                                          route_pos[v], route_len[v],
                                          lane_out_off, lane_out_ll,
                                          ll_end_road, n_lanes)
                partner = NO_VEH
                out_i[2] += 1
        cur = loc[v]
        carries = 0
        gone = False
        migrated = False
        while newpos > loc_len[cur]:
            if cur < n_lanes:
                nl = next_ll[v]
                if nl == ROUTE_END:
                    _list_remove(v, cur, loc_head, loc_tail, prv, nxt)
                    alive[v] = 0
                    out_i[0] += 1
                    out_f[0] += (now + dt) - enter_time[v]
                    gone = True
                    break
                if nl == NO_LINK or carries >= MAX_BOUNDARY_CARRIES:
                    newpos = loc_len[cur]
                    if nl == NO_LINK:
                        speed[v] = 0.0
                    out_i[1] += 1
                    break
                if rl_color[ll_rl[nl - n_lanes]] == RED:
                    # entering on red is never committed, whatever the plan
                    # said; hold at the line
                    newpos = loc_len[cur]
                    speed[v] = 0.0
                    out_i[4] += 1
                    break
                _list_remove(v, cur, loc_head, loc_tail, prv, nxt)
                newpos -= loc_len[cur]
                cur = nl
                migrated = True
                carries += 1
            else:
                if carries >= MAX_BOUNDARY_CARRIES:
                    newpos = loc_len[cur]
                    out_i[1] += 1
                    break
                _list_remove(v, cur, loc_head, loc_tail, prv, nxt)
                newpos -= loc_len[cur]
                cur = ll_end_lane[cur - n_lanes]
                route_pos[v] += 1
                next_ll[v] = _choose_link(cur, routes_flat, route_off[v],
                                          route_pos[v], route_len[v],
                                          lane_out_off, lane_out_ll,
                                          ll_end_road, n_lanes)
                migrated = True
                carries += 1
        if gone:
            continue
        pos[v] = newpos
        loc[v] = cur
        if migrated:
            migr_v[migr_n] = v
            migr_loc[migr_n] = cur
            migr_pos[migr_n] = newpos
            migr_n += 1
        if cur >= n_lanes and vnew < WAITING_SPEED:
            blocked_time[v] += dt
        else:
            blocked_time[v] = 0.0
        if partner != NO_VEH:
            speed[partner] = vnew
            pos[partner] = newpos
            lc_progress[partner] = lc_progress[v]

    # migrations: deterministic merge order regardless of who moved first
    for i in range(1, migr_n):
        kv = migr_v[i]
        kl = migr_loc[i]
        kp = migr_pos[i]
        j = i - 1
        while j >= 0 and (migr_loc[j] > kl
                          or (migr_loc[j] == kl
                              and (migr_pos[j] < kp
                                   or (migr_pos[j] == kp
                                       and migr_v[j] > kv)))):
            migr_v[j + 1] = migr_v[j]
            migr_loc[j + 1] = migr_loc[j]
            migr_pos[j + 1] = migr_pos[j]
            j -= 1
        migr_v[j + 1] = kv
        migr_loc[j + 1] = kl
        migr_pos[j + 1] = kp
    for i in range(migr_n):
        _list_insert(migr_v[i], migr_loc[i], migr_pos[i],
                     loc_head, loc_tail, prv, nxt, pos)

    # begin lane changes against the committed state, vehicles by id
    for v in range(n):
        t = lc_want[v]
        if t < 0 or alive[v] == 0 or shadow[v] == 1 or hold[v] == 1:
            continue
        if lc_partner[v] != NO_VEH or loc[v] >= n_lanes or loc[v] == t:
            continue
        p = pos[v]
        if p > loc_len[t]:
            continue
        # no changes toward a lane whose own stop line is no longer makeable
        u = speed[v]
        nl2 = _choose_link(t, routes_flat, route_off[v], route_pos[v],
                           route_len[v], lane_out_off, lane_out_ll,
                           ll_end_road, n_lanes)
        if nl2 != ROUTE_END:
            rem2 = loc_len[t] - p
            blocked_end = nl2 == NO_LINK
            if not blocked_end:
                color = rl_color[ll_rl[nl2 - n_lanes]]
                blocked_end = color != GREEN
            if (blocked_end
                    and u * u / (2.0 * max_neg_acc[v]) + u * dt * 0.5
                        > rem2 - STOP_MARGIN):
                continue
        cur = loc_tail[t]
        fol = NO_VEH
        while cur != NO_VEH and pos[cur] < p:
            fol = cur
            cur = prv[cur]
        led = cur
        ok = True
        if led != NO_VEH:
            g = pos[led] - length[led] - p - min_gap[v]
            if g < 0.0:
                ok = False
            else:
                s = _no_collision_speed_jit(u, speed[led], max_neg_acc[v],
                                            max_neg_acc[led], g, dt)
                if s < u - max_neg_acc[v] * dt:
                    ok = False
        if ok and fol != NO_VEH:
            g = p - length[v] - pos[fol] - min_gap[fol]
            if g < 0.0:
                ok = False
            else:
                s = _no_collision_speed_jit(speed[fol], u, max_neg_acc[fol],
                                            max_neg_acc[v], g, dt)
                if s < speed[fol] - usual_neg_acc[fol] * dt:
                    ok = False
        if not ok:
            continue
        si = next_free[0]
        next_free[0] += 1
        alive[si] = 1
        shadow[si] = 1
        hold[si] = 0
        loc[si] = t
        pos[si] = p
        speed[si] = u
        plan_speed[si] = u
        length[si] = length[v]
        width[si] = width[v]
        max_pos_acc[si] = max_pos_acc[v]
        max_neg_acc[si] = max_neg_acc[v]
        usual_pos_acc[si] = usual_pos_acc[v]
        usual_neg_acc[si] = usual_neg_acc[v]
        min_gap[si] = min_gap[v]
        max_speed[si] = max_speed[v]
        headway_time[si] = headway_time[v]
        enter_time[si] = enter_time[v]
        route_off[si] = route_off[v]
        route_len[si] = route_len[v]
        route_pos[si] = route_pos[v]
        next_ll[si] = NO_LINK
        lc_partner[si] = v
        lc_partner[v] = si
        lc_progress[si] = 0.0
        lc_progress[v] = 0.0
        lc_cool_until[si] = 0.0
        blocked_time[si] = 0.0
        lc_want[si] = -1
        _list_insert(si, t, p, loc_head, loc_tail, prv, nxt, pos)
        out_i[3] += 1
    return migr_n


@njit(cache=True, parallel=True)
def segments_kernel(n_lanes, lane_seg_off, lane_nseg, seg_len, seg_head,
                    loc_head, nxt, pos):
    """Rebuild the per-segment frontmost-vehicle index from the lane lists."""
    for lane in prange(n_lanes):
        base = lane_seg_off[lane]
        nseg = lane_nseg[lane]
        for s in range(nseg):
            seg_head[base + s] = NO_VEH
        v = loc_head[lane]
        last = -1
        while v != NO_VEH:
            s = _seg_of(pos[v], seg_len, nseg)
            if s != last:
                seg_head[base + s] = v
                last = s
            v = nxt[v]


@njit(cache=True, parallel=True)
def poses_kernel(n, alive, shadow, loc, pos, loc_pts_off, loc_pts, loc_cum,
                 out_x, out_y, out_hd):
    """World pose of every public vehicle: interpolate its location polyline
    at the longitudinal position."""
    for v in prange(n):
        if alive[v] == 0 or shadow[v] == 1:
            continue
        l = loc[v]
        o0 = loc_pts_off[l]
        o1 = loc_pts_off[l + 1]
        s = pos[v]
        total = loc_cum[o1 - 1]
        if s < 0.0:
            s = 0.0
        if s > total:
            s = total
        lo = o0
        hi = o1 - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if loc_cum[mid] <= s:
                lo = mid
            else:
                hi = mid
        seg = loc_cum[hi] - loc_cum[lo]
        t = 0.0 if seg <= 0.0 else (s - loc_cum[lo]) / seg
        x0 = loc_pts[lo, 0]
        y0 = loc_pts[lo, 1]
        x1 = loc_pts[hi, 0]
        y1 = loc_pts[hi, 1]
        out_x[v] = x0 + (x1 - x0) * t
        out_y[v] = y0 + (y1 - y0) * t
        out_hd[v] = math.atan2(y1 - y0, x1 - x0)


@njit(cache=True)
def audit_kernel(n, n_loc, loc_len, loc_head, prv, nxt,
                 alive, shadow, loc, pos, speed, length, max_speed, out):
    """Structural invariants of the committed state.

    out[0] codes: 0 clean, 1 gap violation (out[1]=leader, out[2]=follower),
    2 position out of range, 3 speed out of range, 4 broken list links,
    5 dead vehicle listed, 6 wrong location, 7 membership count mismatch.
    """
    out[0] = 0
    count = 0
    for l in range(n_loc):
        v = loc_head[l]
        last = NO_VEH
        while v != NO_VEH:
            count += 1
            if alive[v] == 0:
                out[0] = 5
                out[1] = v
                return
            if loc[v] != l:
                out[0] = 6
                out[1] = v
                return
            if pos[v] < -1e-6 or pos[v] > loc_len[l] + 1e-6:
                out[0] = 2
                out[1] = v
                return
            if speed[v] < -1e-9 or speed[v] > max_speed[v] + 1e-6:
                out[0] = 3
                out[1] = v
                return
            if prv[v] != last:
                out[0] = 4
                out[1] = v
                return
            if last != NO_VEH:
                gap = pos[last] - length[last] - pos[v]
                if gap < -1e-6:
                    out[0] = 1
                    out[1] = last
                    out[2] = v
                    return
            last = v
            v = nxt[v]
    total = 0
    for v in range(n):
        total += alive[v]
    if count != total:
        out[0] = 7
        out[1] = count
        out[2] = total
