"""Polyline and curve helpers for network geometry.

Polylines are float64 arrays of shape (n, 2). Arc-length parameterization is
used everywhere a longitudinal position must map to a plane point.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import SemanticError


def as_polyline(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
        raise SemanticError(f"polyline needs >= 2 plane points, got shape {arr.shape}")
    return arr


def cumulative_lengths(poly: np.ndarray) -> np.ndarray:
    """Arc length from the start to each vertex; cum[0] = 0."""
    d = np.hypot(np.diff(poly[:, 0]), np.diff(poly[:, 1]))
    return np.concatenate(([0.0], np.cumsum(d)))


def polyline_length(poly: np.ndarray) -> float:
    return float(cumulative_lengths(poly)[-1])


def check_nondegenerate(poly: np.ndarray, what: str, eps: float = 1e-9) -> None:
    d = np.hypot(np.diff(poly[:, 0]), np.diff(poly[:, 1]))
    if (d <= eps).any():
        raise SemanticError(f"{what}: degenerate zero-length segment in path")


def point_at(poly: np.ndarray, cum: np.ndarray, s: float):
    """Point and unit direction at arc length s (clamped to the path)."""
    total = cum[-1]
    if s <= 0.0:
        i = 0
        t = 0.0
    elif s >= total:
        i = len(cum) - 2
        t = 1.0
    else:
        i = int(np.searchsorted(cum, s, side="right")) - 1
        i = min(i, len(cum) - 2)
        seg = cum[i + 1] - cum[i]
        t = (s - cum[i]) / seg if seg > 0 else 0.0
    p0 = poly[i]
    p1 = poly[i + 1]
    dx = p1[0] - p0[0]
    dy = p1[1] - p0[1]
    n = math.hypot(dx, dy)
    if n > 0:
        dx /= n
        dy /= n
    return (p0[0] + (p1[0] - p0[0]) * t, p0[1] + (p1[1] - p0[1]) * t), (dx, dy)


def offset_polyline(poly: np.ndarray, offset: float) -> np.ndarray:
    """Parallel curve `offset` meters to the RIGHT of travel direction.

    Vertices are shifted along the averaged (miter) normal of their adjacent
    segments. Adequate for the near-straight road polylines the generators
    emit; no self-intersection handling.
    """
    seg = np.diff(poly, axis=0)
    norm = np.hypot(seg[:, 0], seg[:, 1])
    if (norm == 0).any():
        raise SemanticError("offset_polyline: zero-length segment")
    # right normal of direction (dx,dy) is (dy,-dx)
    nx = seg[:, 1] / norm
    ny = -seg[:, 0] / norm
    vx = np.empty(len(poly))
    vy = np.empty(len(poly))
    vx[0], vy[0] = nx[0], ny[0]
    vx[-1], vy[-1] = nx[-1], ny[-1]
    if len(poly) > 2:
        mx = nx[:-1] + nx[1:]
        my = ny[:-1] + ny[1:]
        mlen = np.hypot(mx, my)
        mlen[mlen == 0] = 1.0
        vx[1:-1] = mx / mlen
        vy[1:-1] = my / mlen
    out = poly.copy()
    out[:, 0] += vx * offset
    out[:, 1] += vy * offset
    return out


def cubic_bezier(p0, c0, c1, p1, spacing: float) -> np.ndarray:
    """Sample a cubic Bezier into a polyline at roughly `spacing` meters."""
    p0 = np.asarray(p0, float)
    c0 = np.asarray(c0, float)
    c1 = np.asarray(c1, float)
    p1 = np.asarray(p1, float)
    # chord + control polygon upper-bounds the arc length
    approx = (np.linalg.norm(c0 - p0) + np.linalg.norm(c1 - c0)
              + np.linalg.norm(p1 - c1))
    n = max(2, int(math.ceil(approx / spacing)) + 1)
    t = np.linspace(0.0, 1.0, n)[:, None]
    u = 1.0 - t
    pts = (u ** 3) * p0 + 3 * (u ** 2) * t * c0 + 3 * u * (t ** 2) * c1 + (t ** 3) * p1
    return pts


def turn_curve(p0, dir0, p1, dir1, spacing: float = 2.0) -> np.ndarray:
    """Turn path between lane endpoints: cubic Bezier with control points half
    the endpoint distance along the entry/exit tangents, sampled at `spacing`.
    """
    p0 = np.asarray(p0, float)
    p1 = np.asarray(p1, float)
    d = np.linalg.norm(p1 - p0)
    k = d / 2.0
    c0 = p0 + np.asarray(dir0, float) * k
    c1 = p1 - np.asarray(dir1, float) * k
    return cubic_bezier(p0, c0, c1, p1, spacing)


def _segment_intersections(a0, a1, b0, b1, eps: float = 1e-12):
    """All intersection parameters between segment batches.

    a0,a1: (n,2) segment endpoints; b0,b1: (m,2). Returns arrays (ti, tj, t, u)
    of segment indices and parameters for every properly-intersecting or
    endpoint-touching pair. Collinear overlaps report the first contact point.
    """
    n = len(a0)
    m = len(b0)
    da = (a1 - a0)[:, None, :]            # (n,1,2)
    db = (b1 - b0)[None, :, :]            # (1,m,2)
    diff = b0[None, :, :] - a0[:, None, :]  # (n,m,2)
    denom = da[..., 0] * db[..., 1] - da[..., 1] * db[..., 0]
    t_num = diff[..., 0] * db[..., 1] - diff[..., 1] * db[..., 0]
    u_num = diff[..., 0] * da[..., 1] - diff[..., 1] * da[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = t_num / denom
        u = u_num / denom
    ok = (np.abs(denom) > eps) & (t >= -1e-9) & (t <= 1 + 1e-9) \
        & (u >= -1e-9) & (u <= 1 + 1e-9)
    ti, tj = np.nonzero(ok)
    res_t = np.clip(t[ti, tj], 0.0, 1.0)
    res_u = np.clip(u[ti, tj], 0.0, 1.0)

    # collinear touching: denom == 0 and the cross of diff with da == 0
    col = (np.abs(denom) <= eps) & (np.abs(u_num) <= 1e-9) & (np.abs(t_num) <= 1e-9)
    if col.any():
        ci, cj = np.nonzero(col)
        keep_t, keep_u, keep_i, keep_j = [], [], [], []
        for i, j in zip(ci, cj):
            d = da[i, 0]
            L2 = d[0] * d[0] + d[1] * d[1]
            if L2 <= eps:
                continue
            s0 = ((b0[j] - a0[i]) @ d) / L2
            s1 = ((b1[j] - a0[i]) @ d) / L2
            lo = max(0.0, min(s0, s1))
            hi = min(1.0, max(s0, s1))
            if lo <= hi + 1e-9:
                tt = lo
                # u parameter of that same point on segment j
                dj = db[0, j]
                Lj2 = dj[0] * dj[0] + dj[1] * dj[1]
                pt = a0[i] + d * tt
                uu = ((pt - b0[j]) @ dj) / Lj2 if Lj2 > eps else 0.0
                keep_i.append(i)
                keep_j.append(j)
                keep_t.append(tt)
                keep_u.append(min(1.0, max(0.0, uu)))
        if keep_i:
            ti = np.concatenate([ti, np.array(keep_i, dtype=ti.dtype)])
            tj = np.concatenate([tj, np.array(keep_j, dtype=tj.dtype)])
            res_t = np.concatenate([res_t, np.array(keep_t)])
            res_u = np.concatenate([res_u, np.array(keep_u)])
    return ti, tj, res_t, res_u


def polyline_intersections(pa: np.ndarray, pb: np.ndarray):
    """All crossing points of two polylines as (distA, distB, angle) triples.

    distX is the arc length along polyline X to the crossing; angle is the
    unsigned angle between the local direction vectors, in (0, pi].
    """
    cuma = cumulative_lengths(pa)
    cumb = cumulative_lengths(pb)
    ti, tj, t, u = _segment_intersections(pa[:-1], pa[1:], pb[:-1], pb[1:])
    out = []
    seen = set()
    for i, j, tt, uu in zip(ti, tj, t, u):
        da = pa[i + 1] - pa[i]
        db_ = pb[j + 1] - pb[j]
        dist_a = cuma[i] + tt * math.hypot(*da)
        dist_b = cumb[j] + uu * math.hypot(*db_)
        key = (round(dist_a, 6), round(dist_b, 6))
        if key in seen:  # endpoint shared by two consecutive segments
            continue
        seen.add(key)
        na = math.hypot(*da)
        nb = math.hypot(*db_)
        if na == 0 or nb == 0:
            continue
        cosv = (da[0] * db_[0] + da[1] * db_[1]) / (na * nb)
        cosv = max(-1.0, min(1.0, cosv))
        angle = math.acos(cosv)
        out.append((float(dist_a), float(dist_b), float(angle)))
    out.sort()
    return out
