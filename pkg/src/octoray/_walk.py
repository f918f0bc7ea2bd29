"""Numba kernels for the canonical voxel walk, its box-clipped form, and slab tests.

The walk is fully determined by the start key, the end key and the per-plane
crossing parameters ``(origin + i * res - o) * q`` with ``q = 1 / d`` computed
once per walk. Every caller (full DDA,
clipped DDA, baseline inserter, parallel shooter) goes through these kernels,
which is what makes the clipped and unclipped traversals agree key for key.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

KEY_BITS = 21
KEY_MASK = (1 << KEY_BITS) - 1

# ray_setup status bits
CLIP_START = 1
CLIP_END = 2
MISS = 4

INF = np.inf


@njit(cache=True, nogil=True, inline="always")
def pack_key(x, y, z):
    return (np.int64(x) << 42) | (np.int64(y) << 21) | np.int64(z)


@njit(cache=True, nogil=True, inline="always")
def plane_time(org, i, res, o, q):
    # q is the reciprocal direction component; callers never pass q == 0
    return (org + i * res - o) * q


@njit(cache=True, nogil=True)
def reciprocal_into(d, q):
    """q = 1 / d per component, 0 on zero components (the walk's step direction source)."""
    for a in range(3):
        q[a] = 0.0 if d[a] == 0.0 else 1.0 / d[a]


@njit(cache=True, nogil=True)
def reciprocal(d):
    q = np.empty(3)
    reciprocal_into(d, q)
    return q


@njit(cache=True, nogil=True)
def ray_setup(o, d, t_max, org, res, size, k0, ke, span):
    """Clip the segment to the workspace and compute its start/end keys.

    Writes ``k0``/``ke`` and the clipped parameter range into ``span``.
    Returns a bit set of CLIP_START / CLIP_END / MISS.
    """
    t0 = 0.0
    t1 = t_max
    flags = 0
    for a in range(3):
        lo = org[a]
        hi = org[a] + size * res
        if d[a] == 0.0:
            if o[a] < lo or o[a] >= hi:
                return MISS
        else:
            ta = (lo - o[a]) / d[a]
            tb = (hi - o[a]) / d[a]
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
                flags |= CLIP_START
            if tb <= t1:
                t1 = tb
                flags |= CLIP_END
    if t0 > t1:
        return MISS
    span[0] = t0
    span[1] = t1
    for a in range(3):
        s = math.floor((o[a] + t0 * d[a] - org[a]) / res)
        e = math.floor((o[a] + t1 * d[a] - org[a]) / res)
        s = min(max(s, 0.0), size - 1.0)
        e = min(max(e, 0.0), size - 1.0)
        k0[a] = np.int64(s)
        ke[a] = np.int64(e)
        # monotone guard; only reachable through clamping
        if d[a] > 0.0 and ke[a] < k0[a]:
            ke[a] = k0[a]
        elif d[a] < 0.0 and ke[a] > k0[a]:
            ke[a] = k0[a]
        elif d[a] == 0.0:
            ke[a] = k0[a]
    return flags


@njit(cache=True, nogil=True, inline="always")
def walk_length(k0, ke):
    return abs(ke[0] - k0[0]) + abs(ke[1] - k0[1]) + abs(ke[2] - k0[2]) + 1


@njit(cache=True, nogil=True, inline="always")
def _sign(v):
    if v > 0.0:
        return 1
    if v < 0.0:
        return -1
    return 0


@njit(cache=True, nogil=True, inline="always")
def _next_time(org, res, o, q, step, cur, end):
    """Crossing time of the next plane on one axis, or +inf when the axis is done."""
    if step > 0 and cur < end:
        return plane_time(org, cur + 1, res, o, q)
    if step < 0 and cur > end:
        return plane_time(org, cur, res, o, q)
    return INF


@njit(cache=True, nogil=True, inline="always")
def _pick(tx, ty, tz):
    """Axis of the earliest crossing with x -> y -> z tie-break, -1 if none."""
    if tx == INF and ty == INF and tz == INF:
        return -1
    if tx <= ty and tx <= tz:
        return 0
    if ty <= tz:
        return 1
    return 2


@njit(cache=True, nogil=True)
def full_walk(o, q, org, res, k0, ke, out):
    """Write the walk from k0 to ke into ``out`` (n, 3); return n. ``q`` is the reciprocal direction."""
    cx, cy, cz = k0[0], k0[1], k0[2]
    ex, ey, ez = ke[0], ke[1], ke[2]
    sx, sy, sz = _sign(q[0]), _sign(q[1]), _sign(q[2])
    ox, oy, oz = o[0], o[1], o[2]
    dx, dy, dz = q[0], q[1], q[2]
    gx, gy, gz = org[0], org[1], org[2]
    tx = _next_time(gx, res, ox, dx, sx, cx, ex)
    ty = _next_time(gy, res, oy, dy, sy, cy, ey)
    tz = _next_time(gz, res, oz, dz, sz, cz, ez)
    n = 0
    while True:
        out[n, 0] = cx
        out[n, 1] = cy
        out[n, 2] = cz
        n += 1
        a = _pick(tx, ty, tz)
        if a < 0:
            break
        if a == 0:
            cx += sx
            tx = _next_time(gx, res, ox, dx, sx, cx, ex)
        elif a == 1:
            cy += sy
            ty = _next_time(gy, res, oy, dy, sy, cy, ey)
        else:
            cz += sz
            tz = _next_time(gz, res, oz, dz, sz, cz, ez)
    return n


@njit(cache=True, nogil=True, inline="always")
def _event_before(t1, a1, t2, a2):
    if a1 == a2:
        return True
    return t1 < t2 or (t1 == t2 and a1 < a2)


@njit(cache=True, nogil=True, inline="always")
def _axis_window(org, res, o, q, k0, ke, lo, hi):
    """Per-axis entry/exit crossings of the walk into the key interval [lo, hi).

    Returns (overlaps, has_in, t_in, has_out, t_out).
    """
    if q > 0.0:
        if ke < lo or k0 > hi - 1:
            return False, False, 0.0, False, 0.0
        has_in = k0 < lo
        t_in = plane_time(org, lo, res, o, q) if has_in else 0.0
        has_out = ke > hi - 1
        t_out = plane_time(org, hi, res, o, q) if has_out else 0.0
        return True, has_in, t_in, has_out, t_out
    if q < 0.0:
        if k0 < lo or ke > hi - 1:
            return False, False, 0.0, False, 0.0
        has_in = k0 > hi - 1
        t_in = plane_time(org, hi, res, o, q) if has_in else 0.0
        has_out = ke < lo
        t_out = plane_time(org, lo, res, o, q) if has_out else 0.0
        return True, has_in, t_in, has_out, t_out
    if k0 < lo or k0 > hi - 1:
        return False, False, 0.0, False, 0.0
    return True, False, 0.0, False, 0.0


@njit(cache=True, nogil=True, inline="always")
def _entry_index(org, res, o, q, k0, ke, lo, hi, axis, et, ea):
    """Index on ``axis`` once every crossing ordered before the entry event (et, ea) is applied."""
    if axis == ea:
        return lo if q > 0.0 else hi - 1
    if q == 0.0 or ea < 0:
        return k0
    if q > 0.0:
        # largest v in [lo_v, hi_v] whose entering plane v is crossed before the entry event
        lo_v = max(lo, k0)
        hi_v = min(hi - 1, ke)
    else:
        # smallest v whose entering plane v + 1 is crossed before the entry event
        lo_v = max(lo, ke)
        hi_v = min(hi - 1, k0)
    if lo_v == hi_v:
        return lo_v
    # position estimate, then exact correction against the event order
    g = math.floor((o + et / q - org) / res)
    v = np.int64(min(max(g, float(lo_v)), float(hi_v)))
    if q > 0.0:
        while v < hi_v and _event_before(plane_time(org, v + 1, res, o, q), axis, et, ea):
            v += 1
        while v > lo_v and not _event_before(plane_time(org, v, res, o, q), axis, et, ea):
            v -= 1
    else:
        while v > lo_v and _event_before(plane_time(org, v, res, o, q), axis, et, ea):
            v -= 1
        while v < hi_v and not _event_before(plane_time(org, v + 1, res, o, q), axis, et, ea):
            v += 1
    return v


@njit(cache=True, nogil=True, inline="always")
def _cell_events(org, res, o, q, k0, ke, k):
    """Entry/exit crossings of the walk through index k on one axis.

    Returns (on_range, has_in, t_in, has_out, t_out).
    """
    if q > 0.0:
        if k < k0 or k > ke:
            return False, False, 0.0, False, 0.0
        has_in = k > k0
        has_out = k < ke
        t_in = plane_time(org, k, res, o, q) if has_in else 0.0
        t_out = plane_time(org, k + 1, res, o, q) if has_out else 0.0
        return True, has_in, t_in, has_out, t_out
    if q < 0.0:
        if k > k0 or k < ke:
            return False, False, 0.0, False, 0.0
        has_in = k < k0
        has_out = k > ke
        t_in = plane_time(org, k + 1, res, o, q) if has_in else 0.0
        t_out = plane_time(org, k, res, o, q) if has_out else 0.0
        return True, has_in, t_in, has_out, t_out
    return k == k0, False, 0.0, False, 0.0


@njit(cache=True, nogil=True)
def walk_visits(o, q, org, res, k0, ke, x, y, z):
    """True when the walk from k0 to ke passes through voxel (x, y, z)."""
    okx, inx, tix, outx, tox = _cell_events(org[0], res, o[0], q[0], k0[0], ke[0], x)
    if not okx:
        return False
    oky, iny, tiy, outy, toy = _cell_events(org[1], res, o[1], q[1], k0[1], ke[1], y)
    if not oky:
        return False
    okz, inz, tiz, outz, toz = _cell_events(org[2], res, o[2], q[2], k0[2], ke[2], z)
    if not okz:
        return False
    ea = -1
    et = 0.0
    if inx:
        ea, et = 0, tix
    if iny and (ea < 0 or _event_before(et, ea, tiy, 1)):
        ea, et = 1, tiy
    if inz and (ea < 0 or _event_before(et, ea, tiz, 2)):
        ea, et = 2, tiz
    if ea < 0:
        return True
    if outx and not _event_before(et, ea, tox, 0):
        return False
    if outy and not _event_before(et, ea, toy, 1):
        return False
    if outz and not _event_before(et, ea, toz, 2):
        return False
    return True


@njit(cache=True, nogil=True)
def clipped_walk(o, q, org, res, k0, ke, los, his, p, out):
    """Write the walk keys that fall inside the key box [los[p], his[p]) into ``out``.

    Returns the number of keys written (0 when the walk never enters the box).
    """
    ox, oy, oz = o[0], o[1], o[2]
    dx, dy, dz = q[0], q[1], q[2]
    gx, gy, gz = org[0], org[1], org[2]
    okx, inx, tix, outx, tox = _axis_window(gx, res, ox, dx, k0[0], ke[0], los[p, 0], his[p, 0])
    if not okx:
        return 0
    oky, iny, tiy, outy, toy = _axis_window(gy, res, oy, dy, k0[1], ke[1], los[p, 1], his[p, 1])
    if not oky:
        return 0
    okz, inz, tiz, outz, toz = _axis_window(gz, res, oz, dz, k0[2], ke[2], los[p, 2], his[p, 2])
    if not okz:
        return 0

    # entry: latest "in" crossing; exit: earliest "out" crossing
    ea = -1
    et = 0.0
    if inx:
        ea, et = 0, tix
    if iny and (ea < 0 or _event_before(et, ea, tiy, 1)):
        ea, et = 1, tiy
    if inz and (ea < 0 or _event_before(et, ea, tiz, 2)):
        ea, et = 2, tiz
    xa = -1
    xt = 0.0
    if outx:
        xa, xt = 0, tox
    if outy and (xa < 0 or _event_before(toy, 1, xt, xa)):
        xa, xt = 1, toy
    if outz and (xa < 0 or _event_before(toz, 2, xt, xa)):
        xa, xt = 2, toz
    if ea >= 0 and xa >= 0 and not _event_before(et, ea, xt, xa):
        return 0

    cx = _entry_index(gx, res, ox, dx, k0[0], ke[0], los[p, 0], his[p, 0], 0, et, ea)
    cy = _entry_index(gy, res, oy, dy, k0[1], ke[1], los[p, 1], his[p, 1], 1, et, ea)
    cz = _entry_index(gz, res, oz, dz, k0[2], ke[2], los[p, 2], his[p, 2], 2, et, ea)
    sx, sy, sz = _sign(dx), _sign(dy), _sign(dz)
    ex, ey, ez = ke[0], ke[1], ke[2]
    tx = _next_time(gx, res, ox, dx, sx, cx, ex)
    ty = _next_time(gy, res, oy, dy, sy, cy, ey)
    tz = _next_time(gz, res, oz, dz, sz, cz, ez)
    n = 0
    while True:
        out[n, 0] = cx
        out[n, 1] = cy
        out[n, 2] = cz
        n += 1
        a = _pick(tx, ty, tz)
        if a < 0:
            break
        if a == 0:
            cx += sx
            if cx < los[p, 0] or cx >= his[p, 0]:
                break
            tx = _next_time(gx, res, ox, dx, sx, cx, ex)
        elif a == 1:
            cy += sy
            if cy < los[p, 1] or cy >= his[p, 1]:
                break
            ty = _next_time(gy, res, oy, dy, sy, cy, ey)
        else:
            cz += sz
            if cz < los[p, 2] or cz >= his[p, 2]:
                break
            tz = _next_time(gz, res, oz, dz, sz, cz, ez)
    return n


@njit(cache=True, nogil=True, inline="always")
def slab(o, d, t_lo, t_hi, mn, mx, pad):
    """Slab test of segment [t_lo, t_hi] against [mn, mx].

    pad == 0: exact test, positive-measure overlap only (t_enter < t_exit,
    strict interior for axis-parallel rays). pad > 0: boxes and range are
    inflated by ``pad`` and touching counts as overlap.
    """
    t0 = t_lo
    t1 = t_hi
    if pad > 0.0:
        t0 -= pad
        t1 += pad
    for a in range(3):
        lo = mn[a] - pad
        hi = mx[a] + pad
        if d[a] == 0.0:
            if pad > 0.0:
                if o[a] < lo or o[a] > hi:
                    return False
            elif o[a] <= lo or o[a] >= hi:
                return False
        else:
            ta = (lo - o[a]) / d[a]
            tb = (hi - o[a]) / d[a]
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
    if pad > 0.0:
        return t0 <= t1
    return t0 < t1
