"""Numba kernel following one point through the inducing construction.

The construction refines a starting interval into pieces; the fate of a piece
depends only on the piece itself.  Following the piece that contains a given
point therefore reproduces the construction along that point's ancestry.
The piece is kept as its current image ``W = [lo, lo + w]`` together with the
point's offset ``pos`` inside ``W``; during a binding period ``W`` is stored
as an offset from the critical orbit so that pieces within ``1e-12`` of a
critical point keep full relative precision.

Pieces reached by different points are identified by a hash of the image
intervals produced at every cut: points in the same piece perform identical
interval arithmetic, so they produce identical hashes.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from ..maps import _dfo, _diff, _diff2, _f

OK = 0
CENSORED = 1
FLOOR = 2
DEPTH = 3
NO_PREIMAGE = 4
STRIP = 5
STATUS_NAMES = {OK: "resolved", CENSORED: "censored", FLOOR: "resolution-floor",
                DEPTH: "too-deep", NO_PREIMAGE: "no-preimage", STRIP: "in-strip"}

CHAIN = 16
MAX_ITIN = 64

# integer outputs
I_STATUS, I_TIME, I_S, I_T, I_HASH, I_DEEP, I_SHALLOW, I_SS, I_SUMP, I_NRET, I_SPLITS = range(11)
I_CHAIN = 11
N_INT = I_CHAIN + CHAIN
# float outputs
F_LD, F_THETA, F_MIN_SS, F_MARKOV, F_IMG_LO, F_IMG_W, F_LD_LARGE = range(7)
N_FLOAT = 7


@njit(cache=True)
def _mix(h, v):
    h ^= v - 7046029254386353131 + (h << 6) + (h >> 2)
    return h


@njit(cache=True)
def _mix_float(h, x):
    mant, ex = math.frexp(x)
    h = _mix(h, np.int64(mant * 9007199254740992.0))
    return _mix(h, np.int64(ex))


@njit(cache=True)
def _mix_piece(h, n, lo, w):
    return _mix_float(_mix_float(_mix(h, np.int64(n)), lo), w)


@njit(cache=True)
def _level(h, x):
    """Largest ``p`` with ``h[p] >= x`` (``h`` nonincreasing, ``h[0] >= x``)."""
    top = h.shape[0] - 1
    if h[top] >= x:
        return top
    lo = 0
    hi = top
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if h[mid] >= x:
            lo = mid
        else:
            hi = mid
    return lo


@njit(cache=True)
def _edge_piece(crit, delta, lev, p_edge, j, s, lo, hi):
    """Level piece of ``c_j`` touching the edge of Delta on side ``s``, clipped."""
    p = p_edge[j, s]
    c = crit[j]
    if s == 1:
        a = c + lev[j, 1, p + 1]
        b = c + delta
    else:
        a = c - delta
        b = c - lev[j, 0, p + 1]
    return max(a, lo), min(b, hi), p


@njit(cache=True)
def _outside_component(crit, delta, lev, p_edge, lo, hi, y):
    """Component of ``[lo, hi] \\ Delta`` containing ``y`` and its merge partner.

    The partner is the adjacent level piece inside ``[lo, hi]``; when there
    are two the deeper one wins (ties go left).  Returns the component bounds
    and the partner's critical index and side, ``-1`` when there is none.
    """
    o_lo = lo
    o_hi = hi
    lj = -1
    rj = -1
    for j in range(crit.shape[0]):
        r = crit[j] + delta
        left = crit[j] - delta
        if r <= y and r >= o_lo:
            o_lo = r
            lj = j
        if left >= y and left <= o_hi:
            o_hi = left
            rj = j
    has_l = lj >= 0 and o_lo > lo
    has_r = rj >= 0 and o_hi < hi
    if has_l and has_r:
        if p_edge[rj, 0] > p_edge[lj, 1]:
            return o_lo, o_hi, rj, 0
        return o_lo, o_hi, lj, 1
    if has_l:
        return o_lo, o_hi, lj, 1
    if has_r:
        return o_lo, o_hi, rj, 0
    return o_lo, o_hi, -1, -1


@njit(cache=True)
def _subpiece(crit, delta, lev, depth, p_edge, lo, w, pos, merge):
    """Element of the level-set partition of ``[lo, lo + w]`` containing ``lo + pos``.

    Returns ``(status, new_lo, new_w, new_pos, p, ci)``; ``ci`` is the
    critical point the new piece binds to (``-1`` when ``p = 0``).  With
    ``merge`` the piece outside Delta is joined to its adjacent level piece.
    """
    hi = lo + w
    idx = -1
    e = 0.0
    for i in range(crit.shape[0]):
        e = (lo - crit[i]) + pos
        if abs(e) < delta:
            idx = i
            break
    if idx >= 0:
        if e == 0.0:
            return DEPTH, lo, w, pos, 0, -1
        s = 1 if e > 0.0 else 0
        p = _level(lev[idx, s], abs(e))
        if p >= depth:
            return DEPTH, lo, w, pos, p, idx
        c = crit[idx]
        if s == 1:
            a = c + lev[idx, 1, p + 1]
            b = c + lev[idx, 1, p]
        else:
            a = c - lev[idx, 0, p]
            b = c - lev[idx, 0, p + 1]
        a = max(a, lo)
        b = min(b, hi)
        if merge and p == p_edge[idx, s]:
            edge = c + delta if s == 1 else c - delta
            if (s == 1 and hi > edge) or (s == 0 and lo < edge):
                o_lo, o_hi, nj, ns = _outside_component(crit, delta, lev, p_edge, lo, hi, edge)
                if nj == idx and ns == s:
                    a = min(a, o_lo)
                    b = max(b, o_hi)
        if not b > a:
            return FLOOR, lo, w, pos, p, idx
        return OK, a, b - a, min(max((lo - a) + pos, 0.0), b - a), p, idx
    y = lo + pos
    o_lo, o_hi, nj, ns = _outside_component(crit, delta, lev, p_edge, lo, hi, y)
    if merge and nj >= 0:
        pa, pb, p = _edge_piece(crit, delta, lev, p_edge, nj, ns, lo, hi)
        a = min(o_lo, pa)
        b = max(o_hi, pb)
        if not b > a:
            return FLOOR, lo, w, pos, p, nj
        return OK, a, b - a, min(max((lo - a) + pos, 0.0), b - a), p, nj
    if not o_hi > o_lo:
        return FLOOR, lo, w, pos, 0, -1
    return OK, o_lo, o_hi - o_lo, min(max((lo - o_lo) + pos, 0.0), o_hi - o_lo), 0, -1


@njit(cache=True)
def _find_preimage(pre_x, pre_off, t0, a, b, centre):
    """Critical preimage of least depth in ``[a, b]`` (closest to ``centre``)."""
    for t in range(t0 + 1):
        s0 = pre_off[t]
        s1 = pre_off[t + 1]
        k = s0 + np.searchsorted(pre_x[s0:s1], a)
        best = -1
        bd = np.inf
        while k < s1 and pre_x[k] <= b:
            d = abs(pre_x[k] - centre)
            if d < bd:
                bd = d
                best = k
            k += 1
        if best >= 0:
            return best, t
    return -1, -1


@njit(cache=True)
def _lap_count(crit, x):
    k = 0
    for j in range(crit.shape[0]):
        if x > crit[j]:
            k += 1
    return k


@njit(cache=True)
def track(code, kp, crit, lev, p_edge, zorb, zcorr, fpar, ipar, pre_x, pre_off, pre_wlo,
          pre_whi, j_lo, j_w, theta, out_i, out_f, itin, trace):
    """Follow the point at relative position ``theta`` of ``J = [j_lo, j_lo + j_w]``.

    ``fpar = [delta, delta', eps, floor, omega0_lo, omega0_w]`` and
    ``ipar = [depth, n_max, full_return, t0, stop_at_strip]``.  With
    ``stop_at_strip = 1`` a point that falls into an ``eps``-strip stops with
    status ``STRIP``, the strip as image and its position as ``theta``; a
    fresh run on that strip continues it exactly.  With ``full_return = 0`` the
    run stops at the first large-scale time; otherwise large-scale pieces are
    split into a full return onto ``Omega0`` and two flanks that restart the
    construction.  Results go to ``out_i``/``out_f`` (see the ``I_*``/``F_*``
    indices), returns to ``itin`` (rows ``nu, p, deep``) and the lap of the
    piece at each step to ``trace`` (both may be empty).
    """
    delta = fpar[0]
    dprime = fpar[1]
    eps = fpar[2]
    floor = fpar[3]
    om_lo = fpar[4]
    om_w = fpar[5]
    depth = ipar[0]
    n_max = ipar[1]
    full = ipar[2]
    t0 = ipar[3]
    stop_strip = ipar[4]
    nc = crit.shape[0]
    n_tr = trace.shape[0]
    n_it = itin.shape[0]

    for k in range(out_i.shape[0]):
        out_i[k] = 0
    for k in range(out_f.shape[0]):
        out_f[k] = 0.0
    out_f[F_MIN_SS] = np.inf

    lo = j_lo
    w = j_w
    pos = min(max(theta, 0.0), 1.0) * j_w
    n = 0
    s = 0
    ld = 0.0
    h = np.int64(1469598103934665603)
    status = -1
    nret = 0
    ndeep = 0
    nshal = 0
    nss = 0
    sump = 0
    splits = 0
    prev_shallow = False
    ld_prev = 0.0
    fresh = True
    bind_p = 0
    bind_ci = -1

    while status < 0:
        if fresh:
            st, a, ww, pp, p, ci = _subpiece(crit, delta, lev, depth, p_edge, lo, w, pos, False)
            if st != OK:
                status = st
                break
            if a != lo or ww != w:
                h = _mix_piece(h, n, a, ww)
            lo = a
            w = ww
            pos = pp
            fresh = False
            prev_shallow = False
            if p > 0:
                if nret < n_it:
                    itin[nret, 0] = n
                    itin[nret, 1] = p
                    itin[nret, 2] = 1
                nret += 1
                ndeep += 1
                sump += p
                bind_p = p
                bind_ci = ci
            else:
                bind_p = -1  # one free step before the next Delta check
        elif n >= n_max:
            status = CENSORED
            break
        elif w < floor:
            status = FLOOR
            break
        else:
            hit = False
            for j in range(nc):
                if lo < crit[j] + delta and lo + w > crit[j] - delta:
                    hit = True
            if not hit:
                bind_p = -1
            else:
                if w >= dprime:
                    if pos >= eps and pos <= w - eps:
                        # large scale at time n
                        s += 1
                        if s <= CHAIN:
                            out_i[I_CHAIN + s - 1] = n
                        m_lo = lo + eps
                        m_w = w - 2.0 * eps
                        mpos = pos - eps
                        out_f[F_LD_LARGE] = ld
                        if full == 0:
                            out_f[F_IMG_LO] = m_lo
                            out_f[F_IMG_W] = m_w
                            out_f[F_THETA] = mpos / m_w
                            status = OK
                            break
                        kx, tt = _find_preimage(pre_x, pre_off, t0, m_lo + 0.4 * m_w,
                                                m_lo + 0.6 * m_w, m_lo + 0.5 * m_w)
                        if kx < 0:
                            status = NO_PREIMAGE
                            break
                        xl = pre_wlo[kx]
                        xh = pre_whi[kx]
                        y = m_lo + mpos
                        if y >= xl and y <= xh:
                            lo = xl
                            w = xh - xl
                            pos = min(max((m_lo - xl) + mpos, 0.0), w)
                            h = _mix_piece(h, n, lo, w)
                            for _ in range(tt):
                                if n < n_tr:
                                    trace[n] = _lap_count(crit, lo + 0.5 * w)
                                ld += math.log(abs(_dfo(code, kp, lo, pos)))
                                fa = _f(code, kp, lo)
                                d = _diff2(code, kp, lo, 0.0, w)
                                g = _diff2(code, kp, lo, 0.0, pos)
                                if d >= 0.0:
                                    lo = fa
                                    w = d
                                    pos = g
                                else:
                                    lo = fa + d
                                    w = -d
                                    pos = g - d
                                pos = min(max(pos, 0.0), w)
                                n += 1
                            out_i[I_T] = tt
                            out_f[F_THETA] = pos / w
                            out_f[F_MARKOV] = max(abs(lo - om_lo), abs(lo + w - om_lo - om_w)) / om_w
                            out_f[F_IMG_LO] = lo
                            out_f[F_IMG_W] = w
                            status = OK
                            break
                        if y < xl:
                            lo = m_lo
                            w = xl - m_lo
                            pos = min(mpos, w)
                        else:
                            lo = xh
                            w = m_lo + m_w - xh
                            pos = min(max((m_lo - xh) + mpos, 0.0), w)
                        h = _mix_piece(h, n, lo, w)
                        fresh = True
                        continue
                    # the point lies in an eps-strip
                    if stop_strip != 0:
                        out_f[F_IMG_LO] = lo if pos < eps else lo + w - eps
                        out_f[F_IMG_W] = eps
                        out_f[F_THETA] = (pos if pos < eps else pos - (w - eps)) / eps
                        status = STRIP
                        break
                    if pos < eps:
                        st, a, ww, pp, p, ci = _subpiece(crit, delta, lev, depth, p_edge,
                                                         lo, eps, pos, False)
                    else:
                        st, a, ww, pp, p, ci = _subpiece(crit, delta, lev, depth, p_edge,
                                                         lo + w - eps, eps, pos - (w - eps), False)
                else:
                    st, a, ww, pp, p, ci = _subpiece(crit, delta, lev, depth, p_edge,
                                                     lo, w, pos, True)
                if st != OK:
                    status = st
                    break
                h = _mix_piece(h, n, a, ww)
                lo = a
                w = ww
                pos = pp
                if nret < n_it:
                    itin[nret, 0] = n
                    itin[nret, 1] = p
                    itin[nret, 2] = 1 if p > 0 else 0
                nret += 1
                if p > 0:
                    ndeep += 1
                    sump += p
                    prev_shallow = False
                    bind_p = p
                    bind_ci = ci
                else:
                    nshal += 1
                    if prev_shallow:
                        nss += 1
                        if ld - ld_prev < out_f[F_MIN_SS]:
                            out_f[F_MIN_SS] = ld - ld_prev
                    prev_shallow = True
                    ld_prev = ld
                    bind_p = -1

        if bind_p > 0:
            # binding period: W = z_k + [e_lo, e_lo + w]
            ci = bind_ci
            e_lo = lo - crit[ci]
            for k in range(bind_p):
                if n >= n_max:
                    status = CENSORED
                    break
                z = zorb[ci, k]
                for j in range(nc):
                    dj = (z - crit[j]) + e_lo
                    if dj < 0.0 and dj + w > 0.0:
                        cut = -dj
                        if pos < cut:
                            w = cut
                        else:
                            e_lo = e_lo + cut
                            w = w - cut
                            pos = pos - cut
                        splits += 1
                        h = _mix_piece(h, n, e_lo, w)
                if n < n_tr:
                    trace[n] = _lap_count(crit, z + (e_lo + 0.5 * w))
                dv = abs(_dfo(code, kp, z, e_lo + pos))
                ld += math.log(dv) if dv > 0.0 else -np.inf
                fa = _diff(code, kp, z, e_lo) + zcorr[ci, k]
                d = _diff2(code, kp, z, e_lo, w)
                g = _diff2(code, kp, z, e_lo, pos)
                if d >= 0.0:
                    e_lo = fa
                    w = d
                    pos = g
                else:
                    e_lo = fa + d
                    w = -d
                    pos = g - d
                pos = min(max(pos, 0.0), w)
                n += 1
            if status >= 0:
                break
            lo = zorb[ci, bind_p] + e_lo
            bind_p = 0
        elif bind_p < 0:
            if n >= n_max:
                status = CENSORED
                break
            if n < n_tr:
                trace[n] = _lap_count(crit, lo + 0.5 * w)
            dv = abs(_dfo(code, kp, lo, pos))
            ld += math.log(dv) if dv > 0.0 else -np.inf
            fa = _f(code, kp, lo)
            d = _diff2(code, kp, lo, 0.0, w)
            g = _diff2(code, kp, lo, 0.0, pos)
            if d >= 0.0:
                lo = fa
                w = d
                pos = g
            else:
                lo = fa + d
                w = -d
                pos = g - d
            pos = min(max(pos, 0.0), w)
            n += 1
            bind_p = 0

    out_i[I_STATUS] = status
    out_i[I_TIME] = n
    out_i[I_S] = s
    out_i[I_HASH] = h
    out_i[I_DEEP] = ndeep
    out_i[I_SHALLOW] = nshal
    out_i[I_SS] = nss
    out_i[I_SUMP] = sump
    out_i[I_NRET] = nret
    out_i[I_SPLITS] = splits
    out_f[F_LD] = ld
    if status != OK:
        out_f[F_THETA] = pos / w if w > 0.0 else 0.0
    return status


@njit(cache=True)
def track_many(code, kp, crit, lev, p_edge, zorb, zcorr, fpar, ipar, pre_x, pre_off,
               pre_wlo, pre_whi, j_lo, j_w, thetas, out_i, out_f, itin):
    """Run :func:`track` for every ``theta``; ``itin`` has shape ``(M, k, 3)``."""
    empty = np.empty(0, dtype=np.int8)
    for i in range(thetas.shape[0]):
        track(code, kp, crit, lev, p_edge, zorb, zcorr, fpar, ipar, pre_x, pre_off, pre_wlo,
              pre_whi, j_lo, j_w, thetas[i], out_i[i], out_f[i], itin[i], empty)


@njit(cache=True)
def track_batch(code, kp, crit, lev, p_edge, zorb, zcorr, fpar, ipar, pre_x, pre_off,
                pre_wlo, pre_whi, j_lo, j_w, thetas, n_left, out_i, out_f):
    """Run :func:`track` with a separate interval and horizon per point."""
    empty = np.empty(0, dtype=np.int8)
    itin = np.empty((0, 3), dtype=np.int64)
    ip = ipar.copy()
    for i in range(thetas.shape[0]):
        ip[1] = n_left[i]
        track(code, kp, crit, lev, p_edge, zorb, zcorr, fpar, ip, pre_x, pre_off, pre_wlo,
              pre_whi, j_lo[i], j_w[i], thetas[i], out_i[i], out_f[i], itin, empty)
