# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simulator kernels; mirrors ``_fallback.py`` operation for operation."""

import numpy as np

from libc.math cimport INFINITY
from libc.stdint cimport int64_t

cdef enum:
    NO_VEHICLE = -1


cdef inline bint _occupies(const int64_t[::1] lo, const int64_t[::1] hi, Py_ssize_t j, int64_t lane) nogil:
    return lo[j] <= lane and hi[j] >= lane


cdef void _neighbors(const double[::1] pos, const int64_t[::1] lo, const int64_t[::1] hi,
                     double ring, double length, Py_ssize_t i, int64_t lane,
                     Py_ssize_t* leader, double* lgap, Py_ssize_t* follower, double* fgap) nogil:
    cdef Py_ssize_t n = pos.shape[0], j
    cdef double half = 0.5 * ring, d
    cdef double best_ahead = INFINITY, best_behind = -INFINITY
    leader[0] = NO_VEHICLE
    follower[0] = NO_VEHICLE
    for j in range(n):
        if j == i or not _occupies(lo, hi, j, lane):
            continue
        d = pos[j] - pos[i]
        if d >= half:
            d = d - ring
        elif d < -half:
            d = d + ring
        if d >= 0:
            if d < best_ahead:
                best_ahead = d
                leader[0] = j
        else:
            if d > best_behind:
                best_behind = d
                follower[0] = j
    lgap[0] = best_ahead - length if leader[0] != NO_VEHICLE else INFINITY
    fgap[0] = -best_behind - length if follower[0] != NO_VEHICLE else INFINITY


def lane_leaders(const double[::1] pos, const int64_t[::1] lo, const int64_t[::1] hi,
                 double ring, double length):
    cdef Py_ssize_t n = pos.shape[0], i, j, side, best_j
    cdef int64_t lane
    cdef double d, best
    idx_lo = np.full(n, NO_VEHICLE, dtype=np.int64)
    idx_hi = np.full(n, NO_VEHICLE, dtype=np.int64)
    gap_lo = np.full(n, np.inf)
    gap_hi = np.full(n, np.inf)
    cdef int64_t[::1] il = idx_lo, ih = idx_hi
    cdef double[::1] gl = gap_lo, gh = gap_hi
    with nogil:
        for i in range(n):
            for side in range(2):
                lane = lo[i] if side == 0 else hi[i]
                if side == 1 and hi[i] == lo[i]:
                    ih[i] = il[i]
                    gh[i] = gl[i]
                    continue
                best = INFINITY
                best_j = NO_VEHICLE
                for j in range(n):
                    if j == i or not _occupies(lo, hi, j, lane):
                        continue
                    d = pos[j] - pos[i]
                    if d < 0:
                        d = d + ring
                    if d < best:
                        best = d
                        best_j = j
                if best_j != NO_VEHICLE:
                    if side == 0:
                        il[i] = best_j
                        gl[i] = best - length
                    else:
                        ih[i] = best_j
                        gh[i] = best - length
    return idx_lo, gap_lo, idx_hi, gap_hi


def lane_neighbors(const double[::1] pos, const int64_t[::1] lo, const int64_t[::1] hi,
                   double ring, double length, Py_ssize_t i, int64_t lane):
    cdef Py_ssize_t leader, follower
    cdef double lgap, fgap
    _neighbors(pos, lo, hi, ring, length, i, lane, &leader, &lgap, &follower, &fgap)
    return leader, lgap, follower, fgap


cdef inline double _anticipated(double own_vmax, Py_ssize_t leader, double gap,
                                const double[::1] speed, double lookahead) nogil:
    if leader == NO_VEHICLE or gap > lookahead:
        return own_vmax
    return own_vmax if own_vmax < speed[leader] else speed[leader]


cdef inline bint _safe(Py_ssize_t leader, double lgap, Py_ssize_t follower, double fgap,
                       double own_speed, const double[::1] speed, double min_gap, double headway) nogil:
    if leader != NO_VEHICLE and lgap < min_gap + headway * own_speed:
        return False
    if follower != NO_VEHICLE and fgap < min_gap + headway * speed[follower]:
        return False
    return True


cdef int64_t _choice(Py_ssize_t i, const double[::1] pos, const double[::1] speed,
                     const int64_t[::1] lane, const int64_t[::1] lo, const int64_t[::1] hi,
                     const double[::1] vmax, double ring, double length, int64_t n_lanes,
                     double min_gap, double headway, double gain, double coop, double u,
                     double gain_scale, double lookahead, double coop_range, double coop_margin) nogil:
    cdef int64_t own = lane[i], c, best, k
    cdef Py_ssize_t leader, follower, cl, cf
    cdef double lgap, fgap, cg, cfg, v_here, v_there, threshold, best_gain, best_v
    cdef double own_vmax = vmax[i]
    cdef int64_t safe_lane[2]
    cdef double safe_v[2]
    cdef int n_safe = 0
    _neighbors(pos, lo, hi, ring, length, i, own, &leader, &lgap, &follower, &fgap)
    v_here = _anticipated(own_vmax, leader, lgap, speed, lookahead)
    threshold = gain_scale / gain
    best = own
    best_gain = threshold
    for k in range(2):
        c = own - 1 if k == 0 else own + 1
        if c < 0 or c >= n_lanes:
            continue
        _neighbors(pos, lo, hi, ring, length, i, c, &cl, &cg, &cf, &cfg)
        if not _safe(cl, cg, cf, cfg, speed[i], speed, min_gap, headway):
            continue
        v_there = _anticipated(own_vmax, cl, cg, speed, lookahead)
        safe_lane[n_safe] = c
        safe_v[n_safe] = v_there
        n_safe += 1
        if v_there - v_here > best_gain:
            best = c
            best_gain = v_there - v_here
    if best != own or n_safe == 0:
        return best
    if (follower != NO_VEHICLE and fgap < coop_range and vmax[follower] > speed[i] + coop_margin
            and u < coop):
        best = own
        best_v = -INFINITY
        for k in range(n_safe):
            if safe_v[k] > best_v:
                best = safe_lane[k]
                best_v = safe_v[k]
    return best


def rule_based_choice(Py_ssize_t i, const double[::1] pos, const double[::1] speed,
                      const int64_t[::1] lane, const int64_t[::1] lo, const int64_t[::1] hi,
                      const double[::1] vmax, double ring, double length, int64_t n_lanes,
                      double min_gap, double headway, double gain, double coop, double u,
                      double gain_scale, double lookahead, double coop_range, double coop_margin):
    return _choice(i, pos, speed, lane, lo, hi, vmax, ring, length, n_lanes, min_gap, headway,
                   gain, coop, u, gain_scale, lookahead, coop_range, coop_margin)


def rule_based_decisions(const double[::1] pos, const double[::1] speed, const int64_t[::1] lane,
                         int64_t[::1] lo, int64_t[::1] hi, int64_t[::1] target, double[::1] elapsed,
                         const double[::1] vmax, const double[::1] gain, const double[::1] coop,
                         const double[::1] uniforms, Py_ssize_t start, double ring, double length,
                         int64_t n_lanes, double min_gap, double headway, double gain_scale,
                         double lookahead, double coop_range, double coop_margin):
    cdef Py_ssize_t n = pos.shape[0], i
    cdef int64_t c
    cdef int changes = 0
    with nogil:
        for i in range(start, n):
            if lo[i] != hi[i]:
                continue
            c = _choice(i, pos, speed, lane, lo, hi, vmax, ring, length, n_lanes, min_gap, headway,
                        gain[i], coop[i], uniforms[i], gain_scale, lookahead, coop_range, coop_margin)
            if c != lane[i]:
                target[i] = c
                lo[i] = lane[i] if lane[i] < c else c
                hi[i] = lane[i] if lane[i] > c else c
                elapsed[i] = 0.0
                changes += 1
    return changes
