"""Pure numpy implementations of the simulator kernels.

These are the reference for the compiled versions in ``_kernels.pyx``; both
perform the same floating-point operations in the same order so the two
backends produce bit-identical trajectories.
"""

from __future__ import annotations

import numpy as np

NO_VEHICLE = -1


def _forward_distance(pos: np.ndarray, i: int, ring: float) -> np.ndarray:
    d = pos - pos[i]
    return np.where(d < 0, d + ring, d)


def _signed_distance(pos: np.ndarray, i: int, ring: float) -> np.ndarray:
    half = 0.5 * ring
    d = pos - pos[i]
    d = np.where(d >= half, d - ring, d)
    return np.where(d < -half, d + ring, d)


def lane_leaders(pos, lo, hi, ring: float, length: float):
    """Nearest vehicle ahead in each of a vehicle's occupied lanes.

    Returns ``(leader_lo, gap_lo, leader_hi, gap_hi)``: for vehicle ``i`` the
    leader in lane ``lo[i]`` and in lane ``hi[i]`` (identical when the vehicle
    is not changing lanes), with bumper-to-bumper gaps. Missing leaders are
    ``-1`` with gap ``inf``.
    """
    n = len(pos)
    out_idx = [np.full(n, NO_VEHICLE, dtype=np.int64), np.full(n, NO_VEHICLE, dtype=np.int64)]
    out_gap = [np.full(n, np.inf), np.full(n, np.inf)]
    for i in range(n):
        d = _forward_distance(pos, i, ring)
        for side, lane in enumerate((lo[i], hi[i])):
            if side == 1 and hi[i] == lo[i]:
                out_idx[1][i], out_gap[1][i] = out_idx[0][i], out_gap[0][i]
                continue
            mask = (lo <= lane) & (hi >= lane)
            mask[i] = False
            if not mask.any():
                continue
            cand = np.where(mask, d, np.inf)
            j = int(np.argmin(cand))
            out_idx[side][i] = j
            out_gap[side][i] = cand[j] - length
    return out_idx[0], out_gap[0], out_idx[1], out_gap[1]


def lane_neighbors(pos, lo, hi, ring: float, length: float, i: int, lane: int):
    """Nearest leader and follower of vehicle ``i`` among occupants of ``lane``.

    Returns ``(leader, leader_gap, follower, follower_gap)``. Gaps are
    bumper-to-bumper and negative when bodies overlap longitudinally.
    """
    mask = (lo <= lane) & (hi >= lane)
    mask[i] = False
    d = _signed_distance(pos, i, ring)
    ahead = mask & (d >= 0)
    behind = mask & (d < 0)
    leader, lgap, follower, fgap = NO_VEHICLE, np.inf, NO_VEHICLE, np.inf
    if ahead.any():
        cand = np.where(ahead, d, np.inf)
        leader = int(np.argmin(cand))
        lgap = cand[leader] - length
    if behind.any():
        cand = np.where(behind, d, -np.inf)
        follower = int(np.argmax(cand))
        fgap = -cand[follower] - length
    return leader, float(lgap), follower, float(fgap)


def _anticipated_speed(own_vmax, leader, gap, speed, lookahead):
    if leader == NO_VEHICLE or gap > lookahead:
        return own_vmax
    return min(own_vmax, speed[leader])


def _safe(leader, lgap, follower, fgap, own_speed, speed, min_gap, headway):
    if leader != NO_VEHICLE and lgap < min_gap + headway * own_speed:
        return False
    if follower != NO_VEHICLE and fgap < min_gap + headway * speed[follower]:
        return False
    return True


def rule_based_choice(i, pos, speed, lane, lo, hi, vmax, ring, length, n_lanes, min_gap, headway,
                      gain, coop, u, gain_scale, lookahead, coop_range, coop_margin):
    """Lane chosen by the rule-based heuristic for vehicle ``i`` (its own lane if none)."""
    own = int(lane[i])
    leader, lgap, follower, fgap = lane_neighbors(pos, lo, hi, ring, length, i, own)
    own_vmax = vmax[i]
    v_here = _anticipated_speed(own_vmax, leader, lgap, speed, lookahead)
    threshold = gain_scale / gain
    best, best_gain = own, threshold
    safe_lanes = []
    for c in (own - 1, own + 1):
        if c < 0 or c >= n_lanes:
            continue
        cl, cg, cf, cfg = lane_neighbors(pos, lo, hi, ring, length, i, c)
        if not _safe(cl, cg, cf, cfg, speed[i], speed, min_gap, headway):
            continue
        v_there = _anticipated_speed(own_vmax, cl, cg, speed, lookahead)
        safe_lanes.append((c, v_there))
        if v_there - v_here > best_gain:
            best, best_gain = c, v_there - v_here
    if best != own or not safe_lanes:
        return best
    if (follower != NO_VEHICLE and fgap < coop_range and vmax[follower] > speed[i] + coop_margin
            and u < coop):
        best, best_v = own, -np.inf
        for c, v_there in safe_lanes:
            if v_there > best_v:
                best, best_v = c, v_there
    return best


def rule_based_decisions(pos, speed, lane, lo, hi, target, elapsed, vmax, gain, coop, uniforms,
                         start, ring, length, n_lanes, min_gap, headway, gain_scale, lookahead,
                         coop_range, coop_margin):
    """Run the heuristic for vehicles ``start..n-1`` in id order, starting changes in place.

    A change registers its two-lane occupancy immediately, so later vehicles
    in the same sweep see it. Returns the number of changes started.
    """
    changes = 0
    for i in range(start, len(pos)):
        if lo[i] != hi[i]:
            continue
        c = rule_based_choice(i, pos, speed, lane, lo, hi, vmax, ring, length, n_lanes, min_gap,
                              headway, gain[i], coop[i], uniforms[i], gain_scale, lookahead,
                              coop_range, coop_margin)
        if c != lane[i]:
            target[i] = c
            lo[i] = min(lane[i], c)
            hi[i] = max(lane[i], c)
            elapsed[i] = 0.0
            changes += 1
    return changes
