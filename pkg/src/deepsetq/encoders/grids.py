"""Fixed-size views of a state: the relational grid and the occupancy grid.

Both are derived from the relative feature set, so they see exactly what a
set encoder sees (vehicles within sensor range).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import D_MAX, N_STATIC, Observation, SetBatch

VEHICLE_LENGTH = 4.5


@dataclass(frozen=True)
class RelationalGridSpec:
    ahead: int = 2
    behind: int = 2
    lateral: int = 2

    @property
    def n_lanes(self) -> int:
        return 2 * self.lateral + 1

    @property
    def n_slots(self) -> int:
        return self.n_lanes * (self.ahead + self.behind)

    @property
    def size(self) -> int:
        return 2 * self.n_slots + N_STATIC


@dataclass(frozen=True)
class OccupancyGridSpec:
    rows: int = 80
    cols: int = 5
    d_max: float = D_MAX
    vehicle_length: float = VEHICLE_LENGTH

    @property
    def cell_length(self) -> float:
        return 2.0 * self.d_max / self.rows


def relational_grid_batch(sets: SetBatch, static: np.ndarray,
                          spec: RelationalGridSpec = RelationalGridSpec()) -> np.ndarray:
    """Relational grid for every state in a batch, shape [batch, spec.size].

    Slots run over lanes left to right (dl = -lateral .. +lateral); within a
    lane the nearest leaders come first, then the nearest followers. A
    vehicle with dr >= 0 counts as a leader. Empty slots hold dr = +1 for
    leaders, dr = -1 for followers, dv = 0.
    """
    per_lane = spec.ahead + spec.behind
    out = np.zeros((sets.size, spec.size), dtype=np.float32)
    slot_dr = out[:, 0:2 * spec.n_slots:2].reshape(sets.size, spec.n_lanes, per_lane)
    slot_dr[:, :, :spec.ahead] = 1.0
    slot_dr[:, :, spec.ahead:] = -1.0
    out[:, 2 * spec.n_slots:] = static

    feats = sets.features
    if len(feats):
        seg = sets.segments
        dr, dv, dl = feats[:, 0], feats[:, 1], np.rint(feats[:, 2]).astype(np.int64)
        keep = np.abs(dl) <= spec.lateral
        elem = np.flatnonzero(keep)
        leader = dr[elem] >= 0
        lane = dl[elem] + spec.lateral
        # Stable ranking by |dr| within each (state, lane, side) group; ties keep set order.
        order = np.lexsort((elem, np.abs(dr[elem]), ~leader, lane, seg[elem]))
        key = np.stack([seg[elem][order], lane[order], leader[order]], axis=1)
        new_group = np.ones(len(order), dtype=bool)
        new_group[1:] = np.any(key[1:] != key[:-1], axis=1)
        group_start = np.maximum.accumulate(np.where(new_group, np.arange(len(order)), 0))
        rank = np.arange(len(order)) - group_start
        sel_leader = leader[order]
        limit = np.where(sel_leader, spec.ahead, spec.behind)
        ok = rank < limit
        rows = elem[order][ok]
        slot = (lane[order][ok] * per_lane + np.where(sel_leader[ok], 0, spec.ahead) + rank[ok])
        b = seg[rows]
        out[b, 2 * slot] = dr[rows]
        out[b, 2 * slot + 1] = dv[rows]
    return out


def build_relational_grid(obs: Observation, spec: RelationalGridSpec = RelationalGridSpec()) -> np.ndarray:
    """Relational grid of one observation: 40 slot features followed by 3 static features."""
    return relational_grid_batch(SetBatch.from_sets([obs.dynamic]), obs.static[None, :], spec)[0]


def occupancy_grid_batch(sets: SetBatch, spec: OccupancyGridSpec = OccupancyGridSpec()) -> np.ndarray:
    """Occupancy grids, shape [batch, 1, rows, cols].

    Row ``r`` covers longitudinal offsets [-d_max + r*cell, -d_max + (r+1)*cell)
    relative to the ego front bumper; column ``c`` is relative lane ``c - cols//2``.
    A vehicle body spans [front - length, front). Vehicles are drawn only if
    their front lies in [-d_max, d_max) and their lane is inside the window.
    Occupied cells hold ``1 + dv``; ego cells hold 1; free cells hold 0.
    """
    grid = np.zeros((sets.size, 1, spec.rows, spec.cols), dtype=np.float32)
    cell = spec.cell_length
    half = spec.cols // 2

    def draw(batch_idx, front, col, value):
        rear = front - spec.vehicle_length
        first = np.maximum(np.floor((rear + spec.d_max) / cell).astype(np.int64), 0)
        last = np.minimum(np.ceil((front + spec.d_max) / cell).astype(np.int64) - 1, spec.rows - 1)
        span = int(np.ceil(spec.vehicle_length / cell)) + 1
        for k in range(span):
            row = first + k
            ok = row <= last
            grid[batch_idx[ok], 0, row[ok], col[ok]] = value[ok]

    feats = sets.features
    if len(feats):
        front = feats[:, 0].astype(np.float64) * spec.d_max
        dl = np.rint(feats[:, 2]).astype(np.int64)
        keep = (front >= -spec.d_max) & (front < spec.d_max) & (np.abs(dl) <= half)
        idx = np.flatnonzero(keep)
        draw(sets.segments[idx], front[idx], dl[idx] + half, 1.0 + feats[idx, 1])
    everyone = np.arange(sets.size)
    draw(everyone, np.zeros(sets.size), np.full(sets.size, half), np.ones(sets.size, np.float32))
    return grid


def build_occupancy_grid(obs: Observation, spec: OccupancyGridSpec = OccupancyGridSpec()) -> np.ndarray:
    """Occupancy grid of one observation, shape [rows, cols]."""
    return occupancy_grid_batch(SetBatch.from_sets([obs.dynamic]), spec)[0, 0]
