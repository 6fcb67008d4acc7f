"""Relative per-vehicle features and ragged set batches."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

D_MAX = 80.0
DV_EPS = 1e-3
DV_CLIP = 20.0
N_FEATURES = 3  # (dr, dv, dl)
N_STATIC = 3    # (v_ego / v_desired, left_available, right_available)


@dataclass(frozen=True)
class Scene:
    """Immutable snapshot of a ring-road scene as seen by feature extraction."""

    positions: np.ndarray  # front bumper, metres along the ring
    lanes: np.ndarray      # observed lane index, 0 = leftmost
    speeds: np.ndarray
    ring_length: float
    n_lanes: int
    ids: np.ndarray | None = None


@dataclass
class Observation:
    dynamic: np.ndarray  # [k, 3] float32 rows of (dr, dv, dl)
    static: np.ndarray   # [3] float32

    def __len__(self) -> int:
        return len(self.dynamic)


def signed_ring_gap(p_from, p_to, ring_length: float):
    """Minimal-magnitude signed distance from ``p_from`` to ``p_to`` on the ring."""
    d = np.asarray(p_to, dtype=np.float64) - np.asarray(p_from, dtype=np.float64)
    d = np.where(d >= 0.5 * ring_length, d - ring_length, d)
    d = np.where(d < -0.5 * ring_length, d + ring_length, d)
    return d


def extract_features(scene: Scene, ego: int, d_max: float = D_MAX,
                     v_desired: float = 24.0) -> Observation:
    """Build the dynamic set and static vector for vehicle ``ego``.

    Vehicles whose signed ring gap satisfies ``|gap| <= d_max`` are included.
    The set is sorted by (dl, dr, id) so logs are stable; encoders do not
    depend on this order.
    """
    if d_max <= 0:
        raise ValueError(f"d_max must be positive, got {d_max}")
    n = len(scene.positions)
    ids = scene.ids if scene.ids is not None else np.arange(n)
    others = np.arange(n) != ego
    gap = signed_ring_gap(scene.positions[ego], scene.positions, scene.ring_length)
    visible = others & (np.abs(gap) <= d_max)
    v_ego = float(scene.speeds[ego])
    dr = gap[visible] / d_max
    dv = np.clip((scene.speeds[visible] - v_ego) / (v_ego + DV_EPS), -DV_CLIP, DV_CLIP)
    dl = (scene.lanes[visible] - scene.lanes[ego]).astype(np.float64)
    order = np.lexsort((ids[visible], dr, dl))
    dynamic = np.stack([dr[order], dv[order], dl[order]], axis=1).astype(np.float32)
    lane = int(scene.lanes[ego])
    static = np.array([v_ego / v_desired, float(lane > 0), float(lane < scene.n_lanes - 1)],
                      dtype=np.float32)
    return Observation(dynamic.reshape(-1, N_FEATURES), static)


@dataclass
class SetBatch:
    """Variable-sized sets stored as concatenated rows plus offsets.

    Set ``i`` owns rows ``features[offsets[i]:offsets[i + 1]]``.
    """

    features: np.ndarray
    offsets: np.ndarray

    @classmethod
    def from_sets(cls, sets) -> SetBatch:
        sets = [np.asarray(s, dtype=np.float32).reshape(-1, N_FEATURES) for s in sets]
        lengths = np.array([len(s) for s in sets], dtype=np.int64)
        offsets = np.zeros(len(sets) + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        feats = np.concatenate(sets) if sets else np.zeros((0, N_FEATURES), np.float32)
        return cls(feats.reshape(-1, N_FEATURES), offsets)

    @property
    def size(self) -> int:
        return len(self.offsets) - 1

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    @cached_property
    def segments(self) -> np.ndarray:
        return np.repeat(np.arange(self.size), self.lengths)

    @cached_property
    def nonempty(self) -> np.ndarray:
        return np.flatnonzero(self.lengths > 0)

    def set(self, i: int) -> np.ndarray:
        return self.features[self.offsets[i]:self.offsets[i + 1]]

    def take(self, idx) -> SetBatch:
        idx = np.asarray(idx, dtype=np.int64)
        starts = self.offsets[idx]
        lengths = self.offsets[idx + 1] - starts
        offsets = np.zeros(len(idx) + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        rows = np.repeat(starts - offsets[:-1], lengths) + np.arange(offsets[-1])
        return SetBatch(self.features[rows], offsets)

    def segment_sum(self, values: np.ndarray) -> np.ndarray:
        """Per-set sums of ``values`` (rows aligned with ``features``), accumulated in float64."""
        out = np.zeros((self.size,) + values.shape[1:], dtype=np.float64)
        if len(self.nonempty):
            out[self.nonempty] = np.add.reduceat(values.astype(np.float64, copy=False),
                                                 self.offsets[self.nonempty], axis=0)
        return out

    def segment_max(self, values: np.ndarray) -> np.ndarray:
        """Per-set maxima; empty sets yield zeros."""
        out = np.zeros((self.size,) + values.shape[1:], dtype=values.dtype)
        if len(self.nonempty):
            out[self.nonempty] = np.maximum.reduceat(values, self.offsets[self.nonempty], axis=0)
        return out


@dataclass
class StateBatch:
    """A batch of agent states; grid views are derived lazily from the sets."""

    sets: SetBatch
    static: np.ndarray
    _relational: np.ndarray | None = field(default=None, repr=False)
    _occupancy: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_observations(cls, observations) -> StateBatch:
        observations = list(observations)
        sets = SetBatch.from_sets([o.dynamic for o in observations])
        static = np.stack([o.static for o in observations]).astype(np.float32).reshape(-1, N_STATIC)
        return cls(sets, static)

    @property
    def size(self) -> int:
        return self.sets.size

    @property
    def relational(self) -> np.ndarray:
        if self._relational is None:
            from .grids import relational_grid_batch
            self._relational = relational_grid_batch(self.sets, self.static)
        return self._relational

    @property
    def occupancy(self) -> np.ndarray:
        if self._occupancy is None:
            from .grids import occupancy_grid_batch
            self._occupancy = occupancy_grid_batch(self.sets)
        return self._occupancy

    def take(self, idx) -> StateBatch:
        rel = self._relational[idx] if self._relational is not None else None
        return StateBatch(self.sets.take(idx), self.static[idx], rel)
