"""Observation encoders: Deep Sets, Set2Set, relational grid and occupancy grid."""

from .features import (D_MAX, Observation, Scene, SetBatch, StateBatch, extract_features,
                       signed_ring_gap)
from .grids import (OccupancyGridSpec, RelationalGridSpec, build_occupancy_grid,
                    build_relational_grid, occupancy_grid_batch, relational_grid_batch)
from .networks import (DEFAULT_ARCHS, ENCODER_KINDS, N_ACTIONS, DeepSetEncoder, FixedEncoder,
                       GridEncoder, Network, Set2SetEncoder, deep_set_encode, default_arch,
                       q_forward, segment_softmax, set2set_encode)

__all__ = [
    "D_MAX", "DEFAULT_ARCHS", "ENCODER_KINDS", "N_ACTIONS", "DeepSetEncoder", "FixedEncoder",
    "GridEncoder", "Network", "Observation", "OccupancyGridSpec", "RelationalGridSpec", "Scene",
    "Set2SetEncoder", "SetBatch", "StateBatch", "build_occupancy_grid", "build_relational_grid",
    "deep_set_encode", "default_arch", "extract_features", "occupancy_grid_batch", "q_forward",
    "relational_grid_batch", "segment_softmax", "set2set_encode", "signed_ring_gap",
]
