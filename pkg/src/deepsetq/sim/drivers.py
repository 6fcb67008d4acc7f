"""Driver parameter types and the a-priori sampled driver pool."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACCEL = 2.6
DECEL = 4.5
MIN_GAP = 2.0
HEADWAY = 0.5
VEHICLE_LENGTH = 4.5
EGO_MAX_SPEED = 24.0
# Ego lane-change eagerness used only when the ego is driven by the rule-based baseline.
EGO_SPEED_GAIN = 15.0

# (base maxSpeed, lcCooperative) for driver types 1-4; maxSpeed gets u ~ U(-5, 5).
DRIVER_TYPES = {1: (24.0, 0.0), 2: (12.0, 1.0), 3: (18.0, 0.8), 4: (21.0, 0.4)}
SPEED_SPREAD = 5.0
SPEED_GAIN_RANGE = (10.0, 20.0)
POOL_SIZE = 100


@dataclass(frozen=True)
class DriverType:
    max_speed: float
    lc_speed_gain: float
    lc_cooperative: float
    type_id: int = 0
    accel: float = ACCEL
    decel: float = DECEL
    min_gap: float = MIN_GAP
    headway: float = HEADWAY

    def __post_init__(self):
        if self.max_speed <= 0:
            raise ValueError(f"max_speed must be positive, got {self.max_speed}")
        if not 0.0 <= self.lc_cooperative <= 1.0:
            raise ValueError(f"lc_cooperative must lie in [0, 1], got {self.lc_cooperative}")


EGO_DRIVER = DriverType(EGO_MAX_SPEED, EGO_SPEED_GAIN, 0.0, type_id=0)


def sample_driver(type_id: int, rng: np.random.Generator) -> DriverType:
    base, coop = DRIVER_TYPES[type_id]
    u = rng.uniform(-SPEED_SPREAD, SPEED_SPREAD)
    gain = rng.uniform(*SPEED_GAIN_RANGE)
    return DriverType(base + u, gain, coop, type_id=type_id)


def sample_driver_pool(seed: int, size: int = POOL_SIZE) -> list[DriverType]:
    """``size`` drivers with types drawn uniformly from 1-4."""
    rng = np.random.default_rng(seed)
    return [sample_driver(int(rng.integers(1, 5)), rng) for _ in range(size)]
