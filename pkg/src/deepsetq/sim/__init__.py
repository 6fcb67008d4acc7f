"""Ring-road highway simulator."""

from .drivers import EGO_DRIVER, DriverType, sample_driver_pool
from .kernels import BACKEND
from .road import (ACTION_NAMES, ACTIONS, KEEP, LANE_CHANGE_PENALTY, LEFT, RIGHT, V_DESIRED,
                   CapacityError, HighwaySim, LaneChangeParams, RingRoad, ScenarioConfig, Vehicle,
                   krauss_speed, longitudinal_update, reward, safe_speed)

__all__ = [
    "ACTIONS", "ACTION_NAMES", "BACKEND", "EGO_DRIVER", "KEEP", "LANE_CHANGE_PENALTY", "LEFT",
    "RIGHT", "V_DESIRED", "CapacityError", "DriverType", "HighwaySim", "LaneChangeParams",
    "RingRoad", "ScenarioConfig", "Vehicle", "krauss_speed", "longitudinal_update", "reward",
    "safe_speed", "sample_driver_pool",
]
