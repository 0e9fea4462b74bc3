"""2D traffic world: scenario geometry, vehicle kinematics, rule-based
traffic, lidar, observations, and the episode step loop."""

from .geometry import Corridor, Route, obb_corners, obb_overlap
from .idm import B_EMERGENCY, IdmParams, MobilParams, Neighbor, Surroundings, idm_accel, mobil_lane_change
from .lidar import LIDAR_BEAMS, LIDAR_RANGE, lidar_scan
from .scenarios import SCENARIO_KINDS, ScenarioSpec, build_scene
from .vehicle import (DT, S_MAX_DEG, V_MAX, VehicleState, map_action, step_ego)
from .world import OBS_DIM, SCENARIO_LABELS, StepOutcome, World

__all__ = [
    "B_EMERGENCY", "Corridor", "DT", "IdmParams", "LIDAR_BEAMS", "LIDAR_RANGE",
    "MobilParams", "Neighbor", "OBS_DIM", "Route", "SCENARIO_KINDS",
    "SCENARIO_LABELS", "ScenarioSpec", "StepOutcome", "Surroundings", "S_MAX_DEG",
    "V_MAX", "VehicleState", "World", "build_scene", "idm_accel", "lidar_scan",
    "map_action", "mobil_lane_change", "obb_corners", "obb_overlap", "step_ego",
]
