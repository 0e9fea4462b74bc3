"""Ego vehicle: published control constants, the action-to-control mapping,
and the kinematic bicycle step."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

V_MAX = 22.22            # m/s, the 80 km/h cap
S_MAX_DEG = 40.0         # steering authority, degrees
F_MAX = 800.0            # throttle command ceiling
B_MAX = 150.0            # brake command ceiling
WHEELBASE = 2.8          # m
MASS = 1100.0            # kg
# the throttle/brake commands are unitless force numbers; these scales turn
# them into newtons, calibrated so full throttle from rest hits the 80 km/h
# cap in about 11 s on flat road (see vehicle tests)
ETA_F = 3.0
ETA_B = 40.0
DRAG = 0.8               # N per (m/s)^2
LENGTH = 4.6             # m, bounding box
WIDTH = 1.8
DT = 0.1                 # s per decision step
N_SUBSTEPS = 2

_S_MAX_RAD = math.radians(S_MAX_DEG)
# yaw rate at the speed cap with full steering lock, for normalization
YAW_RATE_MAX = V_MAX * math.tan(_S_MAX_RAD) / WHEELBASE


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    heading: float          # rad, world frame
    speed: float = 0.0      # m/s, always in [0, V_MAX]
    steering: float = 0.0   # rad, |steering| <= 40 deg
    length: float = LENGTH
    width: float = WIDTH

    def yaw_rate(self) -> float:
        return self.speed * math.tan(self.steering) / WHEELBASE


def map_action(a) -> tuple[float, float, float]:
    """[-1,1]^2 policy action to (steering deg, throttle force, brake force).

    Components are clamped before mapping, so out-of-range inputs saturate
    rather than error. Positive a2 is throttle, negative is brake.
    """
    a1 = float(np.clip(a[0], -1.0, 1.0))
    a2 = float(np.clip(a[1], -1.0, 1.0))
    return S_MAX_DEG * a1, F_MAX * max(0.0, a2), B_MAX * max(0.0, -a2)


def step_ego(state: VehicleState, controls: tuple[float, float, float],
             dt: float = DT, n_substeps: int = N_SUBSTEPS,
             trace: list | None = None) -> VehicleState:
    """Advance one decision interval with the kinematic bicycle model.

    Steering is set instantaneously (clamped to the 40 degree authority);
    speed integrates the net longitudinal force and stays in [0, V_MAX].
    With trace given, the pose after each physics substep is appended to it
    as (x, y, heading) for collision sweeping.
    """
    u_s, u_a, u_b = controls
    steer = float(np.clip(math.radians(u_s), -_S_MAX_RAD, _S_MAX_RAD))
    x, y, heading, v = state.x, state.y, state.heading, state.speed
    h = dt / n_substeps
    for _ in range(n_substeps):
        accel = (ETA_F * u_a - ETA_B * u_b - DRAG * v * v) / MASS
        v = float(np.clip(v + accel * h, 0.0, V_MAX))
        heading += v * math.tan(steer) / WHEELBASE * h
        x += v * math.cos(heading) * h
        y += v * math.sin(heading) * h
        if trace is not None:
            trace.append((x, y, heading))
    return replace(state, x=x, y=y, heading=heading, speed=v, steering=steer)
