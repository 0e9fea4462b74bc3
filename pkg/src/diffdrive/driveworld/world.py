"""Episode state machine: ego dynamics, rule-based traffic, collision and
road-departure checks, observation assembly, reward, and the step log."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import UsageError
from .geometry import Route, obb_corners, obb_edges, obb_overlap, segment_intersects_obb
from .idm import IdmParams, MobilParams, Neighbor, Surroundings, idm_accel, mobil_lane_change
from .lidar import LIDAR_BEAMS, LIDAR_RANGE, lidar_scan
from .scenarios import HALF_LANE, Scene, ScenarioSpec, build_scene
from .vehicle import (DT, LENGTH, N_SUBSTEPS, S_MAX_DEG, V_MAX, WIDTH,
                      VehicleState, map_action, step_ego)

OBS_DIM = 9 + 10 + LIDAR_BEAMS  # ego block + navigation block + lidar
SCENARIO_LABELS = {"in_ramp": 0, "intersection": 1, "roundabout": 2}
MAX_STEPS = 1000
SUCCESS_BONUS = 20.0
COLLISION_PENALTY = 10.0

_S_MAX_RAD = math.radians(S_MAX_DEG)
_LATERAL_CAPTURE = 2.6       # how close to a route a body must be to count as on it
_LOOKAHEAD = 45.0            # leader search range, m
_LANE_CHANGE_STEPS = 20      # 2 s lateral blend
_MOBIL_PERIOD = 10           # steps between lane-change evaluations

# per-vehicle IDM parameter ranges (uniform draws, recorded in the log)
TRAFFIC_RANGES = {
    "v0": (5.5, 8.5), "T": (1.0, 1.8), "a_max": (1.5, 2.5),
    "b": (1.5, 2.5), "s0": (1.5, 3.0),
}


@dataclass
class StepOutcome:
    obs: np.ndarray
    reward: float
    terminated: bool
    cause: str  # success | collision | off_road | timeout | none


class TrafficVehicle:
    """Route-following vehicle driven by IDM; lane changes blend laterally."""

    def __init__(self, route: Route, s: float, speed: float, idm: IdmParams,
                 mobil: MobilParams, lane_group: str | None, lane_index: int):
        self.route = route
        self.s = s
        self.speed = speed
        self.idm = idm
        self.mobil = mobil
        self.lane_group = lane_group
        self.lane_index = lane_index
        self.lat_offset = 0.0
        self.lat_step = 0.0
        self.mobil_phase = 0
        self.done = False
        self.length = LENGTH
        self.width = WIDTH

    def pose(self, s: float | None = None, lat: float | None = None):
        x, y, heading = self.route.pose_at(self.s if s is None else s)
        off = self.lat_offset if lat is None else lat
        if off != 0.0:
            x += -math.sin(heading) * off
            y += math.cos(heading) * off
        return x, y, heading


class World:
    """One episode of one scenario. Construct to reset; step until terminated."""

    def __init__(self, spec: ScenarioSpec):
        self.spec = spec
        self.scene: Scene = build_scene(spec)
        self.label = self.scene.label
        self.rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed)))
        x, y, heading, speed = self.scene.ego_start
        self.ego = VehicleState(x=x, y=y, heading=heading, speed=speed)
        self.route = self.scene.ego_route
        self.goal_s = self.scene.goal_s
        self.ego_s, self._ego_lateral = self.route.project((x, y))
        self.prev_action = np.zeros(2)
        self.steps = 0
        self.terminated = False
        self.cause = "none"
        self.traffic: list[TrafficVehicle] = []
        self._pending = []
        for sp in self.scene.spawns:
            veh = TrafficVehicle(
                route=Route(sp.route_pts), s=sp.start_s, speed=sp.speed,
                idm=self._draw_idm(), mobil=MobilParams(
                    politeness=float(self.rng.uniform(0.2, 0.5))),
                lane_group=sp.lane_group, lane_index=sp.lane_index)
            veh.mobil_phase = int(self.rng.integers(_MOBIL_PERIOD))
            self._pending.append({"veh": veh, "trigger_s": sp.trigger_s,
                                  "delay": sp.delay})
        self._all_spawn_entries = list(self._pending)
        self._activate_ready()
        self.log: list[dict] = [self._init_record()]

    # -- construction helpers ------------------------------------------------

    def _draw_idm(self) -> IdmParams:
        draws = {k: float(self.rng.uniform(*rng)) for k, rng in TRAFFIC_RANGES.items()}
        return IdmParams(delta=4.0, **draws)

    def _init_record(self) -> dict:
        return {
            "type": "init", "scenario": self.spec.kind,
            "variant": self.spec.variant, "seed": self.spec.seed,
            "traffic": [
                {"trigger_s": p["trigger_s"], "start_s": p["veh"].s,
                 "speed": p["veh"].speed,
                 "idm": {k: getattr(p["veh"].idm, k) for k in
                         ("v0", "T", "a_max", "b", "s0", "delta")},
                 "politeness": p["veh"].mobil.politeness}
                for p in self._all_spawn_entries],
        }

    # -- traffic ---------------------------------------------------------------

    def _activate_ready(self):
        still = []
        for entry in self._pending:
            if self.ego_s >= entry["trigger_s"]:
                if entry["delay"] > 0:
                    entry["delay"] -= 1
                    still.append(entry)
                elif self._spawn_blocked(entry["veh"]):
                    still.append(entry)
                else:
                    self.traffic.append(entry["veh"])
            else:
                still.append(entry)
        self._pending = still

    def _spawn_blocked(self, veh: TrafficVehicle) -> bool:
        x, y, _ = veh.pose()
        for other in self._bodies(exclude=None):
            if (other[0] - x) ** 2 + (other[1] - y) ** 2 < 8.0 ** 2:
                return True
        return False

    def _bodies(self, exclude) -> list[tuple[float, float, float, float, float, float]]:
        """(x, y, heading, speed, length, width) for ego plus live traffic."""
        out = []
        if exclude is not self.ego:
            out.append((self.ego.x, self.ego.y, self.ego.heading,
                        self.ego.speed, self.ego.length, self.ego.width))
        for v in self.traffic:
            if v.done or v is exclude:
                continue
            x, y, h = v.pose()
            out.append((x, y, h, v.speed, v.length, v.width))
        return out

    def _leader_for(self, veh: TrafficVehicle) -> tuple[float, float] | None:
        """Nearest body ahead on this vehicle's route: (speed, gap)."""
        best = None
        for (x, y, _, speed, length, _) in self._bodies(exclude=veh):
            s_c, lat = veh.route.project(
                (x, y), s_hint=veh.s + _LOOKAHEAD / 2, window=_LOOKAHEAD / 2 + 5)
            ds = s_c - veh.s
            if abs(lat) <= _LATERAL_CAPTURE and 0.0 < ds <= _LOOKAHEAD:
                gap = ds - 0.5 * (veh.length + length)
                if best is None or ds < best[2]:
                    best = (speed, gap, ds)
        return (best[0], best[1]) if best else None

    def _neighbor_scan(self, veh: TrafficVehicle, route: Route) -> tuple:
        """Leader/follower (speed, gap) pairs around veh's position on route."""
        s_self, _ = route.project((veh.pose()[0], veh.pose()[1]), s_hint=veh.s)
        lead = follow = None
        for (x, y, _, speed, length, _) in self._bodies(exclude=veh):
            s_c, lat = route.project((x, y), s_hint=s_self, window=_LOOKAHEAD)
            if abs(lat) > _LATERAL_CAPTURE:
                continue
            ds = s_c - s_self
            gap = abs(ds) - 0.5 * (veh.length + length)
            if 0.0 < ds <= _LOOKAHEAD and (lead is None or ds < lead[2]):
                lead = (speed, gap, ds)
            if -_LOOKAHEAD <= ds < 0.0 and (follow is None or -ds < -follow[2]):
                follow = (speed, gap, ds)
        return (Neighbor(*lead[:2]) if lead else None,
                Neighbor(*follow[:2]) if follow else None)

    def _maybe_change_lane(self, veh: TrafficVehicle):
        lanes = self.scene.lane_groups.get(veh.lane_group)
        if not lanes or (self.steps + veh.mobil_phase) % _MOBIL_PERIOD != 0:
            return
        for target_idx in (veh.lane_index - 1, veh.lane_index + 1):
            if not 0 <= target_idx < len(lanes):
                continue
            target = lanes[target_idx]
            lead_cur, follow_cur = self._neighbor_scan(veh, veh.route)
            lead_tgt, follow_tgt = self._neighbor_scan(veh, target)
            env = Surroundings(lead_cur=lead_cur, follow_cur=follow_cur,
                               lead_tgt=lead_tgt, follow_tgt=follow_tgt)
            if mobil_lane_change(veh.speed, veh.length, env, veh.idm, veh.mobil):
                x, y, _ = veh.pose()
                new_s, new_lat = target.project((x, y), s_hint=veh.s)
                veh.route = target
                veh.lane_index = target_idx
                veh.s = new_s
                veh.lat_offset = new_lat
                veh.lat_step = -new_lat / _LANE_CHANGE_STEPS
                return

    def _advance_traffic(self):
        for veh in self.traffic:
            if veh.done:
                continue
            leader = self._leader_for(veh)
            if leader is None:
                a = idm_accel(veh.speed, None, math.inf, veh.idm)
            else:
                a = idm_accel(veh.speed, leader[0], leader[1], veh.idm)
            veh.speed = float(np.clip(veh.speed + a * DT, 0.0, V_MAX))
            veh.s += veh.speed * DT
            if veh.lat_offset != 0.0:
                veh.lat_offset += veh.lat_step
                if abs(veh.lat_offset) <= abs(veh.lat_step) or \
                        np.sign(veh.lat_offset) == np.sign(veh.lat_step):
                    veh.lat_offset = 0.0
                    veh.lat_step = 0.0
            self._maybe_change_lane(veh)
            if veh.s >= veh.route.length - 0.5:
                veh.done = True

    # -- checks ---------------------------------------------------------------

    def _ego_corners(self, x, y, heading):
        return obb_corners(x, y, heading, self.ego.length, self.ego.width)

    def _collision_at(self, frac: float, ego_pose, traffic_spans) -> bool:
        ec = self._ego_corners(*ego_pose)
        for (veh, s0, s1, lat0, lat1) in traffic_spans:
            s = s0 + frac * (s1 - s0)
            lat = lat0 + frac * (lat1 - lat0)
            x, y, h = veh.pose(s=s, lat=lat)
            if (x - ego_pose[0]) ** 2 + (y - ego_pose[1]) ** 2 > 10.0 ** 2:
                continue
            if obb_overlap(ec, obb_corners(x, y, h, veh.length, veh.width)):
                return True
        return False

    def _off_road_at(self, ego_pose) -> bool:
        p = ego_pose[:2]
        if not any(c.contains(p) for c in self.scene.corridors):
            return True
        ec = self._ego_corners(*ego_pose)
        lo = np.array([ec[:, 0].min() - 0.1, ec[:, 1].min() - 0.1])
        hi = np.array([ec[:, 0].max() + 0.1, ec[:, 1].max() + 0.1])
        for seg in self.scene.walls:
            slo = np.minimum(seg[:2], seg[2:])
            shi = np.maximum(seg[:2], seg[2:])
            if (shi < lo).any() or (slo > hi).any():
                continue
            if segment_intersects_obb(seg, ec):
                return True
        return False

    # -- observation -------------------------------------------------------------

    def observe(self) -> np.ndarray:
        ego = self.ego
        s, lateral = self.ego_s, self._ego_lateral
        heading_dev = (ego.heading - self.route.heading_at(s) + math.pi) \
            % (2 * math.pi) - math.pi
        yaw_norm = ego.speed * math.tan(ego.steering) / (V_MAX * math.tan(_S_MAX_RAD))
        ego_block = np.array([
            ego.speed / V_MAX,
            ego.steering / _S_MAX_RAD,
            math.sin(heading_dev), math.cos(heading_dev),
            lateral / HALF_LANE,
            yaw_norm,
            (self.goal_s - s) / 50.0,
            self.prev_action[0], self.prev_action[1],
        ])
        nav = []
        cos_h, sin_h = math.cos(ego.heading), math.sin(ego.heading)
        for ahead in (10.0, 20.0):
            s_cp = min(s + ahead, self.route.length)
            px, py, ph = self.route.pose_at(s_cp)
            dx, dy = px - ego.x, py - ego.y
            rel_x = cos_h * dx + sin_h * dy
            rel_y = -sin_h * dx + cos_h * dy
            rel_h = ph - ego.heading
            nav += [rel_x / 50.0, rel_y / 50.0, math.sin(rel_h), math.cos(rel_h),
                    math.hypot(dx, dy) / 50.0]
        segs = [self.scene.walls] if len(self.scene.walls) else []
        for v in self.traffic:
            if v.done:
                continue
            x, y, h = v.pose()
            if (x - ego.x) ** 2 + (y - ego.y) ** 2 > (LIDAR_RANGE + 6.0) ** 2:
                continue
            segs.append(obb_edges(obb_corners(x, y, h, v.length, v.width)))
        seg_arr = np.concatenate(segs, axis=0) if segs else np.zeros((0, 4))
        scan = lidar_scan((ego.x, ego.y), ego.heading, seg_arr)
        return np.concatenate([ego_block, nav, scan])

    # -- the step -----------------------------------------------------------------

    def step(self, action) -> StepOutcome:
        if self.terminated:
            raise UsageError("episode already terminated")
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(2), -1.0, 1.0)
        s_before = self.ego_s

        trace: list = []
        start_pose = (self.ego.x, self.ego.y, self.ego.heading)
        self.ego = step_ego(self.ego, map_action(a), trace=trace)

        spans = []
        for veh in self.traffic:
            if veh.done:
                continue
            spans.append([veh, veh.s, veh.s, veh.lat_offset, veh.lat_offset])
        self._advance_traffic()
        for rec in spans:
            rec[2] = rec[0].s
            rec[4] = rec[0].lat_offset

        # sweep ego and traffic through the interval at quarter fractions
        poses = [start_pose] + trace
        checks = []
        for i in range(1, len(poses)):
            p0, p1 = poses[i - 1], poses[i]
            mid = tuple(0.5 * (np.array(p0) + np.array(p1)))
            f1 = (i - 0.5) / N_SUBSTEPS
            f2 = i / N_SUBSTEPS
            checks.append((f1, mid))
            checks.append((f2, p1))

        cause = "none"
        for frac, pose in checks:
            if self._collision_at(frac, pose, spans):
                cause = "collision"
                break
            if self._off_road_at(pose):
                cause = "off_road"
                break

        self.ego_s, self._ego_lateral = self.route.project(
            (self.ego.x, self.ego.y), s_hint=s_before)
        progress = self.ego_s - s_before
        if cause == "none" and self.ego_s >= self.goal_s:
            cause = "success"

        self.steps += 1
        self._activate_ready()
        if cause == "none" and self.steps >= MAX_STEPS:
            cause = "timeout"

        reward = progress
        if cause == "success":
            reward += SUCCESS_BONUS
        elif cause == "collision":
            reward -= COLLISION_PENALTY
        self.terminated = cause != "none"
        self.cause = cause
        self.prev_action = a.copy()
        obs = self.observe()

        self.log.append({
            "type": "step", "step": self.steps,
            "ego": {"x": self.ego.x, "y": self.ego.y, "heading": self.ego.heading,
                    "speed": self.ego.speed, "steering": self.ego.steering},
            "action": [float(a[0]), float(a[1])],
            "reward": float(reward), "cause": cause,
            "traffic": [dict(zip(("x", "y", "heading", "speed"),
                                 (*v.pose(), v.speed)))
                        for v in self.traffic if not v.done],
        })
        return StepOutcome(obs=obs, reward=float(reward),
                           terminated=self.terminated, cause=cause)
