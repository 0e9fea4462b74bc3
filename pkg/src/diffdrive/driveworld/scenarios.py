"""Scene construction for the three scenario families.

Each builder returns a Scene: ego start pose and route, goal arc length,
drivable corridors, wall segments for lidar and off-road bounds, and the
traffic spawn list with ego-progress triggers. Geometry summary:

- in_ramp: 150 m two-lane main road; a 50 m ramp merges into the right lane
  at x = 80; ego drives the right lane end to end while ramp traffic cuts in.
- intersection: two perpendicular six-lane roads (three 3.5 m lanes per
  direction), unsignalized, interaction zone 50 m across; ego arrives
  northbound and goes straight, left, or right.
- roundabout: three circulating lanes between island radius 24.5 m and outer
  radius 35 m (70 m outer diameter), four arms with 50 m entries; ego enters
  from the south and leaves at the 1st, 2nd, or 3rd exit counterclockwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from .geometry import Route, Corridor, arc_points

LANE_W = 3.5
HALF_LANE = LANE_W / 2.0
GRACE = 0.6  # how far past the road edge the center may stray before off_road

SCENARIO_KINDS = ("in_ramp", "intersection", "roundabout")
INTERSECTION_VARIANTS = ("straight", "left", "right")


@dataclass(frozen=True)
class ScenarioSpec:
    """What to build: scenario family, its route variant, traffic seed, and
    how many of the scripted spawns to enable (None = all)."""
    kind: str
    seed: int = 0
    variant: str = ""      # intersection: straight|left|right; roundabout: exit 1|2|3
    n_traffic: int | None = None

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ConfigError(f"unknown scenario {self.kind!r}; expected {SCENARIO_KINDS}")
        if self.kind == "intersection":
            v = self.variant or "straight"
            if v not in INTERSECTION_VARIANTS:
                raise ConfigError(f"intersection variant {v!r} not in {INTERSECTION_VARIANTS}")
        if self.kind == "roundabout":
            v = self.variant or "2"
            if v not in ("1", "2", "3"):
                raise ConfigError(f"roundabout exit {v!r} must be 1, 2, or 3")
        if self.n_traffic is not None and self.n_traffic < 0:
            raise ConfigError("n_traffic must be >= 0")


@dataclass
class Spawn:
    """One scripted traffic vehicle: where it runs and when it appears."""
    route_pts: np.ndarray
    start_s: float
    speed: float
    trigger_s: float = 0.0   # activate once ego progress passes this
    delay: int = 0           # further steps to hold after the trigger
    lane_group: str | None = None
    lane_index: int = 0


@dataclass
class Scene:
    label: int
    ego_start: tuple[float, float, float, float]  # x, y, heading, speed
    ego_route: Route
    goal_s: float
    corridors: list[Corridor]
    walls: np.ndarray                      # (M,4) segments
    spawns: list[Spawn]
    lane_groups: dict[str, list[Route]] = field(default_factory=dict)


def _seg(x1, y1, x2, y2):
    return [x1, y1, x2, y2]


def _line(p0, p1):
    return np.array([p0, p1], dtype=np.float64)


def _build_in_ramp(spec: ScenarioSpec) -> Scene:
    ramp_angle = math.radians(12.0)
    merge = np.array([80.0, 0.0])
    ramp_start = merge - 50.0 * np.array([math.cos(ramp_angle), math.sin(ramp_angle)])

    right_lane = _line((0.0, 0.0), (150.0, 0.0))
    left_lane = _line((0.0, LANE_W), (150.0, LANE_W))
    ramp_path = np.array([ramp_start, merge, [150.0, 0.0]])

    ego_route = Route(_line((2.0, 0.0), (150.0, 0.0)))
    road_mid = LANE_W - HALF_LANE  # halfway between the two lane centers
    corridors = [
        Corridor(_line((0.0, road_mid), (150.0, road_mid)), LANE_W + GRACE),
        Corridor(np.array([ramp_start, merge]), HALF_LANE + GRACE),
    ]
    edge_b = -HALF_LANE - 0.2
    edge_t = 2 * LANE_W - HALF_LANE + 0.2
    n_right = np.array([math.sin(ramp_angle), -math.cos(ramp_angle)])
    n_left = -n_right
    r_right = ramp_start + (HALF_LANE + 0.2) * n_right
    r_left = ramp_start + (HALF_LANE + 0.2) * n_left
    walls = np.array([
        _seg(-5.0, edge_t, 155.0, edge_t),
        _seg(-5.0, edge_b, r_left[0] - 2.0, edge_b),
        _seg(r_left[0] - 2.0, edge_b, r_left[0], r_left[1]),
        _seg(merge[0] + 3.0, edge_b, 155.0, edge_b),
        _seg(r_right[0], r_right[1], merge[0] + 3.0, edge_b),
    ])
    spawns = [
        Spawn(right_lane, 30.0, 7.0, lane_group="main", lane_index=0),
        Spawn(left_lane, 18.0, 8.0, lane_group="main", lane_index=1),
        Spawn(ramp_path, 5.0, 6.5, trigger_s=18.0),
        Spawn(ramp_path, 0.0, 6.0, trigger_s=45.0),
    ]
    return Scene(
        label=0,
        ego_start=(2.0, 0.0, 0.0, 8.0),
        ego_route=ego_route,
        goal_s=146.0,
        corridors=corridors,
        walls=walls,
        spawns=spawns,
        lane_groups={"main": [Route(right_lane), Route(left_lane)]},
    )


def _build_intersection(spec: ScenarioSpec) -> Scene:
    variant = spec.variant or "straight"
    lane1, lane2, lane3 = HALF_LANE, HALF_LANE + LANE_W, HALF_LANE + 2 * LANE_W
    road_half = 3 * LANE_W  # 10.5

    if variant == "straight":
        ego_pts = _line((lane1, -45.0), (lane1, 45.0))
    elif variant == "right":
        # tight clockwise arc onto the outermost eastbound lane
        r = 5.0
        c = (lane1 + r, -lane3 - r)
        pts = [(lane1, -45.0), (lane1, -lane3 - r)]
        pts += [tuple(p) for p in arc_points(c, r, math.pi, math.pi / 2, step_deg=4)[1:]]
        pts += [(60.0, -lane3)]
        ego_pts = np.array(pts)
    else:
        # sweeping counterclockwise arc onto the innermost westbound lane
        r = 10.0
        c = (lane1 - r, lane1 - r)
        pts = [(lane1, -45.0), (lane1, lane1 - r)]
        pts += [tuple(p) for p in arc_points(c, r, 0.0, math.pi / 2, step_deg=4)[1:]]
        pts += [(-60.0, lane1)]
        ego_pts = np.array(pts)

    ego_route = Route(ego_pts)
    corridors = [
        Corridor(_line((-70.0, 0.0), (70.0, 0.0)), road_half + GRACE),
        Corridor(_line((0.0, -70.0), (0.0, 70.0)), road_half + GRACE),
    ]
    m = road_half + 0.75
    walls = np.array([
        _seg(m, m, m, 70.0), _seg(m, m, 70.0, m),
        _seg(-m, m, -m, 70.0), _seg(-m, m, -70.0, m),
        _seg(-m, -m, -m, -70.0), _seg(-m, -m, -70.0, -m),
        _seg(m, -m, m, -70.0), _seg(m, -m, 70.0, -m),
    ])
    eb_mid = _line((-70.0, -lane2), (70.0, -lane2))
    eb_in = _line((-70.0, -lane1), (70.0, -lane1))
    wb_mid = _line((70.0, lane2), (-70.0, lane2))
    nb_ego = _line((lane1, -70.0), (lane1, 70.0))
    spawns = [
        Spawn(nb_ego, 45.0 - 25.0, 6.0),               # lead car ahead of ego
        Spawn(eb_mid, 25.0, 8.0, trigger_s=10.0),      # crosses left to right
        Spawn(wb_mid, 25.0, 8.0, trigger_s=18.0),      # crosses right to left
        Spawn(eb_in, 15.0, 7.5, trigger_s=22.0),
    ]
    return Scene(
        label=1,
        ego_start=(lane1, -45.0, math.pi / 2, 7.0),
        ego_route=ego_route,
        goal_s=ego_route.length - 4.0,
        corridors=corridors,
        walls=walls,
        spawns=spawns,
    )


def _circle_route(radius: float, a0: float, sweep: float) -> np.ndarray:
    return arc_points((0.0, 0.0), radius, a0, a0 + sweep, step_deg=2.0)


def _blend(p0, h0, p1, h1, handle: float = 8.0, n: int = 40) -> np.ndarray:
    """Cubic Bezier joining p0 to p1 with tangent headings h0 and h1."""
    b0 = np.asarray(p0, dtype=np.float64)
    b3 = np.asarray(p1, dtype=np.float64)
    b1 = b0 + handle * np.array([math.cos(h0), math.sin(h0)])
    b2 = b3 - handle * np.array([math.cos(h1), math.sin(h1)])
    t = np.linspace(0.0, 1.0, n)[:, None]
    return ((1 - t) ** 3 * b0 + 3 * (1 - t) ** 2 * t * b1
            + 3 * (1 - t) * t ** 2 * b2 + t ** 3 * b3)


def _build_roundabout(spec: ScenarioSpec) -> Scene:
    exit_idx = int(spec.variant or "2")
    r_island = 24.5
    r_lane_out = r_island + 2.5 * LANE_W   # 33.25, outermost circulating lane
    r_lane_mid = r_island + 1.5 * LANE_W   # 29.75
    r_outer = 35.0

    # ego: south approach, counterclockwise, exits east/north/west
    exit_angle = {1: 0.0, 2: math.pi / 2, 3: math.pi}[exit_idx]
    exit_dir = {1: np.array([1.0, 0.0]), 2: np.array([0.0, 1.0]),
                3: np.array([-1.0, 0.0])}[exit_idx]
    # lane offset of the departing lane: right-hand side of the exit arm
    exit_normal = {1: np.array([0.0, -1.0]), 2: np.array([1.0, 0.0]),
                   3: np.array([0.0, 1.0])}[exit_idx]

    # ring joins use bezier blends so the route curvature stays drivable
    entry_join = math.radians(-65.0)
    join_pt = r_lane_out * np.array([math.cos(entry_join), math.sin(entry_join)])
    leave = exit_angle - math.radians(25.0)
    leave_pt = r_lane_out * np.array([math.cos(leave), math.sin(leave)])
    p_exit_near = exit_dir * 45.0 + exit_normal * HALF_LANE
    p_exit_far = exit_dir * 85.0 + exit_normal * HALF_LANE
    exit_heading = math.atan2(exit_dir[1], exit_dir[0])
    pts = [(HALF_LANE, -85.0)]
    pts += [tuple(p) for p in _blend((HALF_LANE, -50.0), math.pi / 2,
                                     join_pt, entry_join + math.pi / 2)]
    pts += [tuple(p) for p in arc_points((0, 0), r_lane_out,
                                         entry_join, leave)[1:-1]]
    pts += [tuple(p) for p in _blend(leave_pt, leave + math.pi / 2,
                                     p_exit_near, exit_heading)]
    pts += [tuple(p_exit_far)]
    ego_route = Route(np.array(pts))

    ring = arc_points((0, 0), r_lane_mid, 0.0, 2 * math.pi)
    corridors = [
        Corridor(ring, 1.5 * LANE_W + GRACE),
        Corridor(np.array(pts), LANE_W + GRACE),
        Corridor(_line((HALF_LANE, -90.0), (HALF_LANE, -30.0)), HALF_LANE + GRACE + 1.0),
        Corridor(_line((-HALF_LANE, -90.0), (-HALF_LANE, -30.0)), HALF_LANE + GRACE + 1.0),
    ]
    for d, n in ((np.array([1.0, 0.0]), np.array([0.0, 1.0])),
                 (np.array([0.0, 1.0]), np.array([1.0, 0.0])),
                 (np.array([-1.0, 0.0]), np.array([0.0, 1.0]))):
        corridors.append(Corridor(np.array([d * 30.0, d * 90.0]), LANE_W + GRACE + 1.0))

    walls = [np.concatenate([p, q]) for p, q in
             zip(arc_points((0, 0), r_island, 0, 2 * math.pi, step_deg=15)[:-1],
                 arc_points((0, 0), r_island, 0, 2 * math.pi, step_deg=15)[1:])]
    opening = math.radians(20.0)
    for arm in (0.0, math.pi / 2, math.pi, -math.pi / 2):
        a0, a1 = arm + opening, arm + math.pi / 2 - opening
        arc = arc_points((0, 0), r_outer + 0.4, a0, a1, step_deg=10)
        walls += [np.concatenate([p, q]) for p, q in zip(arc[:-1], arc[1:])]
    walls = np.array(walls)

    circ1 = _circle_route(r_lane_mid, math.radians(60.0), 2 * math.pi * 1.75)
    circ2 = _circle_route(r_lane_out, math.radians(170.0), 2 * math.pi * 1.5)
    east_in = [(75.0, HALF_LANE), (40.0, HALF_LANE), (36.0, 2.8)]
    east_in += [tuple(p) for p in arc_points((0, 0), r_lane_out,
                                             math.radians(15.0), math.radians(160.0))]
    spawns = [
        Spawn(Route(circ1).pts, 0.0, 7.0),
        Spawn(Route(circ2).pts, 0.0, 6.5, trigger_s=20.0),
        Spawn(np.array(east_in), 0.0, 6.5, trigger_s=30.0),
    ]
    return Scene(
        label=2,
        ego_start=(HALF_LANE, -85.0, math.pi / 2, 6.0),
        ego_route=ego_route,
        goal_s=ego_route.length - 5.0,
        corridors=corridors,
        walls=walls,
        spawns=spawns,
    )


def build_scene(spec: ScenarioSpec) -> Scene:
    builder = {"in_ramp": _build_in_ramp, "intersection": _build_intersection,
               "roundabout": _build_roundabout}[spec.kind]
    scene = builder(spec)
    if spec.n_traffic is not None:
        scene.spawns = scene.spawns[:spec.n_traffic]
    return scene
