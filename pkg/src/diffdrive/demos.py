"""Scripted demonstration driving, dataset capture, and minibatch sampling.

The expert reads privileged world state (routes and exact traffic poses) and
combines pure-pursuit steering with curvature feedforward, an IDM speed
controller capped by upcoming curvature, and a matched-time conflict check
that yields before merges and crossings. Episodes that do not end in success
are discarded and retried with a shifted seed, so the stored data contains
only completed drives.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .driveworld import ScenarioSpec, World
from .driveworld.idm import IdmParams, idm_accel
from .driveworld.vehicle import (B_MAX, DRAG, ETA_B, ETA_F, F_MAX, MASS,
                                 S_MAX_DEG, WHEELBASE)
from .errors import CheckpointError, GenerationError, UsageError

S_MAX_RAD = math.radians(S_MAX_DEG)

EXPERT_V0 = 11.0             # free-flow target, m/s
EXPERT_T = 1.2               # time headway, s
EXPERT_A = 2.0               # comfortable accel cap, m/s^2
EXPERT_B = 2.5               # comfortable decel, m/s^2
EXPERT_S0 = 2.5              # standstill gap, m
LAT_ACC_MAX = 2.5            # lateral accel budget for curve speed, m/s^2
YIELD_MARGIN = 10.0          # hold this far before a predicted encounter, m
_TAUS = np.arange(0.2, 4.01, 0.2)
STD_FLOOR = 1e-6
OBS_CLIP = 10.0

_MAGIC = b"KDPD"
_VERSION = 1


def _curve_speed_cap(route, s: float) -> float:
    kap = max(abs(route.curvature_at(s + 5.0)), abs(route.curvature_at(s + 12.0)))
    return max(1.0, min(EXPERT_V0, math.sqrt(LAT_ACC_MAX / max(kap, 1e-6))))


def pursuit_steering(route, s: float, x: float, y: float, heading: float,
                     speed: float) -> float:
    """Pure-pursuit front wheel angle plus route curvature feedforward."""
    lookahead = max(3.0, 0.5 * speed)
    tx, ty = route.point_at(min(s + lookahead, route.length))
    dx, dy = tx - x, ty - y
    alpha = (math.atan2(dy, dx) - heading + math.pi) % (2.0 * math.pi) - math.pi
    chord = max(math.hypot(dx, dy), 1.0)
    delta = math.atan2(2.0 * WHEELBASE * math.sin(alpha), chord)
    delta += math.atan(WHEELBASE * route.curvature_at(s + 2.0))
    return delta


def accel_to_pedal(accel: float, speed: float) -> float:
    """Invert the longitudinal force model into a [-1, 1] pedal command."""
    if accel >= 0.0:
        pedal = (accel * MASS + DRAG * speed * speed) / ETA_F / F_MAX
    else:
        force = -accel * MASS - DRAG * speed * speed
        pedal = -max(0.0, force) / ETA_B / B_MAX
    return float(np.clip(pedal, -1.0, 1.0))


def scripted_expert(world: World) -> np.ndarray:
    """Privileged reference policy; returns one [-1, 1]^2 action."""
    ego = world.ego
    route = world.route
    s, _ = route.project((ego.x, ego.y))

    delta = pursuit_steering(route, s, ego.x, ego.y, ego.heading, ego.speed)
    a1 = float(np.clip(delta / S_MAX_RAD, -1.0, 1.0))

    idm = IdmParams(v0=_curve_speed_cap(route, s), T=EXPERT_T, a_max=EXPERT_A,
                    b=EXPERT_B, s0=EXPERT_S0, delta=4.0)
    lead = None
    for veh in world.traffic:
        if veh.done:
            continue
        vx, vy, _ = veh.pose()
        s_c, lat = route.project((vx, vy), s_hint=s + 22.0, window=28.0)
        ds = s_c - s
        if abs(lat) <= 2.0 and 0.0 < ds <= 45.0:
            gap = ds - 0.5 * (ego.length + veh.length)
            if lead is None or ds < lead[2]:
                lead = (veh.speed, gap, ds)
    if lead is None:
        accel = idm_accel(ego.speed, None, math.inf, idm)
    else:
        accel = idm_accel(ego.speed, lead[0], lead[1], idm)

    # matched-time conflict scan: would proceeding meet another body?
    plan_speed = max(ego.speed, 3.0)
    radius = 3.6 if ego.speed < 0.5 else 3.0  # sticky while stopped
    worst = None
    for veh in world.traffic:
        if veh.done:
            continue
        for tau in _TAUS:
            mx, my = route.point_at(min(s + plan_speed * tau, route.length))
            fs = min(veh.s + veh.speed * tau, veh.route.length)
            fx, fy = veh.route.point_at(fs)
            if math.hypot(fx - mx, fy - my) < radius:
                gap = plan_speed * tau - YIELD_MARGIN
                if worst is None or gap < worst:
                    worst = gap
                break
    if worst is not None:
        accel = min(accel, idm_accel(ego.speed, 0.0, worst, idm))

    return np.array([a1, accel_to_pedal(accel, ego.speed)])


@dataclass
class Episode:
    """One successful drive: per-step observations and expert actions."""
    label: int
    seed: int
    obs: np.ndarray      # (T, obs_dim) float32
    actions: np.ndarray  # (T, 2) float32


@dataclass
class Dataset:
    episodes: list
    obs_mean: np.ndarray  # (obs_dim,) float64
    obs_std: np.ndarray   # (obs_dim,) float64

    def stats_digest(self) -> np.ndarray:
        """Normalization fingerprint as 16 byte values, storable as floats."""
        import hashlib
        h = hashlib.sha256(self.obs_mean.tobytes() + self.obs_std.tobytes())
        return np.frombuffer(h.digest()[:16], dtype=np.uint8).astype(np.float64)


def episode_roster(n: int, kinds=None, seed_start: int = 0) -> list:
    """Deterministic list of n scenario specs cycling the variant catalog."""
    catalog = [("in_ramp", ""), ("intersection", "straight"),
               ("intersection", "left"), ("intersection", "right"),
               ("roundabout", "1"), ("roundabout", "2"), ("roundabout", "3")]
    if kinds is not None:
        catalog = [c for c in catalog if c[0] in kinds]
        if not catalog:
            raise UsageError("no scenario kinds left after filtering")
    specs = []
    for i in range(n):
        kind, variant = catalog[i % len(catalog)]
        specs.append(ScenarioSpec(kind=kind, seed=seed_start + i, variant=variant))
    return specs


def run_expert_episode(spec: ScenarioSpec):
    """Drive one episode; returns (cause, obs array, action array, world)."""
    world = World(spec)
    obs_rows = []
    act_rows = []
    while True:
        obs_rows.append(world.observe())
        action = scripted_expert(world)
        out = world.step(action)
        act_rows.append(action)
        if out.terminated:
            break
    return (out.cause,
            np.asarray(obs_rows, dtype=np.float32),
            np.asarray(act_rows, dtype=np.float32),
            world)


def generate_dataset(specs, max_attempts: int = 8):
    """Run the expert on every spec, keeping only successful episodes.

    A failed episode is retried with the seed shifted by a large stride so
    traffic parameters redraw; more than max_attempts failures on one spec
    raise GenerationError. Returns (Dataset, attempt_count) where the second
    item counts every episode run, successful or not.
    """
    episodes = []
    attempts_total = 0
    for spec in specs:
        kept = None
        for attempt in range(max_attempts):
            trial = ScenarioSpec(kind=spec.kind, seed=spec.seed + 100003 * attempt,
                                 variant=spec.variant, n_traffic=spec.n_traffic)
            attempts_total += 1
            cause, obs, actions, world = run_expert_episode(trial)
            if cause == "success":
                kept = Episode(label=world.label, seed=trial.seed,
                               obs=obs, actions=actions)
                break
        if kept is None:
            raise GenerationError(
                f"no successful episode for {spec.kind} seed {spec.seed} "
                f"after {max_attempts} attempts")
        episodes.append(kept)
    stacked = np.concatenate([e.obs for e in episodes]).astype(np.float64)
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), STD_FLOOR)
    return Dataset(episodes=episodes, obs_mean=mean, obs_std=std), attempts_total


def normalize_obs(obs: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    """Standardize and clip; the clip guards against out-of-support states."""
    z = (np.asarray(obs, dtype=np.float64) - mean) / std
    return np.clip(z, -OBS_CLIP, OBS_CLIP)


def save_dataset(dataset: Dataset, path) -> None:
    w = dataset.obs_mean.shape[0]
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQI", _VERSION, len(dataset.episodes), w))
        fh.write(dataset.obs_mean.astype("<f8").tobytes())
        fh.write(dataset.obs_std.astype("<f8").tobytes())
        for ep in dataset.episodes:
            t = ep.obs.shape[0]
            fh.write(struct.pack("<BQI", ep.label, ep.seed, t))
            fh.write(ep.obs.astype("<f4").tobytes())
            fh.write(ep.actions.astype("<f4").tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise CheckpointError("not a demonstration dataset file")
    off = 4
    version, n_ep, w = struct.unpack_from("<IQI", blob, off)
    off += struct.calcsize("<IQI")
    if version != _VERSION:
        raise CheckpointError(f"unsupported dataset version {version}")
    if w < 1 or n_ep < 1:
        raise CheckpointError("empty or malformed dataset header")
    try:
        mean = np.frombuffer(blob, dtype="<f8", count=w, offset=off).copy()
        off += 8 * w
        std = np.frombuffer(blob, dtype="<f8", count=w, offset=off).copy()
        off += 8 * w
        episodes = []
        for _ in range(n_ep):
            label, seed, t = struct.unpack_from("<BQI", blob, off)
            off += struct.calcsize("<BQI")
            if t < 1:
                raise CheckpointError("episode with no steps")
            obs = np.frombuffer(blob, dtype="<f4", count=t * w,
                                offset=off).reshape(t, w).copy()
            off += 4 * t * w
            act = np.frombuffer(blob, dtype="<f4", count=t * 2,
                                offset=off).reshape(t, 2).copy()
            off += 4 * t * 2
            episodes.append(Episode(label=label, seed=seed, obs=obs, actions=act))
    except ValueError as exc:
        raise CheckpointError(f"truncated dataset file: {exc}") from exc
    if off != len(blob):
        raise CheckpointError("trailing bytes after last episode")
    for ep in episodes:
        if not (np.isfinite(ep.obs).all() and np.isfinite(ep.actions).all()):
            raise CheckpointError("non-finite values in stored episode")
    return Dataset(episodes=episodes, obs_mean=mean, obs_std=std)


def sample_minibatch(dataset: Dataset, rng: np.random.Generator,
                     batch_size: int, horizon: int = 8):
    """Draw (normalized obs, action sequence, scenario label) triples.

    Episodes are drawn uniformly, then a start step uniformly within the
    episode; action sequences past the end repeat the final action, matching
    how a stopped or cruising expert would extend its plan.
    """
    if batch_size < 1 or horizon < 1:
        raise UsageError("batch_size and horizon must be positive")
    n_ep = len(dataset.episodes)
    obs_out = np.empty((batch_size, dataset.obs_mean.shape[0]))
    act_out = np.empty((batch_size, horizon, 2))
    labels = np.empty(batch_size, dtype=np.int64)
    ep_idx = rng.integers(n_ep, size=batch_size)
    for i, e in enumerate(ep_idx):
        ep = dataset.episodes[e]
        t_len = ep.obs.shape[0]
        t = int(rng.integers(t_len))
        obs_out[i] = normalize_obs(ep.obs[t], dataset.obs_mean, dataset.obs_std)
        take = ep.actions[t:t + horizon].astype(np.float64)
        if take.shape[0] < horizon:
            pad = np.repeat(take[-1:], horizon - take.shape[0], axis=0)
            take = np.concatenate([take, pad])
        act_out[i] = take
        labels[i] = ep.label
    return obs_out, act_out, labels
