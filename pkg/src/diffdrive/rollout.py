"""Closed-loop inference: reverse-diffusion action sampling, receding-horizon
episode execution, evaluation tables, routing analysis, and latency timing."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from .demos import normalize_obs, scripted_expert
from .denoiser import ModelConfig, init_params, preset_config
from .driveworld import DT, SCENARIO_LABELS, World
from .errors import CheckpointError, NumericError, UsageError
from .moe import predict_noise
from .schedule import NoiseSchedule, make_schedule
from .tensor import no_grad
from .training import load_checkpoint

# env steps per averaging bucket in the temporal routing analysis
TEMPORAL_BUCKET = 5

# stream tag separating the sampler rng from the world seed
_SAMPLER_STREAM = 31

METRICS_HEADER = ("row_type,scenario,variant,seed,n,success,collision,"
                  "reward,avg_velocity,accel_variance,steps")

LATENCY_HEADER = "preset,mean_ms,std_ms,trials"


@dataclass(frozen=True)
class EpisodeMetrics:
    """Outcome summary of one closed-loop episode."""
    success: bool
    collision: bool
    episodic_reward: float
    average_velocity: float
    acceleration_variance: float
    completion_steps: int


@dataclass
class ActivationTrace:
    """Routing decisions from every denoise step of every env step."""
    label: int
    records: list  # dicts: env_step, t, gate (N,), selected (K,), weights (K,)


@dataclass
class Policy:
    """Frozen weights plus everything needed to run them on raw observations."""
    params: dict
    model_cfg: ModelConfig
    schedule: NoiseSchedule
    obs_mean: np.ndarray
    obs_std: np.ndarray


def load_policy(path, expect_digest=None) -> Policy:
    """Rebuild an evaluation policy from a training checkpoint."""
    loaded = load_checkpoint(path)
    if expect_digest is not None:
        digest = loaded["stats_digest"]
        if digest is None or not np.array_equal(digest, expect_digest):
            raise CheckpointError(
                "checkpoint normalization stats do not match the expected set")
    return Policy(params=loaded["params"], model_cfg=loaded["model_cfg"],
                  schedule=loaded["schedule"], obs_mean=loaded["obs_mean"],
                  obs_std=loaded["obs_std"])


def sample_actions(obs_n, params, cfg: ModelConfig, schedule: NoiseSchedule,
                   eta: float = 0.0, rng=None, trace=None) -> np.ndarray:
    """Draw one (H, 2) action plan by reverse diffusion from pure noise.

    obs_n is a single normalized observation. eta scales the posterior noise;
    0 makes the chain deterministic given the initial draw. When trace is a
    list it receives one routing record per denoise step, highest t first.
    """
    if rng is None:
        rng = np.random.default_rng()
    obs = np.asarray(obs_n, dtype=np.float64).reshape(1, -1)
    if obs.shape[1] != cfg.obs_dim:
        raise UsageError(f"observation width {obs.shape[1]} != model {cfg.obs_dim}")
    a = rng.standard_normal((1, cfg.H, 2))
    with no_grad():
        for t in range(schedule.T, 0, -1):
            eps_hat, routing = predict_noise(a, obs, t, params, cfg)
            z = rng.standard_normal(a.shape) if eta > 0.0 and t > 1 else None
            a = schedule.reverse_step(a, eps_hat.data, t, eta=eta, z=z)
            if not np.all(np.isfinite(a)):
                raise NumericError(f"sampling produced non-finite actions at t={t}")
            if trace is not None:
                trace.append({
                    "t": t,
                    "gate": routing.gate.data[0].copy(),
                    "selected": routing.selected[0].copy(),
                    "weights": routing.weights.data[0].copy(),
                })
    return np.clip(a[0], -1.0, 1.0)


def run_episode(policy, spec, eta: float = 0.0, log_activations: bool = True):
    """Drive one scenario to termination with a receding one-step horizon.

    Each env step samples a fresh H-step plan and executes only its first
    action. policy is either a Policy or the string "scripted", which runs
    the rule-based expert through the identical loop as a reference.
    Returns (EpisodeMetrics, ActivationTrace, episode log records).
    """
    scripted = isinstance(policy, str)
    if scripted and policy != "scripted":
        raise UsageError(f"unknown policy {policy!r}; expected a Policy or 'scripted'")
    world = World(spec)
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, _SAMPLER_STREAM)))
    trace = ActivationTrace(label=SCENARIO_LABELS[spec.kind], records=[])
    obs = world.observe()
    total_reward = 0.0
    speeds = [world.ego.speed]
    while not world.terminated:
        if scripted:
            action = scripted_expert(world)
        else:
            obs_n = normalize_obs(obs, policy.obs_mean, policy.obs_std)
            step_trace = [] if log_activations else None
            plan = sample_actions(obs_n, policy.params, policy.model_cfg,
                                  policy.schedule, eta=eta, rng=rng,
                                  trace=step_trace)
            action = plan[0]
            if log_activations:
                for rec in step_trace:
                    rec["env_step"] = world.steps
                    trace.records.append(rec)
        out = world.step(action)
        obs = out.obs
        total_reward += out.reward
        speeds.append(world.ego.speed)
    accels = np.diff(np.asarray(speeds)) / DT
    metrics = EpisodeMetrics(
        success=world.cause == "success",
        collision=world.cause == "collision",
        episodic_reward=float(total_reward),
        average_velocity=float(np.mean(speeds[1:])) if len(speeds) > 1 else 0.0,
        acceleration_variance=float(np.var(accels)) if accels.size else 0.0,
        completion_steps=world.steps,
    )
    return metrics, trace, world.log


def _metrics_row(kind, variant, seed, m: EpisodeMetrics) -> str:
    return (f"episode,{kind},{variant},{seed},1,{int(m.success)},"
            f"{int(m.collision)},{m.episodic_reward:.6f},"
            f"{m.average_velocity:.6f},{m.acceleration_variance:.8f},"
            f"{m.completion_steps}")


def _aggregate(name, metrics: list) -> dict:
    n = len(metrics)
    return {
        "scenario": name, "n": n,
        "success_rate": sum(m.success for m in metrics) / n,
        "collision_rate": sum(m.collision for m in metrics) / n,
        "reward": float(np.mean([m.episodic_reward for m in metrics])),
        "avg_velocity": float(np.mean([m.average_velocity for m in metrics])),
        "accel_variance": float(np.mean([m.acceleration_variance
                                         for m in metrics])),
        "steps": float(np.mean([m.completion_steps for m in metrics])),
    }


def _jsonable(value):
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        try:
            return value.item()
        except (AttributeError, ValueError):
            pass
    if isinstance(value, np.ndarray):
        return value.tolist()
    return str(value)


def evaluate(policy: Policy, specs: list, eta: float = 0.0,
             metrics_path=None, log_path=None, log_activations: bool = True,
             on_episode=None):
    """Run every spec once and tabulate per-episode plus per-scenario rows.

    Returns (per-episode metrics list, aggregate dicts keyed by scenario with
    an "all" entry, activation traces). metrics_path writes the combined CSV;
    log_path appends one JSON line per episode step record.
    """
    if not specs:
        raise UsageError("evaluate needs at least one scenario spec")
    results = []
    traces = []
    log_fh = open(log_path, "a") if log_path is not None else None
    try:
        for i, spec in enumerate(specs):
            metrics, trace, log = run_episode(policy, spec, eta=eta,
                                              log_activations=log_activations)
            results.append((spec, metrics))
            traces.append(trace)
            if log_fh is not None:
                for rec in log:
                    row = {"episode": i, **rec}
                    log_fh.write(json.dumps(row, default=_jsonable) + "\n")
                log_fh.flush()
            if on_episode is not None:
                on_episode(i, spec, metrics)
    finally:
        if log_fh is not None:
            log_fh.close()

    by_kind: dict[str, list] = {}
    for spec, m in results:
        by_kind.setdefault(spec.kind, []).append(m)
    aggregates = {kind: _aggregate(kind, ms) for kind, ms in sorted(by_kind.items())}
    aggregates["all"] = _aggregate("all", [m for _, m in results])

    if metrics_path is not None:
        with open(metrics_path, "w") as fh:
            fh.write(METRICS_HEADER + "\n")
            for spec, m in results:
                fh.write(_metrics_row(spec.kind, spec.variant, spec.seed, m) + "\n")
            for agg in aggregates.values():
                fh.write(f"aggregate,{agg['scenario']},,,{agg['n']},"
                         f"{agg['success_rate']:.4f},{agg['collision_rate']:.4f},"
                         f"{agg['reward']:.6f},{agg['avg_velocity']:.6f},"
                         f"{agg['accel_variance']:.8f},{agg['steps']:.2f}\n")
    return [m for _, m in results], aggregates, traces


# -- routing analysis ---------------------------------------------------------

def _check_record(rec, n_experts, where):
    gate, sel, w = rec["gate"], rec["selected"], rec["weights"]
    if gate.shape != (n_experts,) or not np.isclose(gate.sum(), 1.0, atol=1e-6):
        raise UsageError(f"{where}: gate is not a distribution over {n_experts}")
    if np.unique(sel).size != sel.size or sel.min() < 0 or sel.max() >= n_experts:
        raise UsageError(f"{where}: selected experts invalid")
    if (w.shape != sel.shape or np.any(w <= 0.0)
            or not np.isclose(np.sum(w), 1.0, atol=1e-6)):
        raise UsageError(f"{where}: selection weights invalid")


def analyze_activations(traces: list, bucket: int = TEMPORAL_BUCKET,
                        temporal_path=None, scenario_path=None):
    """Aggregate routing decisions into the two standard views.

    temporal: per scenario, mean gate probability per expert within
    consecutive env-step buckets (denoise steps pooled). scenario: per
    scenario, hard-selection count per expert divided by decisions, so each
    row sums to K. Returns (temporal dict, scenario dict) keyed by scenario
    name; each value is (n_buckets, N) resp. (N,).
    """
    if not traces:
        raise UsageError("no activation traces to analyze")
    names = {v: k for k, v in SCENARIO_LABELS.items()}
    n_experts = None
    gate_sum: dict[tuple, np.ndarray] = {}
    gate_cnt: dict[tuple, int] = {}
    sel_cnt: dict[str, np.ndarray] = {}
    dec_cnt: dict[str, int] = {}
    for ti, trace in enumerate(traces):
        name = names[trace.label]
        for ri, rec in enumerate(trace.records):
            if n_experts is None:
                n_experts = rec["gate"].shape[0]
            _check_record(rec, n_experts, f"trace {ti} record {ri}")
            b = rec["env_step"] // bucket
            key = (name, b)
            if key not in gate_sum:
                gate_sum[key] = np.zeros(n_experts)
                gate_cnt[key] = 0
            gate_sum[key] += rec["gate"]
            gate_cnt[key] += 1
            if name not in sel_cnt:
                sel_cnt[name] = np.zeros(n_experts)
                dec_cnt[name] = 0
            sel_cnt[name][rec["selected"]] += 1.0
            dec_cnt[name] += 1

    temporal = {}
    for name in sorted({k for k, _ in gate_sum}):
        buckets = sorted(b for nm, b in gate_sum if nm == name)
        mat = np.stack([gate_sum[(name, b)] / gate_cnt[(name, b)]
                        for b in buckets])
        temporal[name] = mat
    scenario = {name: sel_cnt[name] / dec_cnt[name]
                for name in sorted(sel_cnt)}

    cols = ",".join(f"expert_{e}" for e in range(n_experts))
    if temporal_path is not None:
        with open(temporal_path, "w") as fh:
            fh.write(f"scenario,bucket_start,{cols}\n")
            for name, mat in temporal.items():
                for bi, row in enumerate(mat):
                    vals = ",".join(f"{v:.6f}" for v in row)
                    fh.write(f"{name},{bi * bucket},{vals}\n")
    if scenario_path is not None:
        with open(scenario_path, "w") as fh:
            fh.write(f"scenario,{cols}\n")
            for name, row in scenario.items():
                vals = ",".join(f"{v:.6f}" for v in row)
                fh.write(f"{name},{vals}\n")
    return temporal, scenario


# -- latency -------------------------------------------------------------------

def measure_latency(presets=("small", "medium", "large", "giant"),
                    n_trials: int = 100, T: int = 10, seed: int = 0,
                    warmup: int = 10, path=None, obs_dim: int | None = None):
    """Wall-clock per full T-step plan, per preset; first warmup calls dropped.

    Returns a list of {preset, mean_ms, std_ms, trials} dicts in the order
    given, and optionally writes them as CSV.
    """
    if n_trials < 1:
        raise UsageError("n_trials must be positive")
    schedule = make_schedule("squared_cosine", T)
    rows = []
    for name in presets:
        cfg = preset_config(name) if obs_dim is None else \
            preset_config(name, obs_dim=obs_dim)
        rng = np.random.default_rng(seed)
        params = init_params(cfg, rng)
        obs_n = rng.standard_normal(cfg.obs_dim)
        times = []
        for trial in range(warmup + n_trials):
            t0 = time.perf_counter()
            sample_actions(obs_n, params, cfg, schedule,
                           rng=np.random.default_rng(seed + trial))
            dt = (time.perf_counter() - t0) * 1e3
            if trial >= warmup:
                times.append(dt)
        times = np.asarray(times)
        rows.append({"preset": name, "mean_ms": float(times.mean()),
                     "std_ms": float(times.std()), "trials": n_trials})
    if path is not None:
        with open(path, "w") as fh:
            fh.write(LATENCY_HEADER + "\n")
            for r in rows:
                fh.write(f"{r['preset']},{r['mean_ms']:.4f},"
                         f"{r['std_ms']:.4f},{r['trials']}\n")
    return rows
