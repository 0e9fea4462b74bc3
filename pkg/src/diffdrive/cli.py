"""Command-line entry point: demonstration generation, training, evaluation,
routing analysis, and latency measurement behind one `diffdrive` binary.

Exit codes: 0 success, 2 configuration or validation problem, 3 runtime
numeric failure. Every command writes its effective merged configuration to
<out>/config.snapshot before doing work, so a run is reproducible from its
output directory alone.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from .config import SCHEMA, apply_overrides, default_config, load_config, write_snapshot
from .demos import episode_roster, generate_dataset, load_dataset, save_dataset
from .denoiser import preset_config
from .driveworld import SCENARIO_KINDS
from .errors import (CheckpointError, ConfigError, DimensionError,
                     GenerationError, NumericError, UsageError)
from .rollout import (analyze_activations, evaluate, load_policy,
                      measure_latency)
from .schedule import make_schedule
from .training import TrainConfig, fit

# fixed names inside the --out directory
SNAPSHOT_NAME = "config.snapshot"
METRICS_NAME = "metrics.csv"
TEMPORAL_NAME = "activations_temporal.csv"
SCENARIO_NAME = "activations_scenario.csv"
REPORT_NAME = "train_report.csv"
EPISODES_NAME = "episodes.jsonl"
LATENCY_NAME = "latency.csv"
CHECKPOINT_DIR = "checkpoints"

SEED_ENV = "KDP_SEED"


def _digest_hex(digest) -> str:
    return bytes(int(b) for b in digest).hex()


def _resolve(out_dir: str, path: str) -> str:
    """Relative data/artifact paths live under the run's out directory."""
    if os.path.isabs(path):
        return path
    return os.path.join(out_dir, path)


def _scenario_kinds(name: str):
    if name == "all":
        return None
    if name not in SCENARIO_KINDS:
        raise ConfigError(
            f"unknown scenario {name!r}; expected one of "
            f"{sorted(SCENARIO_KINDS)} or 'all'")
    return [name]


def _merged_config(args) -> dict:
    """File config overlaid with KDP_SEED, then with command-line flags."""
    cfg = load_config(args.config) if args.config else default_config()
    if os.environ.get(SEED_ENV):
        cfg = apply_overrides(cfg, {"run.seed": os.environ[SEED_ENV]})
    overrides = {}
    for key, attr in args.flag_map:
        value = getattr(args, attr)
        if value is not None and value is not False:
            overrides[key] = value
    for item in args.set or []:
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    cfg = apply_overrides(cfg, overrides)
    if cfg["run.workers"] < 1:
        raise ConfigError("run.workers must be >= 1")
    return cfg


def _prepare_out(cfg: dict) -> str:
    out = cfg["run.out"]
    os.makedirs(out, exist_ok=True)
    write_snapshot(cfg, os.path.join(out, SNAPSHOT_NAME))
    return out


def _build_schedule(cfg: dict):
    return make_schedule(cfg["schedule.kind"], cfg["schedule.steps"],
                         cfg["schedule.beta_start"], cfg["schedule.beta_end"])


def _model_config(cfg: dict, obs_dim: int):
    return preset_config(cfg["model.preset"], obs_dim=obs_dim,
                         H=cfg["model.horizon"],
                         n_experts=cfg["model.n_experts"],
                         top_k=cfg["model.top_k"],
                         p_drop=cfg["model.p_drop"])


def _load_dataset_checked(path):
    if not os.path.exists(path):
        raise ConfigError(f"dataset not found: {path}")
    return load_dataset(path)


# -- commands -------------------------------------------------------------------

def cmd_gen_demos(args) -> int:
    cfg = _merged_config(args)
    if cfg["data.episodes"] < 1:
        raise ConfigError("data.episodes must be >= 1")
    out = _prepare_out(cfg)
    kinds = _scenario_kinds(cfg["data.scenario"])
    specs = episode_roster(cfg["data.episodes"], kinds=kinds,
                           seed_start=cfg["run.seed"])
    t0 = time.perf_counter()
    dataset, attempts = generate_dataset(specs)
    path = _resolve(out, cfg["data.path"])
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    save_dataset(dataset, path)
    steps = sum(ep.obs.shape[0] for ep in dataset.episodes)
    print(f"wrote {path}: {len(dataset.episodes)} episodes, {steps} steps, "
          f"{attempts} attempts, {time.perf_counter() - t0:.1f} s")
    print(f"stats hash {_digest_hex(dataset.stats_digest())}")
    return 0


def cmd_train(args) -> int:
    cfg = _merged_config(args)
    out = _prepare_out(cfg)
    dataset = _load_dataset_checked(_resolve(out, cfg["data.path"]))
    obs_dim = dataset.obs_mean.shape[0]
    model_cfg = _model_config(cfg, obs_dim)
    schedule = _build_schedule(cfg)
    train_cfg = TrainConfig(
        steps=cfg["train.steps"], batch_size=cfg["train.batch_size"],
        lr=cfg["train.lr"], warmup_steps=cfg["train.warmup_steps"],
        lambda_bal=cfg["train.lambda_bal"], gamma_mi=cfg["train.gamma_mi"],
        horizon=cfg["model.horizon"], seed=cfg["run.seed"],
        log_every=cfg["train.log_every"],
        checkpoint_every=cfg["train.checkpoint_every"])
    ckpt_dir = os.path.join(out, CHECKPOINT_DIR)
    os.makedirs(ckpt_dir, exist_ok=True)
    resume = cfg["train.resume"] or None

    def progress(row):
        print(f"step {row['step']}/{train_cfg.steps} "
              f"loss {row['loss']:.4f} diff {row['loss_diff']:.4f} "
              f"bal {row['loss_bal']:.4f} mi {row['mi']:.4f} "
              f"({row['wall_s']:.1f} s)")

    try:
        fit(dataset, model_cfg, schedule, train_cfg,
            checkpoint_dir=ckpt_dir, resume_from=resume,
            report_path=os.path.join(out, REPORT_NAME), on_log=progress)
    except NumericError as exc:
        print(f"numeric failure during training: {exc}", file=sys.stderr)
        print(f"diagnostics: config snapshot at "
              f"{os.path.join(out, SNAPSHOT_NAME)}", file=sys.stderr)
        return 3
    print(f"checkpoint {os.path.join(ckpt_dir, 'last.kdpc')}")
    print(f"report {os.path.join(out, REPORT_NAME)}")
    return 0


def _eval_policy_and_specs(cfg: dict, out: str):
    if cfg["eval.episodes"] < 1:
        raise ConfigError("eval.episodes must be >= 1")
    kinds = _scenario_kinds(cfg["eval.scenario"])
    specs = episode_roster(cfg["eval.episodes"], kinds=kinds,
                           seed_start=cfg["run.seed"])
    if cfg["eval.policy"] == "scripted":
        return "scripted", specs
    if cfg["eval.policy"] != "model":
        raise ConfigError(
            f"eval.policy must be 'model' or 'scripted', got {cfg['eval.policy']!r}")
    if not cfg["eval.checkpoint"]:
        raise ConfigError("eval.checkpoint is required for the model policy")
    policy = load_policy(_resolve(out, cfg["eval.checkpoint"]))
    if cfg["eval.data"]:
        dataset = _load_dataset_checked(_resolve(out, cfg["eval.data"]))
        want = dataset.stats_digest()
        from .training import load_checkpoint
        got = load_checkpoint(_resolve(out, cfg["eval.checkpoint"]))["stats_digest"]
        if got is None or not np.array_equal(got, want):
            raise CheckpointError(
                f"stats hash mismatch: checkpoint "
                f"{_digest_hex(got) if got is not None else 'missing'} vs "
                f"dataset {_digest_hex(want)}")
    return policy, specs


def _print_aggregates(aggregates: dict) -> None:
    for name, agg in aggregates.items():
        print(f"{name}: n {agg['n']} success {agg['success_rate']:.2f} "
              f"collision {agg['collision_rate']:.2f} "
              f"reward {agg['reward']:.2f} speed {agg['avg_velocity']:.2f} "
              f"steps {agg['steps']:.0f}")


def cmd_eval(args) -> int:
    cfg = _merged_config(args)
    out = _prepare_out(cfg)
    policy, specs = _eval_policy_and_specs(cfg, out)
    scripted = policy == "scripted"
    _, aggregates, traces = evaluate(
        policy, specs, eta=cfg["eval.eta"],
        metrics_path=os.path.join(out, METRICS_NAME),
        log_path=os.path.join(out, EPISODES_NAME),
        log_activations=not scripted)
    _print_aggregates(aggregates)
    if not scripted:
        analyze_activations(
            traces,
            temporal_path=os.path.join(out, TEMPORAL_NAME),
            scenario_path=os.path.join(out, SCENARIO_NAME))
        print(f"activations {os.path.join(out, TEMPORAL_NAME)} "
              f"{os.path.join(out, SCENARIO_NAME)}")
    if cfg["eval.latency"]:
        rows = measure_latency(n_trials=cfg["eval.latency_trials"],
                               T=cfg["schedule.steps"],
                               seed=cfg["run.seed"],
                               path=os.path.join(out, LATENCY_NAME))
        for r in rows:
            print(f"latency {r['preset']}: {r['mean_ms']:.2f} "
                  f"+- {r['std_ms']:.2f} ms")
    print(f"metrics {os.path.join(out, METRICS_NAME)}")
    return 0


def cmd_analyze(args) -> int:
    cfg = _merged_config(args)
    out = _prepare_out(cfg)
    policy, specs = _eval_policy_and_specs(cfg, out)
    if policy == "scripted":
        raise ConfigError("routing analysis needs the model policy")
    _, aggregates, traces = evaluate(policy, specs, eta=cfg["eval.eta"])
    temporal, scenario = analyze_activations(
        traces,
        temporal_path=os.path.join(out, TEMPORAL_NAME),
        scenario_path=os.path.join(out, SCENARIO_NAME))
    _print_aggregates(aggregates)
    for name, row in scenario.items():
        shares = " ".join(f"{v:.3f}" for v in row)
        print(f"{name} selection rates: {shares}")
    print(f"wrote {os.path.join(out, TEMPORAL_NAME)} and "
          f"{os.path.join(out, SCENARIO_NAME)}")
    return 0


def cmd_latency(args) -> int:
    cfg = _merged_config(args)
    out = _prepare_out(cfg)
    rows = measure_latency(n_trials=cfg["eval.latency_trials"],
                           T=cfg["schedule.steps"], seed=cfg["run.seed"],
                           path=os.path.join(out, LATENCY_NAME))
    for r in rows:
        print(f"{r['preset']}: {r['mean_ms']:.2f} +- {r['std_ms']:.2f} ms "
              f"({r['trials']} trials)")
    print(f"wrote {os.path.join(out, LATENCY_NAME)}")
    return 0


# -- argument plumbing -------------------------------------------------------------

def _add_common(sub, flag_map):
    sub.add_argument("--config", help="config file path")
    sub.add_argument("--out", help=f"output directory "
                     f"(default {SCHEMA['run.out'][1]})")
    sub.add_argument("--seed", type=int,
                     help=f"master seed (default {SCHEMA['run.seed'][1]}; "
                     f"beats the {SEED_ENV} environment variable)")
    sub.add_argument("--workers", type=int,
                     help="accepted for interface stability; this build "
                     "runs episodes sequentially")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override any config key (repeatable)")
    flag_map += [("run.out", "out"), ("run.seed", "seed"),
                 ("run.workers", "workers")]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffdrive",
        description="Knowledge-routed diffusion driving policy toolkit")
    subs = parser.add_subparsers(dest="command", required=True)

    gen = subs.add_parser("gen-demos", help="record scripted-expert episodes")
    fm = []
    _add_common(gen, fm)
    gen.add_argument("--scenario",
                     help=f"scenario family or 'all' "
                     f"(default {SCHEMA['data.scenario'][1]})")
    gen.add_argument("--episodes", type=int,
                     help=f"episode count (default {SCHEMA['data.episodes'][1]})")
    gen.add_argument("--data", help=f"dataset file "
                     f"(default {SCHEMA['data.path'][1]})")
    fm += [("data.scenario", "scenario"), ("data.episodes", "episodes"),
           ("data.path", "data")]
    gen.set_defaults(func=cmd_gen_demos, flag_map=fm)

    tr = subs.add_parser("train", help="fit the denoiser on a dataset")
    fm = []
    _add_common(tr, fm)
    tr.add_argument("--data", help=f"dataset file "
                    f"(default {SCHEMA['data.path'][1]})")
    tr.add_argument("--preset",
                    help=f"model size (default {SCHEMA['model.preset'][1]})")
    tr.add_argument("--steps", type=int,
                    help=f"optimizer steps (default {SCHEMA['train.steps'][1]})")
    tr.add_argument("--resume", help="checkpoint to continue from")
    fm += [("data.path", "data"), ("model.preset", "preset"),
           ("train.steps", "steps"), ("train.resume", "resume")]
    tr.set_defaults(func=cmd_train, flag_map=fm)

    ev = subs.add_parser("eval", help="closed-loop evaluation of a checkpoint")
    fm = []
    _add_common(ev, fm)
    ev.add_argument("--checkpoint", help="trained checkpoint to evaluate")
    ev.add_argument("--scenario",
                    help=f"scenario family or 'all' "
                    f"(default {SCHEMA['eval.scenario'][1]})")
    ev.add_argument("-n", "--episodes", type=int,
                    help=f"episodes (default {SCHEMA['eval.episodes'][1]})")
    ev.add_argument("--eta", type=float,
                    help=f"sampler noise scale (default {SCHEMA['eval.eta'][1]})")
    ev.add_argument("--policy", choices=("model", "scripted"),
                    help="evaluate the checkpoint or the rule-based expert")
    ev.add_argument("--data", help="dataset whose stats hash must match")
    ev.add_argument("--latency", action="store_true", default=None,
                    help="also measure per-decision latency")
    ev.add_argument("--trials", type=int,
                    help=f"latency trials "
                    f"(default {SCHEMA['eval.latency_trials'][1]})")
    fm += [("eval.checkpoint", "checkpoint"), ("eval.scenario", "scenario"),
           ("eval.episodes", "episodes"), ("eval.eta", "eta"),
           ("eval.policy", "policy"), ("eval.data", "data"),
           ("eval.latency", "latency"), ("eval.latency_trials", "trials")]
    ev.set_defaults(func=cmd_eval, flag_map=fm)

    an = subs.add_parser("analyze",
                         help="routing activation analysis over episodes")
    fm = []
    _add_common(an, fm)
    an.add_argument("--checkpoint", help="trained checkpoint to analyze")
    an.add_argument("--scenario",
                    help=f"scenario family or 'all' "
                    f"(default {SCHEMA['eval.scenario'][1]})")
    an.add_argument("-n", "--episodes", type=int,
                    help=f"episodes (default {SCHEMA['eval.episodes'][1]})")
    fm += [("eval.checkpoint", "checkpoint"), ("eval.scenario", "scenario"),
           ("eval.episodes", "episodes")]
    an.set_defaults(func=cmd_analyze, flag_map=fm)

    la = subs.add_parser("latency", help="per-decision latency across presets")
    fm = []
    _add_common(la, fm)
    la.add_argument("--trials", type=int,
                    help=f"trials per preset "
                    f"(default {SCHEMA['eval.latency_trials'][1]})")
    fm += [("eval.latency_trials", "trials")]
    la.set_defaults(func=cmd_latency, flag_map=fm)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, UsageError, CheckpointError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, GenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
