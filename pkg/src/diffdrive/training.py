"""Denoiser training: loss assembly, the optimization loop, checkpoints with
bit-exact resume, and a plain CSV progress report."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from .checkpoint import load_arrays, save_arrays
from .demos import Dataset, sample_minibatch
from .denoiser import ModelConfig, init_params
from .errors import CheckpointError, ConfigError, UsageError
from .moe import (estimate_joint, load_balance_loss, mutual_info,
                  predict_noise, usage_probs)
from .optim import Adam
from .schedule import KINDS, NoiseSchedule
from .tensor import Tensor, tmean

N_SCENARIOS = 3

# wall_s stays out of the file so reruns are byte-identical
REPORT_HEADER = "step,loss,loss_diff,loss_bal,mi,usage_entropy,lr"


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 64
    lr: float = 1e-4
    warmup_steps: int = 100
    lambda_bal: float = 0.01
    gamma_mi: float = 0.01
    horizon: int = 8
    seed: int = 0
    log_every: int = 25
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be positive")
        if self.lr <= 0.0 or self.warmup_steps < 0:
            raise ConfigError("lr must be positive and warmup non-negative")
        if self.lambda_bal < 0.0 or self.gamma_mi < 0.0:
            raise ConfigError("auxiliary loss weights must be non-negative")


def loss_terms(params, model_cfg: ModelConfig, schedule: NoiseSchedule,
               obs_n: np.ndarray, a0: np.ndarray, labels: np.ndarray,
               rng: np.random.Generator, train_mode: bool = True):
    """One minibatch forward pass; returns (diff, bal, mi, routing).

    The caller combines the losses as diff + lambda_bal * bal - gamma_mi * mi;
    this just produces the pieces, plus the routing decision for telemetry.
    """
    batch = a0.shape[0]
    t = rng.integers(1, schedule.T + 1, size=batch)
    eps = rng.standard_normal(a0.shape)
    a_t = schedule.forward_diffuse(a0, t, eps)
    eps_hat, routing = predict_noise(a_t, obs_n, t, params, model_cfg,
                                     train_mode=train_mode, rng=rng)
    err = eps_hat - Tensor(eps)
    loss_diff = tmean(err * err)
    # regularizer statistics must track actual selections, with gradient
    # reaching unselected experts; usage_probs carries both
    usage = usage_probs(routing, model_cfg.n_experts)
    loss_bal = load_balance_loss(usage)
    joint = estimate_joint(usage, labels, N_SCENARIOS)
    mi = mutual_info(joint)
    return loss_diff, loss_bal, mi, routing


def hard_usage_entropy(selected: np.ndarray, n_experts: int) -> float:
    """Entropy of the empirical top-k selection frequencies, in nats."""
    counts = np.bincount(selected.ravel(), minlength=n_experts)
    q = counts / counts.sum()
    nz = q[q > 0.0]
    return float(-(nz * np.log(nz)).sum())


def train_step(params, opt: Adam, model_cfg: ModelConfig,
               schedule: NoiseSchedule, dataset: Dataset,
               train_cfg: TrainConfig, rng: np.random.Generator) -> dict:
    """Sample a minibatch, backpropagate the combined loss, apply one update."""
    obs_n, a0, labels = sample_minibatch(dataset, rng, train_cfg.batch_size,
                                         train_cfg.horizon)
    loss_diff, loss_bal, mi, routing = loss_terms(params, model_cfg, schedule,
                                                  obs_n, a0, labels, rng)
    total = (loss_diff + loss_bal * train_cfg.lambda_bal
             + mi * (-train_cfg.gamma_mi))
    for p in params.values():
        p.grad = None
    total.backward()
    # an expert outside every top-k this batch gets an explicit zero update
    for p in params.values():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
    opt.step()
    return {"loss": float(total.data), "loss_diff": float(loss_diff.data),
            "loss_bal": float(loss_bal.data), "mi": float(mi.data),
            "usage_entropy": hard_usage_entropy(routing.selected,
                                                model_cfg.n_experts)}


# -- checkpoint assembly ---------------------------------------------------

def _encode_rng(rng: np.random.Generator) -> np.ndarray:
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise UsageError("only PCG64 generators are checkpointable")
    words = []
    for big in (st["state"]["state"], st["state"]["inc"]):
        words += [(big >> (32 * i)) & 0xFFFFFFFF for i in range(4)]
    words += [int(st["has_uint32"]), int(st["uinteger"])]
    return np.array(words, dtype=np.float64)


def _decode_rng(arr: np.ndarray) -> np.random.Generator:
    words = [int(w) for w in arr]
    if len(words) != 10:
        raise CheckpointError("malformed generator state record")
    state = sum(w << (32 * i) for i, w in enumerate(words[0:4]))
    inc = sum(w << (32 * i) for i, w in enumerate(words[4:8]))
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": state, "inc": inc},
        "has_uint32": words[8], "uinteger": words[9],
    }
    return rng


def save_checkpoint(path, params, opt: Adam, rng: np.random.Generator,
                    trained_steps: int, model_cfg: ModelConfig,
                    schedule: NoiseSchedule, dataset: Dataset) -> None:
    """Everything needed to resume training or run evaluation standalone."""
    arrays = {f"param.{k}": v.data for k, v in params.items()}
    arrays.update({f"opt.{k}": v for k, v in opt.state_arrays().items()})
    arrays["rng.state"] = _encode_rng(rng)
    arrays["norm.mean"] = dataset.obs_mean
    arrays["norm.std"] = dataset.obs_std
    arrays["norm.digest"] = dataset.stats_digest()
    arrays["meta.trained_steps"] = np.array(float(trained_steps))
    arrays["meta.model"] = np.array([model_cfg.n_emb, model_cfg.n_head,
                                     model_cfg.n_layer, model_cfg.H,
                                     model_cfg.obs_dim, model_cfg.n_experts,
                                     model_cfg.top_k], dtype=np.float64)
    arrays["meta.p_drop"] = np.array(model_cfg.p_drop)
    arrays["meta.schedule"] = np.array([KINDS.index(schedule.kind),
                                        schedule.T], dtype=np.float64)
    # full beta row so the schedule round-trips bit-for-bit
    arrays["meta.beta"] = np.asarray(schedule.beta, dtype=np.float64)
    save_arrays(path, arrays)


def load_checkpoint(path) -> dict:
    """Unpack a training checkpoint into ready-to-use pieces."""
    arrays = load_arrays(path)
    for key in ("meta.model", "meta.schedule", "meta.beta", "norm.mean",
                "norm.std", "rng.state", "meta.trained_steps"):
        if key not in arrays:
            raise CheckpointError(f"checkpoint missing {key}")
    m = arrays["meta.model"].astype(int)
    model_cfg = ModelConfig(n_emb=int(m[0]), n_head=int(m[1]), n_layer=int(m[2]),
                            p_drop=float(arrays["meta.p_drop"]), H=int(m[3]),
                            obs_dim=int(m[4]), n_experts=int(m[5]),
                            top_k=int(m[6]))
    sch = arrays["meta.schedule"]
    T = int(sch[1])
    beta = np.array(arrays["meta.beta"], dtype=np.float64)
    if beta.shape != (T + 1,) or beta[0] != 0.0:
        raise CheckpointError("schedule record is inconsistent")
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    beta.setflags(write=False)
    alpha.setflags(write=False)
    alpha_bar.setflags(write=False)
    schedule = NoiseSchedule(kind=KINDS[int(sch[0])], T=T, beta=beta,
                             alpha=alpha, alpha_bar=alpha_bar)
    params = {k[len("param."):]: Tensor(v, requires_grad=True)
              for k, v in arrays.items() if k.startswith("param.")}
    opt_state = {k[len("opt."):]: v for k, v in arrays.items()
                 if k.startswith("opt.")}
    return {
        "params": params,
        "opt_state": opt_state,
        "rng": _decode_rng(arrays["rng.state"]),
        "model_cfg": model_cfg,
        "schedule": schedule,
        "obs_mean": arrays["norm.mean"],
        "obs_std": arrays["norm.std"],
        "stats_digest": arrays.get("norm.digest"),
        "trained_steps": int(arrays["meta.trained_steps"]),
    }


def _warmed_lr(base: float, warmup: int, step: int) -> float:
    if warmup <= 0:
        return base
    return base * min(1.0, (step + 1) / warmup)


def fit(dataset: Dataset, model_cfg: ModelConfig, schedule: NoiseSchedule,
        train_cfg: TrainConfig, checkpoint_dir=None, resume_from=None,
        report_path=None, on_log=None):
    """Run the optimization loop; returns (params, report rows).

    With checkpoint_dir set, a numbered checkpoint lands every
    checkpoint_every steps plus a final one named last.kdpc. Resuming from a
    checkpoint continues the run bit-for-bit as if it had never stopped,
    which requires the same dataset, model, and schedule settings.
    """
    if model_cfg.obs_dim != dataset.obs_mean.shape[0]:
        raise ConfigError("model obs_dim does not match dataset observation width")
    if train_cfg.horizon != model_cfg.H:
        raise ConfigError("training horizon must equal the model horizon")
    if resume_from is not None:
        loaded = load_checkpoint(resume_from)
        if loaded["model_cfg"] != model_cfg:
            raise ConfigError("checkpoint model settings differ from requested")
        if (loaded["stats_digest"] is not None
                and not np.array_equal(loaded["stats_digest"],
                                       dataset.stats_digest())):
            raise CheckpointError(
                "checkpoint was trained against a different dataset")
        params = loaded["params"]
        rng = loaded["rng"]
        start_step = loaded["trained_steps"]
        opt = Adam(params, lr=train_cfg.lr)
        opt.load_state_arrays(loaded["opt_state"])
    else:
        rng = np.random.default_rng(train_cfg.seed)
        params = init_params(model_cfg, rng)
        opt = Adam(params, lr=train_cfg.lr)
        start_step = 0

    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)
    rows = []
    t0 = time.perf_counter()
    report_fh = open(report_path, "a") if report_path is not None else None
    try:
        if report_fh is not None and start_step == 0:
            report_fh.write(REPORT_HEADER + "\n")
        for step in range(start_step, train_cfg.steps):
            opt.lr = _warmed_lr(train_cfg.lr, train_cfg.warmup_steps, step)
            metrics = train_step(params, opt, model_cfg, schedule, dataset,
                                 train_cfg, rng)
            if (step + 1) % train_cfg.log_every == 0 or step + 1 == train_cfg.steps:
                row = {"step": step + 1, **metrics, "lr": opt.lr,
                       "wall_s": time.perf_counter() - t0}
                rows.append(row)
                if report_fh is not None:
                    report_fh.write(
                        f"{row['step']},{row['loss']:.8f},{row['loss_diff']:.8f},"
                        f"{row['loss_bal']:.8f},{row['mi']:.8f},"
                        f"{row['usage_entropy']:.8f},{row['lr']:.3e}\n")
                    report_fh.flush()
                if on_log is not None:
                    on_log(row)
            if checkpoint_dir is not None and (
                    (step + 1) % train_cfg.checkpoint_every == 0):
                save_checkpoint(f"{checkpoint_dir}/step{step + 1:07d}.kdpc",
                                params, opt, rng, step + 1, model_cfg,
                                schedule, dataset)
        if checkpoint_dir is not None:
            save_checkpoint(f"{checkpoint_dir}/last.kdpc", params, opt, rng,
                            train_cfg.steps, model_cfg, schedule, dataset)
    finally:
        if report_fh is not None:
            report_fh.close()
    return params, rows
