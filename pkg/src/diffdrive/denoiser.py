"""Denoiser backbone: observation encoder, timestep/action embeddings, and
the Transformer trunk whose per-token features feed the expert output stage.

All parameters live in a flat name -> Tensor dict (see param_shapes for the
full registry). Batch axis leads everywhere: action sequences are (B, H, 2),
context and timestep embeddings (B, n_emb).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import (Tensor, broadcast_to, concat, dropout, gelu, layer_norm,
                     make_dropout_mask, matmul, reshape, slice_axis, softmax,
                     tmean, transpose)

# width, heads, layers per named size
PRESETS = {
    "giant": (512, 4, 12),
    "large": (256, 4, 12),
    "medium": (256, 4, 8),
    "small": (128, 2, 4),
}


@dataclass(frozen=True)
class ModelConfig:
    n_emb: int
    n_head: int
    n_layer: int
    p_drop: float = 0.3
    H: int = 8
    obs_dim: int = 259
    n_experts: int = 8
    top_k: int = 2

    def __post_init__(self):
        if self.n_emb % self.n_head != 0:
            raise ConfigError(f"n_emb {self.n_emb} not divisible by n_head {self.n_head}")
        if self.top_k < 1 or self.top_k > self.n_experts:
            raise ConfigError(f"top_k {self.top_k} outside 1..{self.n_experts}")
        if self.H < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.H}")
        if self.n_layer < 0 or self.n_emb < 2 or self.n_emb % 2 != 0:
            raise ConfigError("n_layer must be >= 0 and n_emb an even int >= 2")
        if not 0.0 <= self.p_drop < 1.0:
            raise ConfigError(f"p_drop {self.p_drop} outside [0, 1)")


def preset_config(name: str, **overrides) -> ModelConfig:
    """Named size presets; extra keyword fields override the defaults."""
    key = name.lower()
    if key not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    n_emb, n_head, n_layer = PRESETS[key]
    return replace(ModelConfig(n_emb=n_emb, n_head=n_head, n_layer=n_layer), **overrides)


@dataclass
class TrunkOutput:
    tokens: Tensor  # (B, H, n_emb)
    pooled: Tensor  # (B, n_emb), arithmetic mean over the H tokens


# -- parameter registry ------------------------------------------------------


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every trainable array in the model, including router and expert heads."""
    E, H = cfg.n_emb, cfg.H
    shapes: dict[str, tuple[int, ...]] = {
        "enc.w1": (cfg.obs_dim, E), "enc.b1": (E,),
        "enc.w2": (E, E), "enc.b2": (E,),
        "temb.w1": (E, E), "temb.b1": (E,),
        "temb.w2": (E, E), "temb.b2": (E,),
        "act.w": (2, E), "act.b": (E,),
        "pos": (H + 1, E),  # slot 0 is the context token
    }
    for l in range(cfg.n_layer):
        p = f"block{l:02d}"
        for nm in ("wq", "wk", "wv", "wo"):
            shapes[f"{p}.attn.{nm}"] = (E, E)
        for nm in ("bq", "bk", "bv", "bo"):
            shapes[f"{p}.attn.{nm}"] = (E,)
        shapes[f"{p}.mlp.w1"] = (E, 4 * E)
        shapes[f"{p}.mlp.b1"] = (4 * E,)
        shapes[f"{p}.mlp.w2"] = (4 * E, E)
        shapes[f"{p}.mlp.b2"] = (E,)
    shapes["router.w"] = (E, cfg.n_experts)  # scores are x @ W, no bias
    for i in range(cfg.n_experts):
        p = f"expert{i:02d}"
        shapes[f"{p}.w1"] = (E, 2 * E)
        shapes[f"{p}.b1"] = (2 * E,)
        shapes[f"{p}.w2"] = (2 * E, 2)
        shapes[f"{p}.b2"] = (2,)
    return shapes

def _zero_init(name: str) -> bool:
    """Residual branch outputs and expert heads start at zero so the model's
    first prediction is exactly zero; encoders stay live."""
    return (name.endswith(".attn.wo") or name.endswith(".mlp.w2")
            or (name.startswith("expert") and name.endswith(".w2")))


def init_params(cfg: ModelConfig, rng: np.random.Generator,
                init_std: float = 0.02) -> dict[str, Tensor]:
    """Gaussian init for weights, zeros for biases, drawn in sorted name order
    so a seed fully determines the parameter values."""
    params: dict[str, Tensor] = {}
    for name, shape in sorted(param_shapes(cfg).items()):
        if len(shape) == 1 or _zero_init(name):
            data = np.zeros(shape)
        else:
            data = rng.normal(0.0, init_std, shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def count_params(cfg: ModelConfig) -> int:
    return sum(math.prod(s) for s in param_shapes(cfg).values())


# -- encoders ----------------------------------------------------------------


def encode_observation(obs, params: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Two-layer feed-forward projection of a (B, obs_dim) batch to (B, n_emb)."""
    x = obs if isinstance(obs, Tensor) else Tensor(obs)
    if x.ndim != 2 or x.shape[1] != cfg.obs_dim:
        raise DimensionError(f"observation batch must be (B, {cfg.obs_dim}), got {x.shape}")
    h = gelu(matmul(x, params["enc.w1"]) + params["enc.b1"])
    return matmul(h, params["enc.w2"]) + params["enc.b2"]


def timestep_encoding(t, n_emb: int) -> np.ndarray:
    """Pre-projection sinusoid: interleaved (sin, cos) pairs over n_emb/2
    geometric frequencies starting at 1, so the norm is sqrt(n_emb/2)."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if (t_arr < 1).any():
        raise ConfigError(f"timesteps must be >= 1, got {t}")
    k = np.arange(n_emb // 2)
    omega = 10000.0 ** (-2.0 * k / n_emb)
    phase = t_arr[:, None] * omega[None, :]
    enc = np.empty((t_arr.size, n_emb))
    enc[:, 0::2] = np.sin(phase)
    enc[:, 1::2] = np.cos(phase)
    return enc if np.ndim(t) else enc[0]


def embed_timestep(t, params: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Learned projection of the sinusoidal encoding; (B, n_emb) for array t."""
    enc = Tensor(np.atleast_2d(timestep_encoding(t, cfg.n_emb)))
    h = gelu(matmul(enc, params["temb.w1"]) + params["temb.b1"])
    return matmul(h, params["temb.w2"]) + params["temb.b2"]


# -- transformer trunk ---------------------------------------------------------


def _attention(h: Tensor, params, prefix: str, cfg: ModelConfig,
               train_mode: bool, rng, probe) -> Tensor:
    B, S, E = h.shape
    nh, hd = cfg.n_head, cfg.n_emb // cfg.n_head
    q = matmul(h, params[f"{prefix}.wq"]) + params[f"{prefix}.bq"]
    k = matmul(h, params[f"{prefix}.wk"]) + params[f"{prefix}.bk"]
    v = matmul(h, params[f"{prefix}.wv"]) + params[f"{prefix}.bv"]
    q = transpose(reshape(q, (B, S, nh, hd)), (0, 2, 1, 3))
    kt = transpose(reshape(k, (B, S, nh, hd)), (0, 2, 3, 1))
    v = transpose(reshape(v, (B, S, nh, hd)), (0, 2, 1, 3))
    probs = softmax(matmul(q, kt) * (1.0 / math.sqrt(hd)))
    if probe is not None:
        probe.setdefault("attn", []).append(probs.data.copy())
    if train_mode and cfg.p_drop > 0.0:
        probs = dropout(probs, make_dropout_mask(rng, probs.shape, cfg.p_drop))
    ctx = reshape(transpose(matmul(probs, v), (0, 2, 1, 3)), (B, S, E))
    out = matmul(ctx, params[f"{prefix}.wo"]) + params[f"{prefix}.bo"]
    if train_mode and cfg.p_drop > 0.0:
        out = dropout(out, make_dropout_mask(rng, out.shape, cfg.p_drop))
    return out


def trunk_forward(a_t, c: Tensor, t_emb: Tensor, params: dict[str, Tensor],
                  cfg: ModelConfig, train_mode: bool = False,
                  rng: np.random.Generator | None = None,
                  probe: dict | None = None) -> TrunkOutput:
    """Run the noisy action sequence through the H+1-token trunk.

    a_t: (B, H, 2); c, t_emb: (B, n_emb). The context vector is both
    prepended as token 0 and, summed with the timestep embedding, added to
    every action token. The context token is stripped from the output.
    Dropout (attention probabilities and residual branches) runs only in
    train_mode, which then requires an rng.
    """
    x_in = a_t if isinstance(a_t, Tensor) else Tensor(a_t)
    if x_in.ndim != 3 or x_in.shape[1] != cfg.H or x_in.shape[2] != 2:
        raise DimensionError(f"action batch must be (B, {cfg.H}, 2), got {x_in.shape}")
    B = x_in.shape[0]
    if c.shape != (B, cfg.n_emb) or t_emb.shape != (B, cfg.n_emb):
        raise DimensionError("context/timestep embeddings must be (B, n_emb)")
    if train_mode and cfg.p_drop > 0.0 and rng is None:
        raise ConfigError("train_mode dropout needs an rng")

    tok = matmul(x_in, params["act.w"]) + params["act.b"]
    cond = broadcast_to(reshape(c + t_emb, (B, 1, cfg.n_emb)), (B, cfg.H, cfg.n_emb))
    x = concat([reshape(c, (B, 1, cfg.n_emb)), tok + cond], axis=1)
    x = x + params["pos"]

    for l in range(cfg.n_layer):
        p = f"block{l:02d}"
        x = x + _attention(layer_norm(x), params, f"{p}.attn", cfg, train_mode, rng, probe)
        h = gelu(matmul(layer_norm(x), params[f"{p}.mlp.w1"]) + params[f"{p}.mlp.b1"])
        h = matmul(h, params[f"{p}.mlp.w2"]) + params[f"{p}.mlp.b2"]
        if train_mode and cfg.p_drop > 0.0:
            h = dropout(h, make_dropout_mask(rng, h.shape, cfg.p_drop))
        x = x + h

    # final norm: output heads must not see the growing residual-stream scale
    tokens = layer_norm(slice_axis(x, 1, 1, cfg.H + 1))
    return TrunkOutput(tokens=tokens, pooled=tmean(tokens, axis=1))
