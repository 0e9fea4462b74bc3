"""Sparse expert output stage: gating, Top-K selection with renormalization,
expert noise heads, and the two auxiliary losses (usage balance and the
category/expert mutual information).

Routing granularity is one decision per sequence per denoise step, computed
from the trunk's pooled feature. RoutingDecision fields carry a leading batch
axis; a single decision is the B=1 case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .tensor import (Tensor, broadcast_to, clamp_min, concat, gather_last,
                     gelu, index_rows, matmul, reshape, scatter_rows,
                     slice_axis, softmax, tlog, tsum)
from .denoiser import ModelConfig, TrunkOutput, embed_timestep, encode_observation, trunk_forward

# log(max(p, floor)) stands in for log p; cells at exactly 0 then contribute
# 0 * log(floor) = 0, honoring the 0 log 0 := 0 convention
_LOG_FLOOR = 1e-300


@dataclass
class RoutingDecision:
    """Gate distribution plus the sparse selection made from it.

    gate: (B, N) full softmax over experts; selected: (B, K) expert indices in
    decreasing gate order, ties broken toward the lower index; weights: (B, K)
    the selected gate entries renormalized to sum 1. gate and weights stay on
    the autodiff graph; selection itself is non-differentiable.
    """

    gate: Tensor
    selected: np.ndarray
    weights: Tensor


def route(x: Tensor, router_w: Tensor, k: int) -> RoutingDecision:
    """Score a (B, m) feature batch with the (m, N) router matrix and pick the
    top k experts per row."""
    n_experts = router_w.shape[1]
    if not 1 <= k <= n_experts:
        raise UsageError(f"top-k {k} outside 1..{n_experts}")
    gate = softmax(matmul(x, router_w))
    # stable argsort on the negated probabilities: equal gates keep index order
    selected = np.argsort(-gate.data, axis=-1, kind="stable")[:, :k]
    picked = gather_last(gate, selected)
    total = broadcast_to(tsum(picked, axis=1, keepdims=True), picked.shape)
    return RoutingDecision(gate=gate, selected=selected, weights=picked / total)


def _expert_forward(tokens: Tensor, params: dict[str, Tensor], i: int) -> Tensor:
    p = f"expert{i:02d}"
    h = gelu(matmul(tokens, params[f"{p}.w1"]) + params[f"{p}.b1"])
    return matmul(h, params[f"{p}.w2"]) + params[f"{p}.b2"]


def moe_predict(trunk: TrunkOutput, params: dict[str, Tensor],
                cfg: ModelConfig) -> tuple[Tensor, RoutingDecision]:
    """Aggregate the selected experts' per-token noise estimates.

    Runs each expert only on the batch rows routed to it; unselected experts
    see no input and receive no gradient. Returns ((B, H, 2), decision).
    """
    decision = route(trunk.pooled, params["router.w"], cfg.top_k)
    B, H = trunk.tokens.shape[0], trunk.tokens.shape[1]
    parts = []
    for i in range(cfg.n_experts):
        rows, slots = np.nonzero(decision.selected == i)
        if rows.size == 0:
            continue
        out_i = _expert_forward(index_rows(trunk.tokens, rows), params, i)
        w = gather_last(index_rows(decision.weights, rows), slots[:, None])
        out_i = out_i * broadcast_to(reshape(w, (rows.size, 1, 1)), out_i.shape)
        parts.append(scatter_rows(out_i, rows, B))
    est = parts[0]
    for p in parts[1:]:
        est = est + p
    return est, decision


def predict_noise(a_t, obs, t, params: dict[str, Tensor], cfg: ModelConfig,
                  train_mode: bool = False, rng: np.random.Generator | None = None,
                  probe: dict | None = None) -> tuple[Tensor, RoutingDecision]:
    """Full noise prediction: encode the observation, embed the timestep, run
    the trunk, and aggregate expert heads. t is an int or a (B,) int array."""
    c = encode_observation(obs, params, cfg)
    t_arr = np.asarray(t)
    t_emb = embed_timestep(t if t_arr.ndim else int(t_arr), params, cfg)
    if t_arr.ndim == 0:
        B = a_t.shape[0]
        t_emb = broadcast_to(t_emb, (B, cfg.n_emb))
    trunk = trunk_forward(a_t, c, t_emb, params, cfg, train_mode=train_mode,
                          rng=rng, probe=probe)
    return moe_predict(trunk, params, cfg)


# -- auxiliary losses ----------------------------------------------------------


def usage_probs(decision: RoutingDecision, n_experts: int) -> Tensor:
    """Per-sample selection-probability estimates as a row-stochastic (B, N)
    matrix: the average of the dense gate and the hard top-k indicator.

    The indicator half anchors column means at the empirical selection
    frequencies, so statistics computed from this matrix track which experts
    actually fire; the gate half is the differentiable path, letting those
    statistics steer every expert's score, selected or not. Either half
    alone fails: the gate's means can be uniform while selection stays
    skewed, and the indicator has no gradient at all.
    """
    b, k = decision.selected.shape
    hard = np.zeros((b, n_experts))
    for j in range(k):
        hard[np.arange(b), decision.selected[:, j]] += 1.0 / k
    return (decision.gate + Tensor(hard)) * 0.5


def _as_tensor_checked(x, name: str) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if (t.data < 0).any():
        raise UsageError(f"{name} has negative entries")
    return t


def load_balance_loss(gate_batch) -> Tensor:
    """(1/N) sum_i p_i log p_i over the soft usage p = column means.

    Negative entropy of the average gate: minimized exactly at uniform usage,
    with value -ln(N)/N there and 0 at one-hot usage.
    """
    gates = _as_tensor_checked(gate_batch, "gate batch")
    if gates.ndim != 2 or gates.shape[0] < 1:
        raise UsageError(f"gate batch must be (B, N), got {gates.shape}")
    n = gates.shape[1]
    p = tsum(gates, axis=0) * (1.0 / gates.shape[0])
    return tsum(p * tlog(clamp_min(p, _LOG_FLOOR))) * (1.0 / n)


def mutual_info(joint) -> Tensor:
    """I(K; E) of a (J, N) joint distribution, marginals taken from the joint.
    Zero-probability cells contribute zero."""
    j = _as_tensor_checked(joint, "joint")
    if j.ndim != 2:
        raise UsageError(f"joint must be a 2-d matrix, got {j.shape}")
    if abs(float(j.data.sum()) - 1.0) > 1e-9:
        raise UsageError(f"joint sums to {j.data.sum()}, expected 1")
    rows, cols = j.shape
    pk = tsum(j, axis=1, keepdims=True)
    pe = tsum(j, axis=0, keepdims=True)
    denom = matmul(pk, pe)  # (J,1)@(1,N) outer product of marginals
    log_ratio = tlog(clamp_min(j, _LOG_FLOOR)) - tlog(clamp_min(denom, _LOG_FLOOR))
    # a cell at exactly 0 must not contribute even when the marginals differ
    mask = (j.data > 0).astype(np.float64)
    return tsum(j * log_ratio * mask)


def estimate_joint(gate_batch, categories, n_categories: int) -> Tensor:
    """Soft empirical joint over (category, expert): row j is the mean gate
    mass of samples labeled j, scaled by their batch frequency.

    categories are 0-based integer labels in [0, n_categories). The result
    sums to 1 and is differentiable through the gates.
    """
    gates = gate_batch if isinstance(gate_batch, Tensor) else Tensor(np.asarray(gate_batch, dtype=np.float64))
    if gates.ndim != 2 or gates.shape[0] < 1:
        raise UsageError(f"gate batch must be (B, N), got {gates.shape}")
    cats = np.asarray(categories)
    if cats.shape != (gates.shape[0],):
        raise UsageError(f"need one category per row, got {cats.shape}")
    if cats.min() < 0 or cats.max() >= n_categories:
        raise UsageError(f"categories outside 0..{n_categories - 1}")
    B, n = gates.shape
    rows = []
    zero_row = Tensor(np.zeros((1, n)))
    for j in range(n_categories):
        idx = np.nonzero(cats == j)[0]
        if idx.size == 0:
            rows.append(zero_row)
        else:
            rows.append(reshape(tsum(index_rows(gates, idx), axis=0) * (1.0 / B), (1, n)))
    return concat(rows, axis=0)
