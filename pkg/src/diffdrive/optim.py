"""Adam with bias correction over named parameter dicts."""

from __future__ import annotations

import numpy as np

from .errors import UsageError
from .tensor import Tensor


class Adam:
    """Classic Adam. First-moment decay defaults to 0.95 to favor the noisy
    minibatch gradients of denoising targets; the rest are the usual values.

    Parameters are a name -> Tensor dict; iteration order is sorted by name so
    the update sequence (and serialized state) is independent of insertion
    order. ``lr`` is a plain attribute and may be reassigned between steps
    (warmup schedules do exactly that).
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 beta1: float = 0.95, beta2: float = 0.999, eps: float = 1e-8):
        if not params:
            raise UsageError("Adam: empty parameter dict")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise UsageError("Adam: betas must lie in [0, 1)")
        if lr <= 0.0:
            raise UsageError("Adam: lr must be positive")
        self.params = dict(sorted(params.items()))
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        """Apply one update from the gradients currently on the parameters."""
        for name, p in self.params.items():
            if p.grad is None:
                raise UsageError(f"Adam.step: parameter {name!r} has no gradient")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # -- state round-trip (for resumable training) -----------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Moment buffers keyed with m./v. prefixes, plus the step counter."""
        out: dict[str, np.ndarray] = {"step": np.array([float(self.step_count)])}
        for name in self.params:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        self.step_count = int(state["step"][0])
        for name, p in self.params.items():
            m = state[f"m.{name}"]
            v = state[f"v.{name}"]
            if m.shape != p.data.shape or v.shape != p.data.shape:
                raise UsageError(f"Adam state shape mismatch for {name!r}")
            self.m[name] = m.copy()
            self.v[name] = v.copy()
