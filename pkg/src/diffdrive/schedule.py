"""Diffusion noise schedule: forward corruption and reverse sampling.

Arrays are indexed by timestep with a convention pad at index 0
(beta[0]=0, alpha[0]=1, alpha_bar[0]=1) so that formulas involving the
previous step read directly and the final reverse step (t=1) gets zero
posterior noise automatically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, UsageError

KINDS = ("squared_cosine", "linear")


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable corruption schedule over T steps.

    beta/alpha/alpha_bar have length T+1; entries 1..T are the schedule,
    entry 0 is the convention pad described in the module docstring.
    """

    kind: str
    T: int
    beta: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)

    def _check_t(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.T:
            raise UsageError(f"timestep {t} outside 1..{self.T}")
        return t

    def forward_diffuse(self, a0: np.ndarray, t, eps: np.ndarray) -> np.ndarray:
        """Corrupt a clean sequence to step t: sqrt(abar_t) a0 + sqrt(1-abar_t) eps.

        t may be an int (whole batch at one step) or an int array with one
        entry per leading-axis element of a0.
        """
        a0 = np.asarray(a0, dtype=np.float64)
        eps = np.asarray(eps, dtype=np.float64)
        if eps.shape != a0.shape:
            raise DimensionError(f"noise shape {eps.shape} != signal shape {a0.shape}")
        t_arr = np.asarray(t)
        if t_arr.ndim == 0:
            abar = self.alpha_bar[self._check_t(t)]
        else:
            if t_arr.shape != a0.shape[:1]:
                raise DimensionError(f"t shape {t_arr.shape} must be ({a0.shape[0]},)")
            if (t_arr < 1).any() or (t_arr > self.T).any():
                raise UsageError(f"timesteps outside 1..{self.T}")
            abar = self.alpha_bar[t_arr].reshape((-1,) + (1,) * (a0.ndim - 1))
        return np.sqrt(abar) * a0 + np.sqrt(1.0 - abar) * eps

    def reverse_step(self, at: np.ndarray, eps_hat: np.ndarray, t: int,
                     eta: float = 0.0, z: np.ndarray | None = None) -> np.ndarray:
        """One posterior step a_t -> a_{t-1} given the predicted noise.

        Posterior mean per the epsilon parameterization; posterior scale
        eta * sqrt((1-abar_{t-1})/(1-abar_t)) * sqrt(1-alpha_t), which is 0 at
        t=1 for any eta. z is the standard normal draw (None means zeros).
        """
        at = np.asarray(at, dtype=np.float64)
        eps_hat = np.asarray(eps_hat, dtype=np.float64)
        if eps_hat.shape != at.shape:
            raise DimensionError(f"eps_hat shape {eps_hat.shape} != a_t shape {at.shape}")
        t = self._check_t(t)
        alpha_t = self.alpha[t]
        abar_t = self.alpha_bar[t]
        abar_prev = self.alpha_bar[t - 1]
        mu = (at - ((1.0 - alpha_t) / np.sqrt(1.0 - abar_t)) * eps_hat) / np.sqrt(alpha_t)
        sigma = eta * np.sqrt((1.0 - abar_prev) / (1.0 - abar_t)) * np.sqrt(1.0 - alpha_t)
        if z is None or sigma == 0.0:
            return mu
        z = np.asarray(z, dtype=np.float64)
        if z.shape != at.shape:
            raise DimensionError(f"z shape {z.shape} != a_t shape {at.shape}")
        return mu + sigma * z


def make_schedule(kind: str, T: int, beta_start: float = 1e-4,
                  beta_end: float = 0.02) -> NoiseSchedule:
    """Build a schedule of the given kind.

    squared_cosine: abar(t) = f(t)/f(0), f(t) = cos(((t/T + s)/(1 + s)) * pi/2)^2
    with s = 0.008; betas derived as 1 - abar(t)/abar(t-1), clipped into
    [beta_start, beta_end], and abar recomputed from the clipped betas so the
    stored arrays stay mutually consistent.

    linear: betas evenly spaced from beta_start to beta_end.
    """
    if kind not in KINDS:
        raise ConfigError(f"unknown schedule kind {kind!r}; expected one of {KINDS}")
    if not isinstance(T, int) or T < 1:
        raise ConfigError(f"step count must be a positive int, got {T!r}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]")

    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, T)
    else:
        s = 0.008
        ts = np.arange(T + 1, dtype=np.float64)
        f = np.cos(((ts / T + s) / (1.0 + s)) * (np.pi / 2.0)) ** 2
        abar_raw = f / f[0]
        betas = np.clip(1.0 - abar_raw[1:] / abar_raw[:-1], beta_start, beta_end)

    beta = np.concatenate([[0.0], betas])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    beta.setflags(write=False)
    alpha.setflags(write=False)
    alpha_bar.setflags(write=False)
    return NoiseSchedule(kind=kind, T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar)
