"""DDPM noise schedule, forward corruption, ancestral sampling and guidance."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core.random import RandomSource

#: ε-model call signature: (x_t, timesteps, conditions) -> ε̂ with x_t's shape.
EpsModel = Callable[[np.ndarray, np.ndarray, "object"], np.ndarray]


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    # original timestep index of each entry; identity unless respaced
    timesteps: np.ndarray = field(default=None)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or len(beta) < 1:
            raise ValueError("beta must be a nonempty 1-D array")
        if not np.all((beta > 0) & (beta < 1)):
            raise ValueError("every beta must lie in (0, 1)")
        object.__setattr__(self, "beta", beta)
        if self.timesteps is None:
            object.__setattr__(self, "timesteps", np.arange(len(beta)))
        object.__setattr__(self, "alpha", 1.0 - beta)
        object.__setattr__(self, "alpha_bar", np.cumprod(1.0 - beta))

    @property
    def T(self) -> int:
        return len(self.beta)

    def respaced(self, steps: int) -> "NoiseSchedule":
        """Keep ``steps`` evenly spaced timesteps, preserving their alpha_bar.

        Retained indices are ``round(linspace(0, T-1, steps))``; each kept
        step's beta is ``1 - alpha_bar[k] / alpha_bar[k_prev]`` so the
        marginals of the shortened chain match the full one.
        """
        if not 1 <= steps <= self.T:
            raise ValueError(f"steps must be in [1, {self.T}], got {steps}")
        if steps == self.T:
            return self
        keep = np.unique(np.round(np.linspace(0, self.T - 1, steps)).astype(int))
        ab = self.alpha_bar[keep]
        prev = np.concatenate([[1.0], ab[:-1]])
        return NoiseSchedule(1.0 - ab / prev, self.timesteps[keep])


def linear_beta_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if T == 1:
        return NoiseSchedule(np.array([beta_start]))
    return NoiseSchedule(np.linspace(beta_start, beta_end, T))


def _check_t(t, sched: NoiseSchedule) -> np.ndarray:
    t = np.asarray(t)
    if t.dtype.kind not in "iu" or np.any(t < 0) or np.any(t >= sched.T):
        raise IndexError(f"timestep {t} outside [0, {sched.T})")
    return t


def _per_item(coef: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Broadcast a scalar or per-batch-item coefficient against x."""
    return coef.reshape(coef.shape + (1,) * (x.ndim - coef.ndim))


def forward_diffuse(x0, t, eps, sched: NoiseSchedule) -> np.ndarray:
    """sqrt(ab_t) x0 + sqrt(1 - ab_t) eps; ``t`` is a scalar or one index per leading item."""
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    t = _check_t(t, sched)
    ab = sched.alpha_bar[t]
    return _per_item(np.sqrt(ab), x0) * x0 + _per_item(np.sqrt(1.0 - ab), x0) * eps


def reverse_step(x_t, t, eps_hat, sched: NoiseSchedule, z) -> np.ndarray:
    """One ancestral step: (x_t - beta_t / sqrt(1 - ab_t) eps_hat) / sqrt(alpha_t) + sqrt(beta_t) z.

    The noise term is dropped at t = 0.
    """
    x_t = np.asarray(x_t)
    eps_hat = np.asarray(eps_hat)
    if eps_hat.shape != x_t.shape or np.shape(z) != x_t.shape:
        raise ValueError(f"shape mismatch: x_t {x_t.shape}, eps_hat {eps_hat.shape}, z {np.shape(z)}")
    t = int(_check_t(t, sched))
    beta = sched.beta[t]
    mean = (x_t - beta / np.sqrt(1.0 - sched.alpha_bar[t]) * eps_hat) / np.sqrt(sched.alpha[t])
    if t == 0:
        return mean
    return mean + np.sqrt(beta) * np.asarray(z)


@dataclass(frozen=True)
class GuidanceSpec:
    scale: float = 2.0
    # which condition slots the conditional branch may see
    active: frozenset = frozenset({"speech", "mean", "std"})

    def __post_init__(self):
        if not self.scale >= 0:
            raise ValueError(f"guidance scale must be >= 0, got {self.scale}")


def cfg_epsilon(model, x_t, t, conditions, guidance: GuidanceSpec) -> np.ndarray:
    """(1 - s) eps(null) + s eps(c): exact eps(null) at s=0 and eps(c) at s=1.

    ``conditions`` must provide ``masked(active)`` and ``null()``; the model is
    evaluated twice, once per branch.
    """
    eps_c = np.asarray(model(x_t, t, conditions.masked(guidance.active)))
    eps_u = np.asarray(model(x_t, t, conditions.null()))
    s = guidance.scale
    return (1.0 - s) * eps_u + s * eps_c


def _draw(rngs: Sequence[RandomSource], shape) -> np.ndarray:
    if len(rngs) == 1:
        return rngs[0].normal(shape)
    return np.stack([r.normal(shape[1:]) for r in rngs])


def sample_loop(
    model,
    conditions,
    guidance: GuidanceSpec | None,
    sched: NoiseSchedule,
    steps: int,
    rng: RandomSource | Sequence[RandomSource],
    shape,
) -> np.ndarray:
    """Ancestral sampling from pure noise over ``steps`` retained timesteps.

    ``rng`` is one source for the whole batch, or one per leading batch item
    (each item then depends only on its own source). With ``guidance=None``
    the model is called once per step on ``conditions`` as given.
    """
    if not 1 <= steps <= sched.T:
        raise ValueError(f"steps must be in [1, {sched.T}], got {steps}")
    rngs = [rng] if isinstance(rng, RandomSource) else list(rng)
    if len(rngs) > 1 and len(rngs) != shape[0]:
        raise ValueError("need one RandomSource per batch item")
    short = sched.respaced(steps)
    x = _draw(rngs, shape)
    batch = shape[0]
    for k in reversed(range(short.T)):
        t_orig = np.full(batch, short.timesteps[k])
        if guidance is None:
            eps = np.asarray(model(x, t_orig, conditions))
        else:
            eps = cfg_epsilon(model, x, t_orig, conditions, guidance)
        z = _draw(rngs, shape) if k > 0 else np.zeros(shape)
        x = reverse_step(x, k, eps, short, z)
    return x


def gaussian_optimal_eps(sched: NoiseSchedule, s: float):
    """Exact ε-predictor for data x0 ~ N(0, s^2 I): sqrt(1-ab) x_t / (ab s^2 + 1 - ab)."""

    def model(x_t, t, conditions=None):
        ab = sched.alpha_bar[np.asarray(t)]
        coef = np.sqrt(1.0 - ab) / (ab * s * s + 1.0 - ab)
        return _per_item(np.atleast_1d(coef), x_t) * x_t

    return model
