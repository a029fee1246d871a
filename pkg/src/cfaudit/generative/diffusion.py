"""Attribute-conditioned latent diffusion at vector scale.

The noise predictor sees ``[z_t, time embedding, attribute embedding]``.
During training the attribute is swapped for the null token at the
conditioning-dropout rate so one network serves both the conditional and
the unconditional reverse process.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..numerics import DenseNet, NumericError, OptimState, opt_step
from .vae import NULL, Embedding


@dataclass(frozen=True)
class Schedule:
    betas: np.ndarray

    @classmethod
    def linear(cls, T: int = 250, beta_start: float = 1e-3, beta_end: float = 1e-2, scale: float = 0.2) -> "Schedule":
        """Linear betas over ``T`` steps, multiplied by ``scale``.

        ``scale=0.2, T=250`` is the reduced-variance audit schedule;
        ``scale=1, T=1000`` is the usual generation schedule.
        """
        if T < 1:
            raise ValueError("T must be >= 1")
        return cls(scale * np.linspace(beta_start, beta_end, T))

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or np.any(b < 0) or np.any(b >= 1):
            raise ValueError("betas must lie in [0, 1)")

    @property
    def T(self) -> int:
        return len(self.betas)

    @property
    def alpha_bar(self) -> np.ndarray:
        """alpha_bar[t-1] = prod_{s<=t} (1 - beta_s), for t = 1..T."""
        return np.cumprod(1.0 - self.betas)

    def ab(self, t) -> np.ndarray:
        """alpha_bar at step ``t`` with the convention alpha_bar(0) = 1."""
        t = np.asarray(t, dtype=np.int64)
        full = np.concatenate([[1.0], self.alpha_bar])
        return full[t]


def forward_diffuse(schedule: Schedule, z0, t, noise) -> np.ndarray:
    """Closed-form ``z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) noise``."""
    t_arr = np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > schedule.T):
        raise ValueError(f"diffusion step must lie in [1, {schedule.T}]")
    ab = schedule.ab(t_arr)
    if ab.ndim == 1 and np.ndim(z0) == 2:
        ab = ab[:, None]
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * noise


def time_embedding(t, dim: int = 16) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


@dataclass
class DiffusionConfig:
    T: int = 250
    beta_start: float = 1e-3
    beta_end: float = 1e-2
    beta_scale: float = 0.2
    hidden: int = 128
    steps: int = 4000
    batch: int = 256
    lr: float = 1e-3
    dropout: float = 0.1
    time_dim: int = 16
    emb_dim: int = 4


@dataclass
class DiffusionParams:
    schedule: Schedule
    net: DenseNet
    emb: Embedding
    time_dim: int = 16
    dropout: float = 0.1
    history: list = field(default_factory=list)

    @property
    def latent_dim(self) -> int:
        return self.net.out_dim

    def net_input(self, z_t, t, a) -> np.ndarray:
        n = len(z_t)
        t = np.broadcast_to(np.asarray(t), (n,))
        a = np.broadcast_to(np.asarray(a, dtype=np.int64), (n,))
        return np.concatenate([z_t, time_embedding(t, self.time_dim), self.emb(a)], axis=1)

    def eps(self, z_t, t, a) -> np.ndarray:
        return self.net(self.net_input(z_t, t, a))


EpsFn = Callable[[np.ndarray, int, np.ndarray], np.ndarray]


def init_diffusion(d: int, cfg: DiffusionConfig, rng: np.random.Generator) -> DiffusionParams:
    sched = Schedule.linear(cfg.T, cfg.beta_start, cfg.beta_end, cfg.beta_scale)
    net = DenseNet.build([d + cfg.time_dim + cfg.emb_dim, cfg.hidden, cfg.hidden, d], rng)
    return DiffusionParams(sched, net, Embedding.build(3, cfg.emb_dim, rng), cfg.time_dim, cfg.dropout)


def denoise_loss_and_grads(dp: DiffusionParams, z0, t, a, noise):
    """Mean squared noise-prediction error ``||eps - eps_theta||^2`` and its gradients."""
    z_t = forward_diffuse(dp.schedule, z0, t, noise)
    out, cache = dp.net.forward_cache(dp.net_input(z_t, t, a))
    n = len(z0)
    resid = out - noise
    loss = float(np.mean(np.sum(resid * resid, axis=1)))
    grads, g_in = dp.net.backward(cache, 2.0 * resid / n)
    start = dp.latent_dim + dp.time_dim
    grads.append(dp.emb.grad(a, g_in[:, start:]))
    return loss, grads


def train_denoiser(z0: np.ndarray, a: np.ndarray, cfg: DiffusionConfig, rng: np.random.Generator) -> DiffusionParams:
    """Fit the noise predictor on latents ``z0`` with attribute labels ``a``."""
    z0 = np.asarray(z0, dtype=np.float64)
    a = np.asarray(a, dtype=np.int64)
    dp = init_diffusion(z0.shape[1], cfg, rng)
    params = dp.net.params() + [dp.emb.table]
    state = OptimState(lr=cfg.lr, weight_decay=0.0, clip_norm=None).init(params)
    n = len(z0)
    running = []
    for step in range(cfg.steps):
        idx = rng.integers(0, n, size=min(cfg.batch, n))
        t = rng.integers(1, dp.schedule.T + 1, size=len(idx))
        cond = np.where(rng.uniform(size=len(idx)) < cfg.dropout, NULL, a[idx])
        noise = rng.standard_normal((len(idx), z0.shape[1]))
        loss, grads = denoise_loss_and_grads(dp, z0[idx], t, cond, noise)
        if not np.isfinite(loss):
            raise NumericError(f"denoiser loss diverged at step {step}")
        opt_step(state, params, grads)
        running.append(loss)
        if len(running) == 100 or step == cfg.steps - 1:
            dp.history.append((step, float(np.mean(running))))
            running = []
    return dp


def ddim_timesteps(T: int, steps: int, t_start: int | None = None) -> np.ndarray:
    """Decreasing sub-sequence of ``steps`` distinct timesteps from ``t_start`` (default T) to 1."""
    t_start = T if t_start is None else t_start
    if steps < 1 or steps > T:
        raise ValueError(f"sampling steps must lie in [1, {T}], got {steps}")
    if t_start < 1 or t_start > T:
        raise ValueError("start step out of range")
    steps = min(steps, t_start)
    ts = np.unique(np.round(np.linspace(1, t_start, steps)).astype(np.int64))[::-1]
    return ts


def sample_reverse(
    dp: DiffusionParams | None,
    z_T: np.ndarray,
    a,
    steps: int = 50,
    eta: float = 1.0,
    noise: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    schedule: Schedule | None = None,
    eps_fn: EpsFn | None = None,
    t_start: int | None = None,
) -> np.ndarray:
    """Accelerated reverse process from ``z_T`` down to ``z_0``.

    ``eta=0`` is the deterministic DDIM update; ``eta=1`` injects the
    posterior variance at each jump. Per-jump noise may be passed in as
    ``noise`` with shape ``(len(timesteps), n, d)`` so several conditions can
    share it. ``a`` is an attribute index per row or ``NULL``.
    """
    schedule = schedule or dp.schedule
    eps_fn = eps_fn or dp.eps
    z = np.array(np.atleast_2d(z_T), dtype=np.float64)
    ts = ddim_timesteps(schedule.T, steps, t_start)
    if eta > 0 and noise is None:
        if rng is None:
            raise ValueError("stochastic sampling needs noise or an rng")
        noise = rng.standard_normal((len(ts),) + z.shape)
    a = np.broadcast_to(np.asarray(a, dtype=np.int64), (len(z),))
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        ab_t = float(schedule.ab(t))
        ab_prev = float(schedule.ab(t_prev))
        e = eps_fn(z, int(t), a)
        x0 = (z - np.sqrt(1.0 - ab_t) * e) / np.sqrt(ab_t)
        sigma = 0.0
        if eta > 0 and t_prev > 0 and ab_t < 1.0:
            sigma = eta * np.sqrt((1.0 - ab_prev) / (1.0 - ab_t) * (1.0 - ab_t / ab_prev))
        dir_coef = np.sqrt(max(1.0 - ab_prev - sigma**2, 0.0))
        z = np.sqrt(ab_prev) * x0 + dir_coef * e
        if sigma > 0:
            z = z + sigma * noise[i]
    if not np.all(np.isfinite(z)):
        raise NumericError("reverse diffusion produced non-finite latents")
    return z
