"""Latent perturbation trained against a Donsker-Varadhan MI critic.

``phi(z) = z + lam * m(z) / ||m(z)||`` moves every latent by exactly ``lam``
along a learned direction. The critic ``T(z, a)`` is trained to maximize

    mean_joint T  -  log mean_marginal exp(T)

and the perturbation net is trained to minimize the same bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numerics import DenseNet, OptimState, opt_step


def logmeanexp(v: np.ndarray, weights: np.ndarray | None = None) -> float:
    v = np.asarray(v, dtype=np.float64).ravel()
    if weights is None:
        weights = np.full(v.shape, 1.0 / v.size)
    w = np.asarray(weights, dtype=np.float64).ravel()
    w = w / w.sum()
    top = v.max()
    return float(top + np.log(np.sum(w * np.exp(v - top))))


def dv_bound(t_joint: np.ndarray, t_marg: np.ndarray, marg_weights: np.ndarray | None = None) -> float:
    """Donsker-Varadhan lower bound from critic values on joint and marginal pairs."""
    return float(np.mean(t_joint)) - logmeanexp(t_marg, marg_weights)


def mine_estimate(critic, joint, marginal) -> float:
    """DV bound for a critic callable on stacked ``(u, v)`` rows.

    ``joint`` and ``marginal`` are ``(u, v)`` tuples of row-aligned arrays; the
    marginal pairs are typically ``(u, shuffled v)``. Overflow-safe.
    """
    u_j, v_j = joint
    u_m, v_m = marginal
    if len(u_j) == 0 or len(u_m) == 0:
        raise ValueError("need non-empty joint and marginal samples")
    t_j = critic(np.concatenate([_2d(u_j), _2d(v_j)], axis=1)).ravel()
    t_m = critic(np.concatenate([_2d(u_m), _2d(v_m)], axis=1)).ravel()
    return dv_bound(t_j, t_m)


def _2d(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v[:, None] if v.ndim == 1 else v


def dv_critic_grads(critic: DenseNet, joint_in: np.ndarray, marg_in: np.ndarray, marg_w: np.ndarray | None = None):
    """Bound value and gradients of ``-bound`` w.r.t. critic params and both inputs."""
    t_j, c_j = critic.forward_cache(joint_in)
    t_m, c_m = critic.forward_cache(marg_in)
    t_j, t_m = t_j.ravel(), t_m.ravel()
    w = np.full(len(t_m), 1.0 / len(t_m)) if marg_w is None else marg_w / marg_w.sum()
    top = t_m.max()
    e = w * np.exp(t_m - top)
    soft = e / e.sum()
    bound = float(t_j.mean() - (top + np.log(e.sum())))
    g_j, gin_j = critic.backward(c_j, np.full((len(t_j), 1), -1.0 / len(t_j)))
    g_m, gin_m = critic.backward(c_m, soft[:, None])
    grads = [a + b for a, b in zip(g_j, g_m)]
    return bound, grads, gin_j, gin_m


@dataclass
class CriticConfig:
    hidden: int = 64
    steps: int = 3000
    batch: int = 512
    lr: float = 1e-3
    weight_decay: float = 0.0
    clip_norm: float | None = None


def train_critic(u: np.ndarray, v: np.ndarray, cfg: CriticConfig, rng: np.random.Generator) -> DenseNet:
    """Fit a DV critic on paired samples; marginals by in-batch shuffling of ``v``."""
    u, v = _2d(u), _2d(v)
    critic = DenseNet.build([u.shape[1] + v.shape[1], cfg.hidden, cfg.hidden, 1], rng, hidden="tanh")
    params = critic.params()
    state = OptimState(lr=cfg.lr, weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm).init(params)
    n = len(u)
    for _ in range(cfg.steps):
        idx = rng.integers(0, n, size=min(cfg.batch, n))
        shuf = rng.permutation(idx)
        joint = np.concatenate([u[idx], v[idx]], axis=1)
        marg = np.concatenate([u[idx], v[shuf]], axis=1)
        _, grads, _, _ = dv_critic_grads(critic, joint, marg)
        opt_step(state, params, grads)
    return critic


@dataclass
class DisentangleConfig:
    lam: float = 1e-3
    hidden: int = 64
    outer_steps: int = 1000
    critic_iters: int = 5
    batch: int = 64
    lr: float = 1e-4
    weight_decay: float = 1e-5
    clip_norm: float = 1.0


@dataclass
class DisentangleParams:
    m_net: DenseNet
    critic: DenseNet
    lam: float
    prior: np.ndarray  # attribute marginal used for the inner E_A
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("perturbation scale must be non-negative")

    @property
    def n_attr(self) -> int:
        return len(self.prior)

    def phi(self, z0) -> np.ndarray:
        return perturb(self.m_net, self.lam, z0)

    def critic_input(self, z, a) -> np.ndarray:
        onehot = np.eye(self.n_attr)[np.asarray(a, dtype=np.int64)]
        return np.concatenate([_2d(z), onehot], axis=1)

    def mi_bound(self, z, a) -> float:
        """DV bound between latents ``z`` and attributes ``a`` under the current critic."""
        joint, marg, w = self._pairs(_2d(z), np.asarray(a, dtype=np.int64))
        return dv_bound(self.critic(joint).ravel(), self.critic(marg).ravel(), w)

    def _pairs(self, z, a):
        n = len(z)
        joint = self.critic_input(z, a)
        # E_Z E_A exp(T): every latent paired with every attribute, weighted by the prior.
        zz = np.repeat(z, self.n_attr, axis=0)
        aa = np.tile(np.arange(self.n_attr), n)
        w = np.tile(self.prior, n)
        return joint, self.critic_input(zz, aa), w


def perturb(m_net: DenseNet, lam: float, z0) -> np.ndarray:
    z0 = _2d(z0)
    if lam == 0:
        return z0.copy()
    m = m_net(z0)
    norm = np.linalg.norm(m, axis=1, keepdims=True)
    safe = norm > 0
    step = np.where(safe, m / np.where(safe, norm, 1.0), 0.0)
    return z0 + lam * step


def _perturb_backward(m_net: DenseNet, lam: float, z0: np.ndarray, g_out: np.ndarray) -> list[np.ndarray]:
    """Gradient of a loss w.r.t. ``m_net`` params given dL/dphi(z0)."""
    m, cache = m_net.forward_cache(z0)
    norm = np.linalg.norm(m, axis=1, keepdims=True)
    safe = (norm > 0).ravel()
    nrm = np.where(norm > 0, norm, 1.0)
    u = m / nrm
    # d(m/|m|)/dm = (I - u u^T) / |m|
    g_m = lam * (g_out - u * np.sum(g_out * u, axis=1, keepdims=True)) / nrm
    g_m[~safe] = 0.0
    grads, _ = m_net.backward(cache, g_m)
    return grads


def perturbation_grads(dp: DisentangleParams, z0: np.ndarray, a: np.ndarray):
    """DV bound at ``phi(z0)`` and its gradient w.r.t. the perturbation net's params."""
    n, d = z0.shape
    joint, marg, w = dp._pairs(dp.phi(z0), a)
    bound, _, gin_j, gin_m = dv_critic_grads(dp.critic, joint, marg, w)
    # d(bound)/d(phi) is minus the returned d(-bound)/d(input), summed over each latent's pairs
    g_phi = -gin_j[:, :d] - gin_m[:, :d].reshape(n, dp.n_attr, d).sum(axis=1)
    return bound, _perturb_backward(dp.m_net, dp.lam, z0, g_phi)


def train_disentangler(
    z0: np.ndarray, a: np.ndarray, cfg: DisentangleConfig, rng: np.random.Generator, z_std: np.ndarray | None = None
) -> DisentangleParams:
    """Alternate ``critic_iters`` critic ascent steps with one perturbation descent step.

    With ``z_std`` given, ``z0`` is the encoder mean and every minibatch draws
    fresh latents ``z0 + z_std * noise``; a critic fit to one fixed draw per
    row overfits it and its gradients stop generalizing to held-out latents.
    """
    z0 = _2d(z0)
    a = np.asarray(a, dtype=np.int64)
    n, d = z0.shape
    n_attr = int(a.max()) + 1 if len(a) else 2
    n_attr = max(n_attr, 2)
    prior = np.bincount(a, minlength=n_attr) / len(a)
    m_net = DenseNet.build([d, cfg.hidden, d], rng)
    critic = DenseNet.build([d + n_attr, cfg.hidden, cfg.hidden, 1], rng, hidden="relu")
    dp = DisentangleParams(m_net, critic, cfg.lam, prior)
    c_params, m_params = critic.params(), m_net.params()
    c_state = OptimState(lr=cfg.lr, weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm).init(c_params)
    m_state = OptimState(lr=cfg.lr, weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm).init(m_params)
    bsz = min(cfg.batch, n)

    def batch():
        idx = rng.integers(0, n, size=bsz)
        if z_std is None:
            return z0[idx], a[idx]
        return z0[idx] + z_std[idx] * rng.standard_normal((bsz, d)), a[idx]

    for step in range(cfg.outer_steps):
        for _ in range(cfg.critic_iters):
            zb, ab = batch()
            joint, marg, w = dp._pairs(dp.phi(zb), ab)
            bound, grads, _, _ = dv_critic_grads(critic, joint, marg, w)
            opt_step(c_state, c_params, grads)
        zb, ab = batch()
        bound, grads = perturbation_grads(dp, zb, ab)
        opt_step(m_state, m_params, grads)
        if step % 50 == 0 or step == cfg.outer_steps - 1:
            dp.history.append((step, bound))
    return dp
