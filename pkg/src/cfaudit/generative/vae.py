"""Vector-scale VAE with an attribute-conditioned decoder.

Features are standardized before encoding; the decoder output is mapped
back to raw units. The likelihood is Gaussian with a fixed observation
standard deviation (in standardized units) and the prior is N(0, I).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numerics import DenseNet, NumericError, OptimState, opt_step

NULL = 2  # embedding row reserved for "no attribute"


class Embedding:
    """Learned lookup table; row ``NULL`` is the unconditional token."""

    def __init__(self, table: np.ndarray):
        self.table = np.asarray(table, dtype=np.float64)

    @classmethod
    def build(cls, n_rows: int, dim: int, rng: np.random.Generator) -> "Embedding":
        return cls(rng.normal(0.0, 1.0, size=(n_rows, dim)))

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def __call__(self, idx) -> np.ndarray:
        return self.table[np.asarray(idx, dtype=np.int64)]

    def grad(self, idx, g: np.ndarray) -> np.ndarray:
        out = np.zeros_like(self.table)
        np.add.at(out, np.asarray(idx, dtype=np.int64), g)
        return out


@dataclass
class VaeConfig:
    latent_dim: int = 8
    hidden: int = 64
    steps: int = 3000
    batch: int = 128
    lr: float = 1e-3
    obs_std: float = 0.1
    emb_dim: int = 4
    conditional_encoder: bool = True


@dataclass
class VaeParams:
    encoder: DenseNet
    decoder: DenseNet
    dec_emb: Embedding
    enc_emb: Embedding | None
    x_mean: np.ndarray
    x_scale: np.ndarray
    obs_std: float
    history: list = field(default_factory=list)

    @property
    def latent_dim(self) -> int:
        return self.encoder.out_dim // 2

    def _enc_input(self, xs, a):
        if self.enc_emb is None:
            return xs
        return np.concatenate([xs, self.enc_emb(a)], axis=1)

    def encode(self, x, a) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and log-variance for raw features ``x``."""
        xs = (np.atleast_2d(x) - self.x_mean) / self.x_scale
        out = self.encoder(self._enc_input(xs, a))
        d = self.latent_dim
        return out[:, :d], out[:, d:]

    def decode(self, z, a) -> np.ndarray:
        """Decoder mean in raw feature units."""
        z = np.atleast_2d(z)
        a = np.broadcast_to(np.asarray(a, dtype=np.int64), (len(z),))
        xs = self.decoder(np.concatenate([z, self.dec_emb(a)], axis=1))
        out = xs * self.x_scale + self.x_mean
        if not np.all(np.isfinite(out)):
            raise NumericError("decoder produced non-finite output")
        return out

    def elbo(self, x, a, rng: np.random.Generator) -> float:
        """Mean per-row ELBO (nats) with one reparameterized draw."""
        xs = (np.atleast_2d(x) - self.x_mean) / self.x_scale
        mu, lv = self.encode(x, a)
        z = mu + np.exp(0.5 * lv) * rng.standard_normal(mu.shape)
        recon = self.decoder(np.concatenate([z, self.dec_emb(a)], axis=1))
        k = xs.shape[1]
        s2 = self.obs_std**2
        loglik = -0.5 * np.sum((xs - recon) ** 2, axis=1) / s2 - 0.5 * k * np.log(2 * np.pi * s2)
        return float(np.mean(loglik - kl_to_standard_normal(mu, lv)))


def kl_to_standard_normal(mu: np.ndarray, logvar: np.ndarray) -> np.ndarray:
    """KL(N(mu, diag exp(logvar)) || N(0, I)) per row."""
    return 0.5 * np.sum(mu * mu + np.exp(logvar) - 1.0 - logvar, axis=1)


def init_vae(k: int, cfg: VaeConfig, rng: np.random.Generator, x_mean=None, x_scale=None) -> VaeParams:
    d, h = cfg.latent_dim, cfg.hidden
    enc_in = k + (cfg.emb_dim if cfg.conditional_encoder else 0)
    encoder = DenseNet.build([enc_in, h, h, 2 * d], rng, out_scale=0.1)
    decoder = DenseNet.build([d + cfg.emb_dim, h, h, k], rng)
    enc_emb = Embedding.build(3, cfg.emb_dim, rng) if cfg.conditional_encoder else None
    return VaeParams(
        encoder, decoder, Embedding.build(3, cfg.emb_dim, rng), enc_emb,
        np.zeros(k) if x_mean is None else x_mean,
        np.ones(k) if x_scale is None else x_scale,
        cfg.obs_std,
    )


def vae_loss_and_grads(vae: VaeParams, xs: np.ndarray, a: np.ndarray, eps: np.ndarray):
    """Negative ELBO (mean over rows) for standardized ``xs`` and its gradients.

    Gradients are returned aligned to :func:`vae_params`.
    """
    n, k = xs.shape
    d = vae.latent_dim
    enc_out, enc_cache = vae.encoder.forward_cache(vae._enc_input(xs, a))
    mu, lv = enc_out[:, :d], enc_out[:, d:]
    std = np.exp(0.5 * lv)
    z = mu + std * eps
    dec_in = np.concatenate([z, vae.dec_emb(a)], axis=1)
    recon, dec_cache = vae.decoder.forward_cache(dec_in)
    s2 = vae.obs_std**2
    resid = recon - xs
    rec = 0.5 * np.sum(resid * resid, axis=1) / s2
    kl = kl_to_standard_normal(mu, lv)
    loss = float(np.mean(rec + kl + 0.5 * k * np.log(2 * np.pi * s2)))
    g_dec, g_dec_in = vae.decoder.backward(dec_cache, resid / s2 / n)
    g_z = g_dec_in[:, :d]
    g_dec_emb = vae.dec_emb.grad(a, g_dec_in[:, d:])
    g_mu = g_z + mu / n
    g_lv = g_z * eps * 0.5 * std + 0.5 * (np.exp(lv) - 1.0) / n
    g_enc, g_enc_in = vae.encoder.backward(enc_cache, np.concatenate([g_mu, g_lv], axis=1))
    grads = g_enc + g_dec + [g_dec_emb]
    if vae.enc_emb is not None:
        grads.append(vae.enc_emb.grad(a, g_enc_in[:, k:]))
    return loss, grads


def vae_params(vae: VaeParams) -> list[np.ndarray]:
    out = vae.encoder.params() + vae.decoder.params() + [vae.dec_emb.table]
    if vae.enc_emb is not None:
        out.append(vae.enc_emb.table)
    return out


def train_vae(x: np.ndarray, a: np.ndarray, cfg: VaeConfig, rng: np.random.Generator) -> VaeParams:
    """Maximize the ELBO by Adam on reparameterized minibatches."""
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(a, dtype=np.int64)
    if len(x) == 0:
        raise ValueError("cannot train a VAE on an empty dataset")
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    xs = (x - mean) / scale
    vae = init_vae(x.shape[1], cfg, rng, mean, scale)
    params = vae_params(vae)
    state = OptimState(lr=cfg.lr, weight_decay=0.0, clip_norm=None).init(params)
    n = len(xs)
    for step in range(cfg.steps):
        idx = rng.integers(0, n, size=min(cfg.batch, n))
        eps = rng.standard_normal((len(idx), cfg.latent_dim))
        loss, grads = vae_loss_and_grads(vae, xs[idx], a[idx], eps)
        if not np.isfinite(loss):
            raise NumericError(f"VAE loss diverged at step {step}")
        opt_step(state, params, grads)
        if step % 100 == 0 or step == cfg.steps - 1:
            vae.history.append((step, -loss))
    return vae
