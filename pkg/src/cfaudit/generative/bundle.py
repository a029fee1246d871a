"""Everything the invariance test needs to synthesize counterfactual samples."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import store
from ..numerics import DenseNet, RngStream
from .diffusion import DiffusionConfig, DiffusionParams, Schedule, forward_diffuse, sample_reverse, train_denoiser
from .disentangle import DisentangleConfig, DisentangleParams, train_disentangler
from .vae import Embedding, VaeConfig, VaeParams, train_vae

BUNDLE_VERSION = 1


@dataclass
class GenConfig:
    vae: VaeConfig = field(default_factory=VaeConfig)
    disentangle: DisentangleConfig = field(default_factory=DisentangleConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        d = dict(d)
        out = cls(seed=int(d.pop("seed", 0)))
        for name, kind in (("vae", VaeConfig), ("disentangle", DisentangleConfig), ("diffusion", DiffusionConfig)):
            sub = d.pop(name, {}) or {}
            unknown = set(sub) - set(kind.__dataclass_fields__)
            if unknown:
                raise ValueError(f"unknown {name} keys: {sorted(unknown)}")
            setattr(out, name, kind(**sub))
        if d:
            raise ValueError(f"unknown generative config keys: {sorted(d)}")
        return out


@dataclass
class GenerativeBundle:
    vae: VaeParams
    disent: DisentangleParams
    diffusion: DiffusionParams
    prior: np.ndarray  # estimated P(A = a) on the training split
    meta: dict = field(default_factory=dict)

    @property
    def latent_dim(self) -> int:
        return self.vae.latent_dim

    @property
    def schedule(self) -> Schedule:
        return self.diffusion.schedule

    def encode(self, x, a, rng: np.random.Generator | None = None) -> np.ndarray:
        """Latent draw ``z0 ~ E(x)`` (posterior mean when ``rng`` is None)."""
        mu, lv = self.vae.encode(x, a)
        if rng is None:
            return mu
        return mu + np.exp(0.5 * lv) * rng.standard_normal(mu.shape)

    def phi(self, z0) -> np.ndarray:
        return self.disent.phi(z0)

    def noise_to_T(self, z0, noise) -> np.ndarray:
        return forward_diffuse(self.schedule, z0, self.schedule.T, noise)

    def denoise(self, z_T, a, steps: int = 50, eta: float = 1.0, noise=None, rng=None) -> np.ndarray:
        return sample_reverse(self.diffusion, z_T, a, steps=steps, eta=eta, noise=noise, rng=rng)

    def decode(self, z0, a) -> np.ndarray:
        return self.vae.decode(z0, a)

    def round_trip(self, x, a_obs, a_gen, rng: np.random.Generator, steps: int = 50, eta: float = 1.0) -> np.ndarray:
        """encode -> phi -> noise to T -> denoise under ``a_gen`` -> decode."""
        z0 = self.phi(self.encode(x, a_obs, rng))
        zT = self.noise_to_T(z0, rng.standard_normal(z0.shape))
        return self.decode(self.denoise(zT, a_gen, steps, eta, rng=rng), a_gen)

    # persistence

    def save(self, folder) -> Path:
        folder = Path(folder)
        folder.mkdir(parents=True, exist_ok=True)
        parts = {
            "vae.bin": {
                **self.vae.encoder.to_arrays("enc_"),
                **self.vae.decoder.to_arrays("dec_"),
                "dec_emb": self.vae.dec_emb.table,
                "x_mean": self.vae.x_mean,
                "x_scale": self.vae.x_scale,
                "obs_std": np.array([self.vae.obs_std]),
                **({"enc_emb": self.vae.enc_emb.table} if self.vae.enc_emb is not None else {}),
            },
            "disentangle.bin": {
                **self.disent.m_net.to_arrays("m_"),
                **self.disent.critic.to_arrays("critic_"),
                "lam": np.array([self.disent.lam]),
                "prior": self.disent.prior,
            },
            "diffusion.bin": {
                **self.diffusion.net.to_arrays("eps_"),
                "emb": self.diffusion.emb.table,
                "betas": self.schedule.betas,
                "time_dim": np.array([self.diffusion.time_dim]),
                "dropout": np.array([self.diffusion.dropout]),
            },
            "prior.bin": {"prior": self.prior},
        }
        digests = {name: store.save(folder / name, arrs, kind=store.KIND_NETWORK) for name, arrs in parts.items()}
        manifest = {
            "version": BUNDLE_VERSION,
            "files": digests,
            "latent_dim": self.latent_dim,
            "T": self.schedule.T,
            "betas": [float(self.schedule.betas[0]), float(self.schedule.betas[-1])],
            "lambda": self.disent.lam,
            "dropout": self.diffusion.dropout,
            **self.meta,
        }
        (folder / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return folder

    @classmethod
    def load(cls, folder) -> "GenerativeBundle":
        folder = Path(folder)
        manifest = json.loads((folder / "manifest.json").read_text())
        if manifest.get("version") != BUNDLE_VERSION:
            raise store.StoreError(f"unsupported bundle version {manifest.get('version')}")
        v, _ = store.load(folder / "vae.bin", store.KIND_NETWORK)
        m, _ = store.load(folder / "disentangle.bin", store.KIND_NETWORK)
        f, _ = store.load(folder / "diffusion.bin", store.KIND_NETWORK)
        p, _ = store.load(folder / "prior.bin", store.KIND_NETWORK)
        vae = VaeParams(
            DenseNet.from_arrays(v, "enc_"), DenseNet.from_arrays(v, "dec_"), Embedding(v["dec_emb"]),
            Embedding(v["enc_emb"]) if "enc_emb" in v else None,
            v["x_mean"], v["x_scale"], float(v["obs_std"][0]),
        )
        disent = DisentangleParams(
            DenseNet.from_arrays(m, "m_"), DenseNet.from_arrays(m, "critic_"), float(m["lam"][0]), m["prior"]
        )
        diffusion = DiffusionParams(
            Schedule(f["betas"]), DenseNet.from_arrays(f, "eps_"), Embedding(f["emb"]),
            int(f["time_dim"][0]), float(f["dropout"][0]),
        )
        meta = {k: manifest[k] for k in ("train_fingerprint", "seed") if k in manifest}
        return cls(vae, disent, diffusion, p["prior"], meta)


def train_bundle(x, a, cfg: GenConfig, fingerprint: str = "") -> GenerativeBundle:
    """VAE, then disentangler on encoded latents, then denoiser on perturbed latents."""
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(a, dtype=np.int64)
    root = RngStream(cfg.seed, "generative")
    vae = train_vae(x, a, cfg.vae, root.fork("vae").generator())
    z_rng = root.fork("latents").generator()
    mu, lv = vae.encode(x, a)
    z0 = mu + np.exp(0.5 * lv) * z_rng.standard_normal(mu.shape)
    disent = train_disentangler(mu, a, cfg.disentangle, root.fork("disentangle").generator(), np.exp(0.5 * lv))
    diffusion = train_denoiser(disent.phi(z0), a, cfg.diffusion, root.fork("diffusion").generator())
    prior = np.bincount(a, minlength=2) / len(a)
    return GenerativeBundle(vae, disent, diffusion, prior, {"train_fingerprint": fingerprint, "seed": cfg.seed})
