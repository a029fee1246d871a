from .bundle import GenConfig, GenerativeBundle, train_bundle
from .diffusion import (
    DiffusionConfig,
    DiffusionParams,
    Schedule,
    ddim_timesteps,
    forward_diffuse,
    sample_reverse,
    train_denoiser,
)
from .disentangle import (
    CriticConfig,
    DisentangleConfig,
    DisentangleParams,
    dv_bound,
    mine_estimate,
    perturb,
    train_critic,
    train_disentangler,
)
from .vae import NULL, VaeConfig, VaeParams, kl_to_standard_normal, train_vae

__all__ = [
    "NULL",
    "CriticConfig",
    "DiffusionConfig",
    "DiffusionParams",
    "DisentangleConfig",
    "DisentangleParams",
    "GenConfig",
    "GenerativeBundle",
    "Schedule",
    "VaeConfig",
    "VaeParams",
    "ddim_timesteps",
    "dv_bound",
    "forward_diffuse",
    "kl_to_standard_normal",
    "mine_estimate",
    "perturb",
    "sample_reverse",
    "train_bundle",
    "train_critic",
    "train_denoiser",
    "train_disentangler",
    "train_vae",
]
