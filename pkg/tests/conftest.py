import os

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_bundle():
    """A quickly trained generator on a small k=4 linear dataset (shared across tests)."""
    from cfaudit.generative import DiffusionConfig, DisentangleConfig, GenConfig, VaeConfig, train_bundle
    from cfaudit.scm import SCMSpec, sample_dataset

    spec = SCMSpec.generate("linear", seed=3, k=4)
    train = sample_dataset(spec, 1500, 3, "train")
    test = sample_dataset(spec, 120, 3, "test")
    cfg = GenConfig(
        vae=VaeConfig(latent_dim=4, hidden=32, steps=600),
        disentangle=DisentangleConfig(hidden=16, outer_steps=40),
        diffusion=DiffusionConfig(hidden=32, steps=600),
        seed=3,
    )
    bundle = train_bundle(train.x, train.a, cfg, train.fingerprint)
    return spec, train, test, bundle
