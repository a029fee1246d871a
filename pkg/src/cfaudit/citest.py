"""Counterfactual invariance test through latent representations (CIT-LR).

For each test row the observed features are encoded, perturbed by the
disentangling map and noised to the last diffusion step. From that latent
the reverse process is run under every attribute value and decoded; the
classifier's mean output on those samples estimates ``g(a, z)``, and the
prior-weighted mixture over attributes estimates ``h(z)``. The test then
compares ``E[y_hat * g(A, Z)]`` with ``E[y_hat * h(Z)]`` by a paired t-test on
the per-row products.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .generative import NULL, GenerativeBundle, ddim_timesteps
from .numerics import RngStream, student_t_sf
from .scm import LabeledDataset

Predictor = Callable[[np.ndarray], np.ndarray]

MIN_ROWS = 8
H_MODES = ("marginalize", "null-token")


class InsufficientDataError(ValueError):
    pass


@dataclass
class CitConfig:
    n_mc: int = 32
    steps: int = 50
    eta: float = 1.0
    h_mode: str = "marginalize"
    alpha: float = 0.05
    seed: int = 0
    chunk: int = 128

    def __post_init__(self):
        if self.n_mc < 1:
            raise ValueError("n_mc must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.h_mode not in H_MODES:
            raise ValueError(f"h_mode must be one of {H_MODES}")

    @property
    def hash(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class TestReport:
    method: str
    t: float
    p: float
    dof: int
    n: int
    reject: bool
    alpha: float
    degenerate: bool = False
    d_mean: float = 0.0
    d_var: float = 0.0
    mu_az: float = float("nan")
    sigma2_az: float = float("nan")
    mu_z: float = float("nan")
    sigma2_z: float = float("nan")
    dataset: str = ""
    classifier: str = ""
    bundle: str = ""
    config_hash: str = ""
    seed: int = 0
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        for key, val in d.items():
            if isinstance(val, float) and not math.isfinite(val):
                d[key] = None
        return json.dumps(d, sort_keys=True)


def paired_t(d, scale: float | None = None) -> tuple[float, float, int, bool]:
    """One-sample t-test of ``mean(d) = 0``: ``(t, two-sided p, dof, degenerate)``.

    Zero sample variance is reported as ``p = 1`` with the degenerate flag.
    Differences whose spread is pure round-off relative to ``scale`` (the
    magnitude of the quantities they were formed from, default ``max|d|``)
    count as zero variance.
    """
    d = np.asarray(d, dtype=np.float64)
    n = len(d)
    if n < 2:
        raise InsufficientDataError("a paired t-test needs at least two differences")
    var = d.var(ddof=1)
    scale = float(np.max(np.abs(d))) if scale is None else max(scale, float(np.max(np.abs(d))))
    if math.sqrt(var) <= 64 * np.finfo(np.float64).eps * scale:
        return 0.0, 1.0, n - 1, True
    t = d.mean() / math.sqrt(var / n)
    return float(t), student_t_sf(float(t), n - 1), n - 1, False


@dataclass
class CounterfactualDraws:
    """Decoded samples per test row: ``by_attr[a]`` has shape ``(rows, n_mc, k)``."""

    by_attr: dict
    null: np.ndarray | None
    prior: np.ndarray
    x: np.ndarray
    a: np.ndarray


def _latents_at_T(bundle: GenerativeBundle, x, a, rng: np.random.Generator) -> np.ndarray:
    z0 = bundle.encode(x, a, rng)
    return bundle.noise_to_T(bundle.phi(z0), rng.standard_normal(z0.shape))


def _reverse_decode(bundle, z_T, attr, n_mc, cfg: CitConfig, noise) -> np.ndarray:
    rows, d = z_T.shape
    z_rep = np.repeat(z_T, n_mc, axis=0)
    z0 = bundle.denoise(z_rep, attr, cfg.steps, cfg.eta, noise=noise)
    return bundle.decode(z0, attr).reshape(rows, n_mc, -1)


def _noise(bundle, rows, n_mc, cfg: CitConfig, rng) -> np.ndarray | None:
    if cfg.eta <= 0:
        return None
    n_jumps = len(ddim_timesteps(bundle.schedule.T, cfg.steps))
    return rng.standard_normal((n_jumps, rows * n_mc, bundle.latent_dim))


def draw_counterfactuals(bundle: GenerativeBundle, data: LabeledDataset, cfg: CitConfig) -> CounterfactualDraws:
    """Generate every row's samples under every attribute value with shared noise."""
    n_attr = len(bundle.prior)
    by_attr = {a: [] for a in range(n_attr)}
    null_parts = []
    root = RngStream(cfg.seed, "citlr")
    for c, start in enumerate(range(0, len(data), cfg.chunk)):
        sl = slice(start, start + cfg.chunk)
        rng = root.fork("chunk", c).generator()
        z_T = _latents_at_T(bundle, data.x[sl], data.a[sl], rng)
        noise = _noise(bundle, len(z_T), cfg.n_mc, cfg, rng)
        for a in range(n_attr):
            by_attr[a].append(_reverse_decode(bundle, z_T, a, cfg.n_mc, cfg, noise))
        if cfg.h_mode == "null-token":
            null_parts.append(_null_samples(bundle, z_T, cfg, noise))
    return CounterfactualDraws(
        {a: np.concatenate(v) for a, v in by_attr.items()},
        np.concatenate(null_parts) if null_parts else None,
        np.asarray(bundle.prior, dtype=np.float64),
        data.x,
        data.a,
    )


def _null_samples(bundle, z_T, cfg: CitConfig, noise) -> np.ndarray:
    """Unconditional reverse samples, decoded under an attribute drawn from the prior."""
    rows = len(z_T)
    z0 = bundle.denoise(np.repeat(z_T, cfg.n_mc, axis=0), NULL, cfg.steps, cfg.eta, noise=noise)
    # the decoder is conditional; attribute draws reuse a fixed stream for every classifier
    rng = RngStream(cfg.seed, "citlr/null-decode").generator()
    attr = (rng.uniform(size=len(z0)) < bundle.prior[1]).astype(np.int64)
    out = np.empty((len(z0), bundle.vae.x_mean.shape[0]))
    for a in np.unique(attr):
        out[attr == a] = bundle.decode(z0[attr == a], int(a))
    return out.reshape(rows, cfg.n_mc, -1)


def _mean_f(f: Predictor, samples: np.ndarray) -> np.ndarray:
    rows, n_mc, k = samples.shape
    return np.asarray(f(samples.reshape(-1, k)), dtype=np.float64).reshape(rows, n_mc).mean(axis=1)


def estimate_g(
    bundle: GenerativeBundle, f: Predictor, a: int, z_T, n_mc: int = 32, cfg: CitConfig | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """``g(a, z)``: mean of ``f`` over ``n_mc`` decoded reverse samples from each ``z_T`` row."""
    cfg = cfg or CitConfig(n_mc=n_mc)
    z_T = np.atleast_2d(z_T)
    rng = rng or RngStream(cfg.seed, "estimate").generator()
    noise = _noise(bundle, len(z_T), n_mc, cfg, rng)
    return _mean_f(f, _reverse_decode(bundle, z_T, int(a), n_mc, cfg, noise))


def estimate_h(
    bundle: GenerativeBundle, f: Predictor, z_T, n_mc: int = 32, mode: str = "marginalize",
    cfg: CitConfig | None = None, rng: np.random.Generator | None = None,
) -> np.ndarray:
    """``h(z)`` either as the prior mixture of ``g`` or from the unconditional pathway."""
    cfg = cfg or CitConfig(n_mc=n_mc, h_mode=mode)
    z_T = np.atleast_2d(z_T)
    rng = rng or RngStream(cfg.seed, "estimate").generator()
    noise = _noise(bundle, len(z_T), n_mc, cfg, rng)
    if mode == "marginalize":
        gs = [_mean_f(f, _reverse_decode(bundle, z_T, a, n_mc, cfg, noise)) for a in range(len(bundle.prior))]
        return marginalize(np.stack(gs, axis=1), bundle.prior)
    if mode == "null-token":
        return _mean_f(f, _null_samples(bundle, z_T, cfg, noise))
    raise ValueError(f"unknown h mode {mode!r}")


def marginalize(g: np.ndarray, prior) -> np.ndarray:
    """``h = sum_a P(a) g(a, .)`` for ``g`` shaped ``(rows, n_attr)``."""
    return np.asarray(g) @ np.asarray(prior, dtype=np.float64)


def test_from_products(
    yhat_g: np.ndarray, yhat_h: np.ndarray, alpha: float = 0.05, method: str = "CIT-LR"
) -> TestReport:
    """Paired test of ``E[y_hat g] = E[y_hat h]`` from per-row products."""
    yhat_g = np.asarray(yhat_g, dtype=np.float64)
    yhat_h = np.asarray(yhat_h, dtype=np.float64)
    n = len(yhat_g)
    if n < MIN_ROWS:
        raise InsufficientDataError(f"refusing to test on {n} rows (< {MIN_ROWS}); power too low")
    d = yhat_h - yhat_g
    scale = float(max(np.max(np.abs(yhat_g)), np.max(np.abs(yhat_h))))
    t, p, dof, degenerate = paired_t(d, scale)
    return TestReport(
        method=method, t=t, p=p, dof=dof, n=n, reject=bool(p < alpha), alpha=alpha,
        degenerate=degenerate, d_mean=float(d.mean()), d_var=float(d.var(ddof=1)),
        mu_az=float(yhat_g.mean()), sigma2_az=float(yhat_g.var()),
        mu_z=float(yhat_h.mean()), sigma2_z=float(yhat_h.var()),
    )


def cit_lr_from_draws(f: Predictor, draws: CounterfactualDraws, cfg: CitConfig) -> TestReport:
    start = time.perf_counter()
    if len(draws.a) < MIN_ROWS:
        raise InsufficientDataError(f"refusing to test on {len(draws.a)} rows (< {MIN_ROWS}); power too low")
    g_all = np.stack([_mean_f(f, draws.by_attr[a]) for a in sorted(draws.by_attr)], axis=1)
    rows = np.arange(len(draws.a))
    g = g_all[rows, draws.a]
    if cfg.h_mode == "marginalize":
        h = marginalize(g_all, draws.prior)
    else:
        h = _mean_f(f, draws.null)
    yhat = np.asarray(f(draws.x), dtype=np.float64)
    rep = test_from_products(yhat * g, yhat * h, cfg.alpha)
    rep.config_hash = cfg.hash
    rep.seed = cfg.seed
    rep.wall_time = time.perf_counter() - start
    return rep


def cit_lr(f: Predictor, bundle: GenerativeBundle, test: LabeledDataset, cfg: CitConfig | None = None) -> TestReport:
    """Run the full test of ``f`` on held-out rows ``test`` with a trained ``bundle``."""
    cfg = cfg or CitConfig()
    if len(test) < MIN_ROWS:
        raise InsufficientDataError(f"refusing to test on {len(test)} rows (< {MIN_ROWS}); power too low")
    start = time.perf_counter()
    train_fp = bundle.meta.get("train_fingerprint")
    if train_fp and train_fp == test.fingerprint:
        raise ValueError("the bundle was trained on the test rows; use a disjoint split")
    rep = cit_lr_from_draws(f, draw_counterfactuals(bundle, test, cfg), cfg)
    rep.dataset = test.fingerprint
    rep.bundle = bundle.meta.get("train_fingerprint", "")
    rep.wall_time = time.perf_counter() - start
    return rep
