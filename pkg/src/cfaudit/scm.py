"""Synthetic structural causal models with a known binary protected attribute.

The data-generating process is a chain

    A ~ Bernoulli(prior)
    Z_i = M_i Z_{i+1} A + N_i Z_{i+1} (1 - A) + xi_i,   i = n-1, ..., 0
    X = M_X Z_0 + r + eps_X
    Y ~ Bernoulli(sigmoid(f_Y(Z_n)))

with ``Z_n ~ N(0, I_k)``. ``Y`` depends on the root block only, so the
attribute reaches ``X`` but never ``Y``. Interventions ``do(A=a)`` simply
propagate the same exogenous draws with the attribute held at ``a``.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .numerics import NumericError, RngStream, sigmoid

VARIANTS = ("linear", "quadratic", "exponential", "interactive", "log-exponent", "sin")

# (std of omega entries, mean of b); b always has unit variance.
_FY_PRIORS = {
    "linear": (1.0, 0.0),
    "quadratic": (2.0, 20.0),
    "exponential": (1.0, 10.0),
    "interactive": (1.0, 0.0),
    "log-exponent": (1.0, 5.0),
    "sin": (1.0, 2.0),
}

Predictor = Callable[[np.ndarray], np.ndarray]


class DomainError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SCMSpec:
    variant: str
    M: np.ndarray  # (n, k, k), used when A = 1
    N: np.ndarray  # (n, k, k), used when A = 0
    M_X: np.ndarray  # (k, k)
    r: np.ndarray  # (k,)
    omega: np.ndarray  # (k,) or (k, k) for the interactive variant
    b: float
    sigma: float = 0.01
    prior: float = 0.3
    seed: int | None = None
    tied: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown f_Y variant {self.variant!r}; expected one of {VARIANTS}")
        n, k, k2 = self.M.shape
        if k != k2 or self.N.shape != (n, k, k) or self.M_X.shape != (k, k) or self.r.shape != (k,):
            raise ValueError("SCM matrices must all be k x k with a length-k bias")
        if self.sigma < 0:
            raise ValueError("noise scale must be non-negative")
        if not 0.0 < self.prior < 1.0:
            raise ValueError("attribute prior must lie in (0, 1)")
        for arr in (self.M, self.N, self.M_X, self.r, self.omega):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.M.shape[0]

    @property
    def k(self) -> int:
        return self.M.shape[1]

    @classmethod
    def generate(
        cls,
        variant: str,
        seed: int,
        n: int = 3,
        k: int = 32,
        sigma: float = 0.01,
        prior: float = 0.3,
        tied: bool = False,
    ) -> "SCMSpec":
        """Draw every structural parameter from ``seed``.

        ``tied=True`` sets ``N_i = M_i`` so the attribute has no pathway to X.
        """
        if variant not in VARIANTS:
            raise ValueError(f"unknown f_Y variant {variant!r}")
        rng = RngStream(seed, f"scm/{variant}").generator()
        M = rng.uniform(-10.0, 10.0, size=(n, k, k))
        N = rng.uniform(-10.0, 10.0, size=(n, k, k))
        if tied:
            N = M.copy()
        M_X = rng.uniform(-10.0, 10.0, size=(k, k))
        r = rng.normal(0.0, 1.0, size=k)
        w_std, b_mean = _FY_PRIORS[variant]
        shape = (k, k) if variant == "interactive" else (k,)
        omega = rng.normal(0.0, w_std, size=shape)
        if variant == "interactive":
            np.fill_diagonal(omega, 0.0)
        b = float(rng.normal(b_mean, 1.0))
        return cls(variant, M, N, M_X, r, omega, b, sigma, prior, seed, tied)

    def to_dict(self) -> dict:
        if self.seed is None:
            raise ValueError("only seed-generated specs can be serialized")
        return {
            "variant": self.variant,
            "seed": int(self.seed),
            "n": self.n,
            "k": self.k,
            "sigma": self.sigma,
            "prior": self.prior,
            "tied": self.tied,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SCMSpec":
        allowed = {"variant", "seed", "n", "k", "sigma", "prior", "tied"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown SCM spec keys: {sorted(unknown)}")
        return cls.generate(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "SCMSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @property
    def fingerprint(self) -> str:
        h = hashlib.sha256(self.variant.encode())
        for arr in (self.M, self.N, self.M_X, self.r, self.omega):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        h.update(np.array([self.b, self.sigma, self.prior], dtype="<f8").tobytes())
        return h.hexdigest()[:16]


@dataclass
class ExogenousUnit:
    """Exogenous draws for one or more units (leading axis = unit when batched)."""

    z_n: np.ndarray  # (m, k)
    xi: np.ndarray  # (n, m, k)
    eps_x: np.ndarray  # (m, k)
    u_a: np.ndarray  # (m,)

    @classmethod
    def sample(cls, spec: SCMSpec, m: int, rng: np.random.Generator) -> "ExogenousUnit":
        z_n = rng.standard_normal((m, spec.k))
        xi = spec.sigma * rng.standard_normal((spec.n, m, spec.k))
        eps_x = spec.sigma * rng.standard_normal((m, spec.k))
        u_a = rng.uniform(size=m)
        return cls(z_n, xi, eps_x, u_a)


def f_y_eval(variant: str, omega: np.ndarray, b: float, z_n) -> np.ndarray:
    """Pre-sigmoid label score for the given ``f_Y`` variant (batched over rows of ``z_n``)."""
    z = np.asarray(z_n, dtype=np.float64)
    single = z.ndim == 1
    z2 = z[None, :] if single else z
    if variant == "linear":
        out = z2 @ omega + b
    elif variant == "quadratic":
        out = (z2 * z2) @ omega + b
    elif variant == "exponential":
        with np.errstate(over="ignore"):
            out = np.exp(z2) @ omega + b
    elif variant == "interactive":
        W = np.array(omega, dtype=np.float64)
        np.fill_diagonal(W, 0.0)
        out = np.einsum("mi,ij,mj->m", z2, W, z2) + b
    elif variant == "log-exponent":
        u = z2 @ omega
        if b > 0:
            out = np.logaddexp(u, np.log(b))
        else:
            with np.errstate(over="ignore"):
                inner = np.exp(u) + b
            if np.any(inner <= 0):
                raise DomainError("log-exponent: exp(omega . z) + b <= 0")
            out = np.log(inner)
    elif variant == "sin":
        out = np.sin(z2) @ omega + b
    else:
        raise ValueError(f"unknown f_Y variant {variant!r}")
    if not np.all(np.isfinite(out)):
        raise NumericError(f"non-finite f_Y value in variant {variant!r}")
    return out[0] if single else out


def propagate(spec: SCMSpec, unit: ExogenousUnit, a) -> tuple[np.ndarray, np.ndarray]:
    """Push exogenous draws through the chain with the attribute set to ``a``.

    ``a`` may be a scalar (an intervention for every unit) or a per-unit
    array. Returns ``(x, p_y)``; ``p_y`` never depends on ``a``.
    """
    z = np.atleast_2d(unit.z_n)
    m = z.shape[0]
    a_arr = np.broadcast_to(np.asarray(a, dtype=np.float64), (m,))[:, None]
    xi = unit.xi.reshape(spec.n, m, spec.k)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(spec.n - 1, -1, -1):
            via_m = z @ spec.M[i].T
            via_n = z @ spec.N[i].T
            z = a_arr * via_m + (1.0 - a_arr) * via_n + xi[i]
        x = z @ spec.M_X.T + spec.r + np.atleast_2d(unit.eps_x)
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite observation in variant {spec.variant!r}")
    p_y = sigmoid(f_y_eval(spec.variant, spec.omega, spec.b, np.atleast_2d(unit.z_n)))
    if np.ndim(unit.z_n) == 1:
        return x[0], p_y[0]
    return x, p_y


@dataclass
class LabeledDataset:
    x: np.ndarray
    a: np.ndarray
    y: np.ndarray
    split: str = "train"
    seed: int | None = None
    spec_id: str = ""
    z_n: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if not (len(self.x) == len(self.a) == len(self.y)):
            raise ValueError("x, a, y lengths differ")
        if not np.all(np.isfinite(self.x)):
            raise NumericError("dataset contains non-finite features")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def k(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "LabeledDataset":
        z = None if self.z_n is None else self.z_n[idx]
        return LabeledDataset(self.x[idx], self.a[idx], self.y[idx], self.split, self.seed, self.spec_id, z)

    @property
    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr, dt in ((self.x, "<f8"), (self.a, "<i8"), (self.y, "<i8")):
            h.update(np.ascontiguousarray(arr, dtype=dt).tobytes())
        return h.hexdigest()[:16]

    def to_csv(self) -> str:
        buf = io.StringIO()
        k = self.k
        buf.write(",".join([f"x_{j}" for j in range(k)] + ["a", "y"]) + "\n")
        for xi, ai, yi in zip(self.x, self.a, self.y):
            buf.write(",".join(f"{v:.17g}" for v in xi) + f",{int(ai)},{int(yi)}\n")
        return buf.getvalue()

    def save_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def load_csv(cls, path, split: str = "train") -> "LabeledDataset":
        lines = Path(path).read_text().strip().splitlines()
        header = lines[0].split(",")
        if header[-2:] != ["a", "y"]:
            raise ValueError("dataset CSV must end with columns a,y")
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
        return cls(data[:, :-2], data[:, -2].astype(int), data[:, -1].astype(int), split)


def sample_dataset(spec: SCMSpec, m: int, seed: int, split: str = "train") -> LabeledDataset:
    """Draw ``m`` observational rows; each split uses its own random substream."""
    if m < 1:
        raise ValueError("need at least one row")
    rng = RngStream(seed, f"dataset/{spec.fingerprint}/{split}").generator()
    unit = ExogenousUnit.sample(spec, m, rng)
    a = (unit.u_a < spec.prior).astype(np.int64)
    x, p_y = propagate(spec, unit, a)
    y = (rng.uniform(size=m) < p_y).astype(np.int64)
    return LabeledDataset(x, a, y, split, seed, spec.fingerprint, unit.z_n)


@dataclass
class ECAResult:
    value: float
    n_units: int
    n_noise: int
    tau: float
    max_se: float  # largest standard error of an estimated gap |mu_do - mu_marg|
    mean_se: float
    max_mean_se: float = 0.0  # largest standard error of a single conditional mean
    warnings: list = field(default_factory=list)


def interventional_means(
    spec: SCMSpec, f: Predictor, z_n: np.ndarray, n_noise: int, rng: np.random.Generator, diff_se: bool = False
):
    """Monte Carlo ``E[f(X) | do(A=a), Z_n=z]`` for a = 0, 1 with shared noise.

    Returns ``(means, ses)``, each shaped ``(units, 2)``; with ``diff_se`` also
    the per-unit standard error of the paired difference ``f(a=1) - f(a=0)``.
    """
    u, k = z_n.shape
    z_rep = np.repeat(z_n, n_noise, axis=0)
    xi = spec.sigma * rng.standard_normal((spec.n, u * n_noise, k))
    eps = spec.sigma * rng.standard_normal((u * n_noise, k))
    unit = ExogenousUnit(z_rep, xi, eps, np.zeros(u * n_noise))
    means = np.empty((u, 2))
    ses = np.zeros((u, 2))
    fx = []
    for a in (0, 1):
        x, _ = propagate(spec, unit, a)
        fa = np.asarray(f(x), dtype=np.float64).reshape(u, n_noise)
        fx.append(fa)
        means[:, a] = fa.mean(axis=1)
        if n_noise > 1:
            ses[:, a] = fa.std(axis=1, ddof=1) / np.sqrt(n_noise)
    if not diff_se:
        return means, ses
    dse = (fx[1] - fx[0]).std(axis=1, ddof=1) / np.sqrt(n_noise) if n_noise > 1 else np.zeros(u)
    return means, ses, dse


def eca(
    spec: SCMSpec,
    f: Predictor,
    n_units: int = 500,
    n_noise: int = 16,
    tau: float = 0.05,
    rng: np.random.Generator | None = None,
) -> ECAResult:
    """Expected Counterfactual Accuracy of predictor ``f`` under ``spec``.

    For each root block ``z``, the interventional mean under ``do(A=a)`` is
    compared with the observational mean given ``z`` (the prior-weighted
    mixture of the two interventional means, computed on the same noise
    draws); a unit scores 1 for ``a`` when the two agree within ``tau``.
    The attribute is averaged exactly over its two values rather than
    sampled.
    """
    if n_units < 1 or n_noise < 1:
        raise ValueError("n_units and n_noise must be >= 1")
    if tau <= 0:
        raise ValueError("tau must be positive")
    if rng is None:
        rng = RngStream(0, "eca").generator()
    z_n = rng.standard_normal((n_units, spec.k))
    means, ses, dse = interventional_means(spec, f, z_n, n_noise, rng, diff_se=True)
    pi = spec.prior
    marg = (1.0 - pi) * means[:, 0] + pi * means[:, 1]
    hits = np.abs(means - marg[:, None]) <= tau
    value = float(hits.mean())
    # mu_do(a) - mu_marg = +-P(other a) * (mu_1 - mu_0) on shared draws
    gap_se = np.concatenate([pi * dse, (1.0 - pi) * dse])
    res = ECAResult(value, n_units, n_noise, tau, float(gap_se.max()), float(gap_se.mean()), float(ses.max()))
    if res.max_se > tau / 2:
        res.warnings.append(f"n_noise={n_noise} too small to resolve tau={tau}: max standard error {res.max_se:.4g}")
    return res
