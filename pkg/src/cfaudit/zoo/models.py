"""The pool of base classifiers under audit.

Every classifier standardizes its inputs with training-set statistics and
exposes ``predict_proba(x) -> [0, 1]``. Margin models (logistic regression
and the SVM variants) map their raw margin through a unit-slope sigmoid.
Classifiers see ``x`` only, never the protected attribute.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numerics import DenseNet, OptimState, RngStream, ShapeError, opt_step, sigmoid
from ..scm import LabeledDataset
from .trees import Tree, build_tree

FAMILIES = (
    "logistic",
    "linear-svm",
    "rff-rbf-svm",
    "rff-poly-svm",
    "tree",
    "tree-depth5",
    "forest50",
    "gboost100",
    "mlp-16-8-4",
    "mlp-16-4",
)

DEFAULT_PARAMS = {
    "logistic": {"C": 1.0, "loss": "log", "epochs": 200},
    "linear-svm": {"C": 1.0, "loss": "squared_hinge", "epochs": 200},
    "rff-rbf-svm": {"C": 1.0, "loss": "hinge", "epochs": 200, "n_features": 512},
    "rff-poly-svm": {"C": 1.0, "loss": "hinge", "epochs": 200, "n_features": 512, "degree": 3},
    "tree": {"max_depth": None},
    "tree-depth5": {"max_depth": 5},
    "forest50": {"n_estimators": 50, "max_depth": None},
    "gboost100": {"n_estimators": 100, "learning_rate": 0.1, "max_depth": 3},
    "mlp-16-8-4": {"hidden": [16, 8, 4], "max_iter": 500},
    "mlp-16-4": {"hidden": [16, 4], "max_iter": 500},
}


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ClassifierSpec:
    family: str
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown classifier family {self.family!r}")
        unknown = set(self.params) - set(DEFAULT_PARAMS[self.family])
        if unknown:
            raise ValueError(f"unknown hyperparameters for {self.family}: {sorted(unknown)}")
        depth = self.resolved.get("max_depth")
        if depth is not None and depth < 1:
            raise ValueError("max_depth must be >= 1")

    @property
    def resolved(self) -> dict:
        return {**DEFAULT_PARAMS[self.family], **self.params}


class TrainedClassifier:
    """Fitted classifier; subclasses implement ``_proba`` on standardized input."""

    family: str = ""

    def __init__(self, family: str, seed: int, mean: np.ndarray, scale: np.ndarray, fingerprint: str = ""):
        self.family = family
        self.seed = seed
        self.mean = np.asarray(mean, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)
        self.fingerprint = fingerprint

    @property
    def in_dim(self) -> int:
        return len(self.mean)

    def predict_proba(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x2 = x[None, :] if single else x
        if x2.ndim != 2 or x2.shape[1] != self.in_dim:
            raise ShapeError(f"classifier expects {self.in_dim} features, got shape {x.shape}")
        p = np.clip(self._proba((x2 - self.mean) / self.scale), 0.0, 1.0)
        return p[0] if single else p

    __call__ = predict_proba

    def predict(self, x) -> np.ndarray:
        return (self.predict_proba(x) >= 0.5).astype(np.int64)

    def _proba(self, xs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # serialization
    def arrays(self) -> dict:
        return {"mean": self.mean, "scale": self.scale, **self._arrays()}

    def _arrays(self) -> dict:
        return {}

    def meta(self) -> dict:
        return {"family": self.family, "seed": int(self.seed), "fingerprint": self.fingerprint}


class ConstantClassifier(TrainedClassifier):
    """Predicts the same probability everywhere; the exactly invariant reference."""

    def __init__(self, c: float, in_dim: int):
        super().__init__("constant", 0, np.zeros(in_dim), np.ones(in_dim))
        self.c = float(c)

    def _proba(self, xs):
        return np.full(len(xs), self.c)

    def _arrays(self):
        return {"c": np.array([self.c])}


class ThresholdClassifier(TrainedClassifier):
    """Hard threshold ``1{w . x > theta}`` on raw (unstandardized) features."""

    def __init__(self, w, theta: float):
        w = np.atleast_1d(np.asarray(w, dtype=np.float64))
        super().__init__("threshold", 0, np.zeros(len(w)), np.ones(len(w)))
        self.w = w
        self.theta = float(theta)

    def _proba(self, xs):
        return (xs @ self.w > self.theta).astype(np.float64)

    def _arrays(self):
        return {"w": self.w, "theta": np.array([self.theta])}


class LinearClassifier(TrainedClassifier):
    def __init__(self, family, seed, mean, scale, w, b, feat: dict | None = None, fingerprint=""):
        super().__init__(family, seed, mean, scale, fingerprint)
        self.w = w
        self.b = float(b)
        self.feat = feat or {}

    def features(self, xs: np.ndarray) -> np.ndarray:
        return _apply_feature_map(self.feat, xs)

    def margin(self, xs: np.ndarray) -> np.ndarray:
        return self.features(xs) @ self.w + self.b

    def _proba(self, xs):
        return sigmoid(self.margin(xs))

    def _arrays(self):
        out = {"w": self.w, "b": np.array([self.b])}
        out.update({f"feat_{k}": v for k, v in self.feat.items()})
        return out


def _apply_feature_map(feat: dict, xs: np.ndarray) -> np.ndarray:
    if not feat:
        return xs
    if "rff_W" in feat:
        D = feat["rff_W"].shape[1]
        return np.sqrt(2.0 / D) * np.cos(xs @ feat["rff_W"] + feat["rff_b"])
    # random Maclaurin map for (gamma <x, y>)^degree
    W = feat["poly_W"]  # (degree, k, D)
    D = W.shape[2]
    out = np.ones((len(xs), D))
    for j in range(W.shape[0]):
        out *= xs @ W[j]
    return out / np.sqrt(D)


class TreeClassifier(TrainedClassifier):
    def __init__(self, family, seed, mean, scale, tree: Tree, fingerprint=""):
        super().__init__(family, seed, mean, scale, fingerprint)
        self.tree = tree

    def _proba(self, xs):
        return self.tree.predict(xs)

    def _arrays(self):
        return self.tree.arrays("t0_")


class ForestClassifier(TrainedClassifier):
    def __init__(self, family, seed, mean, scale, trees: list, fingerprint=""):
        super().__init__(family, seed, mean, scale, fingerprint)
        self.trees = trees

    def _proba(self, xs):
        return np.mean([t.predict(xs) for t in self.trees], axis=0)

    def _arrays(self):
        out = {"n_trees": np.array([len(self.trees)])}
        for i, t in enumerate(self.trees):
            out.update(t.arrays(f"t{i}_"))
        return out


class BoostClassifier(TrainedClassifier):
    def __init__(self, family, seed, mean, scale, f0: float, lr: float, trees: list, fingerprint=""):
        super().__init__(family, seed, mean, scale, fingerprint)
        self.f0 = float(f0)
        self.lr = float(lr)
        self.trees = trees

    def decision(self, xs):
        out = np.full(len(xs), self.f0)
        for t in self.trees:
            out += self.lr * t.predict(xs)
        return out

    def _proba(self, xs):
        return sigmoid(self.decision(xs))

    def _arrays(self):
        out = {"n_trees": np.array([len(self.trees)]), "f0": np.array([self.f0]), "lr": np.array([self.lr])}
        for i, t in enumerate(self.trees):
            out.update(t.arrays(f"t{i}_"))
        return out


class MLPClassifier(TrainedClassifier):
    def __init__(self, family, seed, mean, scale, net: DenseNet, fingerprint=""):
        super().__init__(family, seed, mean, scale, fingerprint)
        self.net = net

    def _proba(self, xs):
        return sigmoid(self.net(xs)[:, 0])

    def _arrays(self):
        return self.net.to_arrays("net_")


# training


def _standardize(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale


def _margin_loss_grad(loss: str, m: np.ndarray, y01: np.ndarray) -> np.ndarray:
    """d(loss)/d(margin) per row."""
    if loss == "log":
        return sigmoid(m) - y01
    ys = 2.0 * y01 - 1.0
    slack = 1.0 - ys * m
    if loss == "hinge":
        return np.where(slack > 0, -ys, 0.0)
    if loss == "squared_hinge":
        return np.where(slack > 0, -2.0 * ys * slack, 0.0)
    raise ValueError(f"unknown loss {loss!r}")


def _fit_linear(spec: ClassifierSpec, xs, y, rng, mean, scale, fp) -> LinearClassifier:
    p = spec.resolved
    k = xs.shape[1]
    feat = {}
    if spec.family == "rff-rbf-svm":
        gamma = 1.0 / (k * xs.var())
        feat = {
            "rff_W": rng.normal(0.0, np.sqrt(2.0 * gamma), size=(k, p["n_features"])),
            "rff_b": rng.uniform(0.0, 2 * np.pi, size=p["n_features"]),
        }
    elif spec.family == "rff-poly-svm":
        gamma = 1.0 / (k * xs.var())
        signs = rng.choice([-1.0, 1.0], size=(p["degree"], k, p["n_features"]))
        feat = {"poly_W": np.sqrt(gamma) * signs}
    phi = _apply_feature_map(feat, xs)
    n, dim = phi.shape
    lam = 1.0 / (p["C"] * n)
    w = np.zeros(dim)
    b = 0.0
    batch = 64
    eta0 = 0.05
    t = 0
    for _ in range(p["epochs"]):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            eta = eta0 / (1.0 + eta0 * lam * t)
            g = _margin_loss_grad(p["loss"], phi[idx] @ w + b, y[idx])
            w -= eta * (phi[idx].T @ g / len(idx) + lam * w)
            b -= eta * g.mean()
            t += 1
    if not (np.all(np.isfinite(w)) and np.isfinite(b)):
        raise TrainingError(f"{spec.family} seed {spec.seed}: SGD diverged")
    return LinearClassifier(spec.family, spec.seed, mean, scale, w, b, feat, fp)


def mlp_loss_and_grads(net: DenseNet, xs, t, alpha: float = 1e-4):
    """Mean logistic loss on the output logit plus the L2 penalty ``alpha/(2n) sum W^2``."""
    out, cache = net.forward_cache(xs)
    logit = out[:, 0]
    n = len(t)
    data_loss = float(np.mean(np.logaddexp(0.0, logit) - t * logit))
    penalty = 0.5 * alpha / n * sum(float(np.sum(l.W * l.W)) for l in net.layers)
    grads, _ = net.backward(cache, ((sigmoid(logit) - t) / n)[:, None])
    params = net.params()
    for i in range(0, len(grads), 2):
        grads[i] = grads[i] + alpha * params[i] / n
    return data_loss + penalty, grads


def _fit_mlp(spec: ClassifierSpec, xs, y, rng, mean, scale, fp) -> MLPClassifier:
    p = spec.resolved
    n, k = xs.shape
    net = DenseNet.build([k, *p["hidden"], 1], rng, hidden="relu", out="identity")
    params = net.params()
    state = OptimState(lr=1e-3, weight_decay=0.0, clip_norm=None).init(params)
    alpha = 1e-4
    batch = min(200, n)
    best = np.inf
    stall = 0
    yf = y.astype(np.float64)
    for _ in range(p["max_iter"]):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            loss, grads = mlp_loss_and_grads(net, xs[idx], yf[idx], alpha)
            epoch_loss += loss * len(idx)
            opt_step(state, params, grads)
        epoch_loss /= n
        if not np.isfinite(epoch_loss):
            raise TrainingError(f"{spec.family} seed {spec.seed}: non-finite loss")
        if epoch_loss > best - 1e-4:
            stall += 1
            if stall >= 10:
                break
        else:
            stall = 0
        best = min(best, epoch_loss)
    return MLPClassifier(spec.family, spec.seed, mean, scale, net, fp)


def _fit_boost(spec: ClassifierSpec, xs, y, rng, mean, scale, fp) -> BoostClassifier:
    p = spec.resolved
    yf = y.astype(np.float64)
    prior = np.clip(yf.mean(), 1e-6, 1 - 1e-6)
    f0 = float(np.log(prior / (1 - prior)))
    F = np.full(len(yf), f0)
    trees = []
    for _ in range(p["n_estimators"]):
        prob = sigmoid(F)
        resid = yf - prob
        tree = build_tree(xs, resid, rng, max_depth=p["max_depth"])
        leaves = tree.apply(xs)
        hess = prob * (1 - prob)
        num = np.bincount(leaves, weights=resid, minlength=tree.n_nodes)
        den = np.bincount(leaves, weights=hess, minlength=tree.n_nodes)
        is_leaf = tree.feature < 0
        tree.value = np.where(is_leaf & (den > 1e-12), num / np.maximum(den, 1e-12), 0.0)
        F += p["learning_rate"] * tree.value[leaves]
        trees.append(tree)
    return BoostClassifier(spec.family, spec.seed, mean, scale, f0, p["learning_rate"], trees, fp)


def train(spec: ClassifierSpec, data: LabeledDataset) -> TrainedClassifier:
    """Fit one classifier on ``data`` (features only); reproducible from ``(spec, data)``."""
    y = np.asarray(data.y, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise TrainingError(f"{spec.family} seed {spec.seed}: training data has a single label")
    mean, scale = _standardize(data.x)
    xs = (data.x - mean) / scale
    rng = RngStream(spec.seed, f"zoo/{spec.family}").generator()
    fp = data.fingerprint
    fam = spec.family
    p = spec.resolved
    if fam in ("logistic", "linear-svm", "rff-rbf-svm", "rff-poly-svm"):
        return _fit_linear(spec, xs, y, rng, mean, scale, fp)
    if fam in ("tree", "tree-depth5"):
        tree = build_tree(xs, y, rng, max_depth=p["max_depth"])
        return TreeClassifier(fam, spec.seed, mean, scale, tree, fp)
    if fam == "forest50":
        n, k = xs.shape
        m_feat = max(1, int(np.sqrt(k)))
        trees = []
        for _ in range(p["n_estimators"]):
            idx = rng.integers(0, n, size=n)
            trees.append(build_tree(xs[idx], y[idx], rng, max_depth=p["max_depth"], max_features=m_feat))
        return ForestClassifier(fam, spec.seed, mean, scale, trees, fp)
    if fam == "gboost100":
        return _fit_boost(spec, xs, y, rng, mean, scale, fp)
    return _fit_mlp(spec, xs, y, rng, mean, scale, fp)


def predict_proba(clf: TrainedClassifier, x) -> np.ndarray:
    return clf.predict_proba(x)


def build_pool(
    data: LabeledDataset,
    seeds=range(10),
    families=FAMILIES,
) -> list[TrainedClassifier]:
    """Train ``families x seeds`` classifiers on the training split."""
    if data.split != "train":
        raise ValueError("the pool is trained on the train split only")
    pool = []
    for fam in families:
        for seed in seeds:
            try:
                pool.append(train(ClassifierSpec(fam, int(seed)), data))
            except TrainingError as exc:
                raise TrainingError(f"pool aborted at family={fam} seed={seed}: {exc}") from exc
    return pool


def from_arrays(arrays: dict, meta: dict) -> TrainedClassifier:
    fam = meta["family"]
    seed = meta.get("seed", 0)
    fp = meta.get("fingerprint", "")
    mean, scale = arrays["mean"], arrays["scale"]
    if fam == "constant":
        return ConstantClassifier(float(arrays["c"][0]), len(mean))
    if fam == "threshold":
        return ThresholdClassifier(arrays["w"], float(arrays["theta"][0]))
    if fam in ("logistic", "linear-svm", "rff-rbf-svm", "rff-poly-svm"):
        feat = {k[5:]: v for k, v in arrays.items() if k.startswith("feat_")}
        return LinearClassifier(fam, seed, mean, scale, arrays["w"], float(arrays["b"][0]), feat, fp)
    if fam in ("tree", "tree-depth5"):
        return TreeClassifier(fam, seed, mean, scale, Tree.from_arrays(arrays, "t0_"), fp)
    if fam == "forest50":
        n = int(arrays["n_trees"][0])
        return ForestClassifier(fam, seed, mean, scale, [Tree.from_arrays(arrays, f"t{i}_") for i in range(n)], fp)
    if fam == "gboost100":
        n = int(arrays["n_trees"][0])
        trees = [Tree.from_arrays(arrays, f"t{i}_") for i in range(n)]
        return BoostClassifier(fam, seed, mean, scale, float(arrays["f0"][0]), float(arrays["lr"][0]), trees, fp)
    if fam.startswith("mlp"):
        return MLPClassifier(fam, seed, mean, scale, DenseNet.from_arrays(arrays, "net_"), fp)
    raise ValueError(f"unknown classifier family {fam!r}")
