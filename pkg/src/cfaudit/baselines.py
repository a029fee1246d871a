"""Demographic parity and equality of opportunity as rate-equality tests.

Predictions are thresholded at 0.5 and positive rates are compared across
attribute groups with Welch's unequal-variance t-test.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .numerics import student_t_sf
from .scm import LabeledDataset

MIN_GROUP = 8


class InsufficientGroupError(ValueError):
    pass


@dataclass
class WelchResult:
    t: float
    p: float
    dof: float
    degenerate: bool


@dataclass
class BaselineReport:
    method: str
    p: float
    alpha: float
    reject: bool
    rates: dict  # "a=0" -> rate, or "y=1,a=0" -> rate
    counts: dict
    t: list = field(default_factory=list)
    strata_p: list = field(default_factory=list)
    degenerate: bool = False
    dataset: str = ""
    classifier: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def welch_t(x0, x1) -> WelchResult:
    """Two-sided Welch test of equal means with Welch-Satterthwaite dof.

    Two groups with zero variance and equal means are degenerate (p = 1);
    zero variance with different means is an exact separation (p = 0).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    n0, n1 = len(x0), len(x1)
    if n0 < 2 or n1 < 2:
        raise InsufficientGroupError("each group needs at least two rows")
    diff = x1.mean() - x0.mean()
    q0, q1 = x0.var(ddof=1) / n0, x1.var(ddof=1) / n1
    se2 = q0 + q1
    if se2 == 0.0:
        if diff == 0.0:
            return WelchResult(0.0, 1.0, float(n0 + n1 - 2), True)
        return WelchResult(math.copysign(math.inf, diff), 0.0, float(n0 + n1 - 2), True)
    t = diff / math.sqrt(se2)
    dof = se2**2 / (q0**2 / (n0 - 1) + q1**2 / (n1 - 1))
    # the incomplete-beta form accepts the fractional Welch dof directly
    return WelchResult(float(t), student_t_sf(t, dof), float(dof), False)


def _binary(f: Callable, x) -> np.ndarray:
    return (np.asarray(f(x), dtype=np.float64) >= 0.5).astype(np.float64)


def _groups(yhat, a, label=""):
    out = []
    for g in (0, 1):
        sel = yhat[a == g]
        if len(sel) < MIN_GROUP:
            where = f" in stratum {label}" if label else ""
            raise InsufficientGroupError(f"group a={g}{where} has {len(sel)} rows (< {MIN_GROUP}); power too low")
        out.append(sel)
    return out


def dp_test(f: Callable, data: LabeledDataset, alpha: float = 0.05) -> BaselineReport:
    """Demographic parity: P(f(X)=1 | A=0) = P(f(X)=1 | A=1)."""
    yhat = _binary(f, data.x)
    g0, g1 = _groups(yhat, data.a)
    w = welch_t(g0, g1)
    return BaselineReport(
        "DP", w.p, alpha, bool(w.p < alpha),
        {"a=0": float(g0.mean()), "a=1": float(g1.mean())},
        {"a=0": len(g0), "a=1": len(g1)},
        [w.t], [w.p], w.degenerate and w.p == 1.0, data.fingerprint,
    )


def eo_test(f: Callable, data: LabeledDataset, alpha: float = 0.05) -> BaselineReport:
    """Equalized odds: parity of positive rates within each outcome stratum.

    The two stratum p-values are combined by Bonferroni, ``min(2 min(p0, p1), 1)``.
    """
    yhat = _binary(f, data.x)
    rates, counts, ts, ps, degen = {}, {}, [], [], []
    for y in (0, 1):
        sel = data.y == y
        label = f"y={y}"
        g0, g1 = _groups(yhat[sel], data.a[sel], label)
        w = welch_t(g0, g1)
        rates[f"{label},a=0"], rates[f"{label},a=1"] = float(g0.mean()), float(g1.mean())
        counts[f"{label},a=0"], counts[f"{label},a=1"] = len(g0), len(g1)
        ts.append(w.t)
        ps.append(w.p)
        degen.append(w.degenerate and w.p == 1.0)
    p = bonferroni(ps)
    return BaselineReport("EO", p, alpha, bool(p < alpha), rates, counts, ts, ps, all(degen), data.fingerprint)


def bonferroni(ps) -> float:
    return float(min(len(ps) * min(ps), 1.0))
