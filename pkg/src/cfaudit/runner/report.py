"""Correlation of log p-values with ground-truth ECA, per dataset and method."""

from __future__ import annotations

import csv
import io
import math

import numpy as np

P_FLOOR = 1e-300
LOG_ALPHA = math.log(0.05)
METHOD_COLUMNS = {"CIT-LR": "p_citlr", "DP": "p_dp", "EO": "p_eo"}
REPORT_COLUMNS = (
    "dataset", "method", "n", "n_clamped", "r", "slope", "intercept",
    "p_min", "p_max", "log_alpha", "error",
)


class UndefinedCorrelationError(ValueError):
    pass


def pearson(x, y) -> float:
    """Product-moment correlation of two equal-length samples."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two 1-d samples of equal length")
    if len(x) < 3:
        raise UndefinedCorrelationError(f"need at least 3 points, got {len(x)}")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation is undefined for a zero-variance sample")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def log_p(p) -> np.ndarray:
    return np.log(np.maximum(np.asarray(p, dtype=np.float64), P_FLOOR))


def fit_line(x, y) -> tuple[float, float]:
    """Least-squares ``y = slope * x + intercept``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dx = x - x.mean()
    slope = float(dx @ (y - y.mean())) / float(dx @ dx)
    return slope, float(y.mean() - slope * x.mean())


def correlation_cell(eca, p) -> dict:
    """Regression of ``log p`` (floored at 1e-300) on ECA for one (dataset, method)."""
    eca = np.asarray(eca, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    ok = np.isfinite(eca) & np.isfinite(p)
    eca, p = eca[ok], p[ok]
    lp = log_p(p)
    r = pearson(eca, lp)
    slope, intercept = fit_line(eca, lp)
    return {
        "n": int(len(p)), "n_clamped": int(np.sum(p < P_FLOOR)), "r": r, "slope": slope,
        "intercept": intercept, "p_min": float(p.min()), "p_max": float(p.max()), "log_alpha": LOG_ALPHA,
    }


def correlation_report(rows) -> list[dict]:
    """One record per (dataset, method) in order of first appearance.

    Cells whose correlation is undefined carry the reason in ``error``.
    """
    datasets = list(dict.fromkeys(r["dataset"] for r in rows))
    out = []
    for ds in datasets:
        sub = [r for r in rows if r["dataset"] == ds]
        for method, col in METHOD_COLUMNS.items():
            rec = {c: float("nan") for c in REPORT_COLUMNS}
            rec.update(dataset=ds, method=method, n=0, n_clamped=0, log_alpha=LOG_ALPHA, error="")
            try:
                rec.update(correlation_cell([r["eca"] for r in sub], [r[col] for r in sub]))
            except UndefinedCorrelationError as exc:
                rec["error"] = str(exc)
            out.append(rec)
    return out


def alignment_summary(report: list[dict]) -> dict:
    """Per dataset: is r(CIT-LR) positive, and does it beat both baselines?"""
    out = {}
    for ds in dict.fromkeys(r["dataset"] for r in report):
        cells = {r["method"]: r["r"] for r in report if r["dataset"] == ds}
        cit = cells.get("CIT-LR", float("nan"))
        base = [cells.get(m, float("nan")) for m in ("DP", "EO")]
        # an undefined baseline correlation cannot beat CIT-LR
        beats = bool(np.isfinite(cit) and all(not np.isfinite(b) or cit > b for b in base))
        out[ds] = {"r_citlr": cit, "positive": bool(np.isfinite(cit) and cit > 0), "beats_baselines": beats}
    return out


def report_csv(report: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for rec in report:
        w.writerow([format(rec[c], ".17g") if isinstance(rec[c], float) else rec[c] for c in REPORT_COLUMNS])
    return buf.getvalue()
