"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps gradients that are zero up to round-off from reporting
    huge relative errors.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numeric_grads(
    loss: Callable[[], float], params: Sequence[np.ndarray], h: float = 1e-5
) -> list[np.ndarray]:
    """Central differences of ``loss()`` w.r.t. each entry of ``params`` (perturbed in place)."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss()
            flat[i] = old - h
            down = loss()
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def max_relative_error(
    loss: Callable[[], float],
    analytic: Sequence[np.ndarray],
    params: Sequence[np.ndarray],
    h: float = 1e-5,
    kinks: Callable[[], np.ndarray] | None = None,
) -> float:
    """Worst elementwise relative error between ``analytic`` and central differences.

    If ``kinks`` is given it must return the relu sign pattern at the current
    parameters; entries whose ±h perturbation flips any sign are not
    differentiable there and are skipped (returned as ``nan`` if every entry
    is skipped).

    Central differences carry round-off of about ``eps * |loss| / h``, so the
    relative-error floor is raised to ``1e5`` times that (never below 1e-6):
    gradient entries under the floor are compared absolutely.
    """
    base = abs(float(loss()))
    floor = max(1e-6, 1e5 * np.finfo(np.float64).eps * base / h)
    worst = 0.0
    checked = 0
    for p, a in zip(params, analytic):
        flat = p.reshape(-1)
        aflat = np.asarray(a).reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss()
            s_up = kinks() if kinks else None
            flat[i] = old - h
            down = loss()
            s_down = kinks() if kinks else None
            flat[i] = old
            if kinks is not None and not np.array_equal(s_up, s_down):
                continue
            num = (up - down) / (2 * h)
            worst = max(worst, float(relative_error(np.array(aflat[i]), np.array(num), floor)))
            checked += 1
    return worst if checked else float("nan")
