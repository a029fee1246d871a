"""Adam with L2 weight decay and global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .nets import ShapeError


def clip_by_global_norm(grads: Sequence[np.ndarray], max_norm: float) -> list[np.ndarray]:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm is None or norm <= max_norm or norm == 0.0:
        return [np.asarray(g, dtype=np.float64) for g in grads]
    scale = max_norm / norm
    return [g * scale for g in grads]


@dataclass
class OptimState:
    """Adam state.

    Clipping is applied to the raw gradients; weight decay is then added as
    an L2 term before the moment updates (the usual ``Adam(weight_decay=...)``
    convention rather than decoupled AdamW).
    """

    lr: float = 1e-4
    weight_decay: float = 1e-5
    clip_norm: float | None = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def init(self, params: Sequence[np.ndarray]) -> "OptimState":
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step = 0
        return self


def opt_step(state: OptimState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
    """One in-place Adam update of ``params``."""
    if not state.m:
        state.init(params)
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state differ in length")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ShapeError(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")
    grads = clip_by_global_norm(grads, state.clip_norm)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if state.weight_decay:
            g = g + state.weight_decay * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
