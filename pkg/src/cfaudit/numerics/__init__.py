from .nets import DenseNet, Layer, NumericError, ShapeError, flatten, forward, grad, sigmoid
from .optim import OptimState, clip_by_global_norm, opt_step
from .rng import RngStream
from .special import betainc, student_t_cdf, student_t_sf

__all__ = [
    "DenseNet",
    "Layer",
    "NumericError",
    "OptimState",
    "RngStream",
    "ShapeError",
    "betainc",
    "clip_by_global_norm",
    "flatten",
    "forward",
    "grad",
    "opt_step",
    "sigmoid",
    "student_t_cdf",
    "student_t_sf",
]
