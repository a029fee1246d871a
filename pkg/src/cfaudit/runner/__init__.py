from .config import ConfigError, EcaConfig, ExperimentConfig, ScmConfig, load_config
from .report import UndefinedCorrelationError, alignment_summary, correlation_report, pearson
from .sweep import SweepResult, run_sweep

__all__ = [
    "ConfigError",
    "EcaConfig",
    "ExperimentConfig",
    "ScmConfig",
    "SweepResult",
    "UndefinedCorrelationError",
    "alignment_summary",
    "correlation_report",
    "load_config",
    "pearson",
    "run_sweep",
]
