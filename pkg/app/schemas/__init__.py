# Schemas package
from .experiment import (
    ChaosConfig,
    ControlConfig,
    ExperimentConfig,
    ExperimentKind,
    FunctionSpec,
    GridConfig,
    LevyConfig,
    MarketConfig,
    ModelConfig,
    MonteCarloConfig,
    QuadratureConfig,
    RegressionConfig,
    TolerancesConfig,
    ZGridConfig,
)
from .reports import CheckResult, ErrorResponse, RunReport, ValidateResponse

__all__ = [
    "ChaosConfig",
    "ControlConfig",
    "ExperimentConfig",
    "ExperimentKind",
    "FunctionSpec",
    "GridConfig",
    "LevyConfig",
    "MarketConfig",
    "ModelConfig",
    "MonteCarloConfig",
    "QuadratureConfig",
    "RegressionConfig",
    "TolerancesConfig",
    "ZGridConfig",
    "CheckResult",
    "ErrorResponse",
    "RunReport",
    "ValidateResponse",
]
