from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from app.services.presets import BETA_PRESETS, KERNEL_PRESETS, MODEL_PRESETS, PSI_PRESETS, build_function


class ExperimentKind(str, Enum):
    SIMULATE = "simulate"
    DONSKER = "donsker"
    ADJOINT = "adjoint"
    CHECK = "check"
    PORTFOLIO = "portfolio"


class FunctionSpec(BaseModel):
    name: Optional[str] = Field(None, description="Preset name")
    params: Dict[str, float] = Field(default_factory=dict, description="Preset parameters")
    coefficients: Optional[List[float]] = Field(None, description="Polynomial coefficients, lowest degree first")

    @model_validator(mode="after")
    def validate_choice(self):
        if (self.name is None) == (self.coefficients is None):
            raise ValueError("give either a preset 'name' or polynomial 'coefficients'")
        if self.coefficients is not None and not self.coefficients:
            raise ValueError("coefficients cannot be empty")
        return self


def _check_preset(spec: Optional[FunctionSpec], registry: dict, key: str) -> Optional[FunctionSpec]:
    if spec is None or spec.name is None:
        return spec
    if spec.name not in registry:
        raise ValueError(f"{key}: unknown preset '{spec.name}' (available: {sorted(registry)})")
    unknown = set(spec.params) - set(registry[spec.name].params)
    if unknown:
        raise ValueError(f"{key}: preset '{spec.name}' has no parameters {sorted(unknown)}")
    return spec


class GridConfig(BaseModel):
    T: float = Field(1.0, gt=0, description="Control horizon")
    T0: float = Field(1.0, gt=0, description="Insider horizon")
    N: int = Field(64, ge=2, description="Number of time steps")


class LevyConfig(BaseModel):
    intensity: float = Field(0.0, ge=0, description="Jump intensity lambda")
    marks: List[Tuple[float, float]] = Field(default_factory=list, description="(size, probability) pairs")

    @field_validator("marks")
    def validate_marks(cls, v):
        if v:
            total = sum(p for _, p in v)
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"mark probabilities must sum to 1, got {total}")
            if any(p <= 0 for _, p in v):
                raise ValueError("mark probabilities must be positive")
        return v

    @model_validator(mode="after")
    def validate_support(self):
        if self.intensity > 0 and not self.marks:
            raise ValueError("levy.marks: a positive intensity needs at least one mark")
        return self


class ChaosConfig(BaseModel):
    insider: bool = Field(True, description="Use the Donsker field; false gives the non-insider problem")
    beta: FunctionSpec = Field(default_factory=lambda: FunctionSpec(name="constant", params={"value": 1.0}))
    psi: Optional[FunctionSpec] = Field(None, description="Jump loading of the signal")

    @field_validator("beta")
    def validate_beta(cls, v):
        return _check_preset(v, BETA_PRESETS, "chaos.beta")

    @field_validator("psi")
    def validate_psi(cls, v):
        return _check_preset(v, PSI_PRESETS, "chaos.psi")


class MarketConfig(BaseModel):
    b0: FunctionSpec = Field(default_factory=lambda: FunctionSpec(name="constant", params={"value": 0.0}))
    sigma0: FunctionSpec = Field(default_factory=lambda: FunctionSpec(name="constant", params={"value": 1.0}))
    x0: float = Field(1.0, gt=0, description="Initial wealth")
    utility: Literal["log", "power"] = Field("log", description="Utility family")
    gamma: Optional[float] = Field(None, lt=1, description="Power utility exponent")
    c0: float = Field(1e-3, gt=0, description="Lower bound for sigma0")
    bracket: Tuple[float, float] = Field((1e-4, 1e4), description="Bracket for the budget constant c")

    @field_validator("b0")
    def validate_b0(cls, v):
        return _check_preset(v, KERNEL_PRESETS, "market.b0")

    @field_validator("sigma0")
    def validate_sigma0(cls, v):
        return _check_preset(v, KERNEL_PRESETS, "market.sigma0")

    @model_validator(mode="after")
    def validate_utility(self):
        if self.utility == "power" and (self.gamma is None or self.gamma == 0):
            raise ValueError("market.gamma: power utility needs a non-zero gamma < 1")
        if not 0 < self.bracket[0] < self.bracket[1]:
            raise ValueError("market.bracket must satisfy 0 < c_lo < c_hi")
        return self


class MonteCarloConfig(BaseModel):
    n_scenarios: int = Field(2000, ge=2, description="Number of scenarios")
    seed: Optional[int] = Field(None, ge=0, description="Master seed; defaults to DEFAULT_SEED")
    threads: int = Field(1, ge=1, description="Worker threads")
    antithetic: bool = Field(False, description="Pair scenarios through negated Brownian increments")

    @model_validator(mode="after")
    def validate_pairs(self):
        if self.antithetic and self.n_scenarios % 2:
            raise ValueError("monte_carlo.n_scenarios must be even with antithetic sampling")
        return self


class ZGridConfig(BaseModel):
    center: float = Field(0.0, description="Center of the z-window")
    window: Optional[float] = Field(None, gt=0, description="Half width; defaults to 4 standard deviations of Z(T0)")
    nodes: int = Field(9, ge=1, description="Number of z-nodes")


class QuadratureConfig(BaseModel):
    nodes: int = Field(2048, ge=16, description="Fourier nodes")
    envelope: float = Field(1e-12, gt=0, lt=1, description="Gaussian envelope that fixes the cutoff")
    method: Literal["auto", "quadrature", "closed_form"] = Field("auto", description="Donsker evaluation route")


class RegressionConfig(BaseModel):
    degree: int = Field(3, ge=0, le=8, description="Polynomial degree")
    features: List[Literal["state", "signal", "brownian"]] = Field(default_factory=lambda: ["state", "signal"])
    g_features: Optional[List[Literal["state", "signal", "brownian"]]] = Field(
        None, description="G-measurable features; defaults to the full list")


class TolerancesConfig(BaseModel):
    foc: float = Field(1e-2, gt=0, description="Necessary-condition tolerance")
    gateaux: float = Field(1e-2, gt=0, description="Gateaux agreement tolerance")
    fd_step: float = Field(1e-3, gt=0, description="Finite-difference step for the Gateaux derivative")
    density_floor: float = Field(1e-12, gt=0, description="Smallest M before Phi is refused")


class ControlConfig(BaseModel):
    family: Literal["constant", "piecewise", "insider_affine"] = Field("constant")
    bounds: Tuple[float, float] = Field((-1.0, 1.0), description="Control set U")
    points: int = Field(41, ge=2, description="Grid points for constant families and the maximum condition")
    candidate: Optional[float] = Field(None, description="Constant candidate control; defaults to the oracle argmax")
    direction: float = Field(1.0, description="Constant perturbation direction beta0")

    @field_validator("bounds")
    def validate_bounds(cls, v):
        if not v[0] < v[1]:
            raise ValueError("control.bounds must satisfy lo < hi")
        return v


class ModelConfig(BaseModel):
    name: str = Field("lq", description="Control-problem preset")
    params: Dict[str, float] = Field(default_factory=dict)

    @field_validator("name")
    def validate_name(cls, v):
        if v not in MODEL_PRESETS:
            raise ValueError(f"model.name: unknown preset '{v}' (available: {sorted(MODEL_PRESETS)})")
        return v


class ExperimentConfig(BaseModel):
    name: str = Field("experiment", min_length=1, description="Output sub-directory name")
    kind: ExperimentKind = Field(ExperimentKind.DONSKER, description="Pipeline to run")
    grid: GridConfig = Field(default_factory=GridConfig)
    levy: LevyConfig = Field(default_factory=LevyConfig)
    chaos: ChaosConfig = Field(default_factory=ChaosConfig)
    market: MarketConfig = Field(default_factory=MarketConfig)
    monte_carlo: MonteCarloConfig = Field(default_factory=MonteCarloConfig)
    z_grid: ZGridConfig = Field(default_factory=ZGridConfig)
    quadrature: QuadratureConfig = Field(default_factory=QuadratureConfig)
    regression: RegressionConfig = Field(default_factory=RegressionConfig)
    tolerances: TolerancesConfig = Field(default_factory=TolerancesConfig)
    control: ControlConfig = Field(default_factory=ControlConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)

    @field_validator("name")
    def validate_name(cls, v):
        if not v.strip() or any(c in v for c in "/\\"):
            raise ValueError("name must be a plain directory name")
        return v.strip()

    @model_validator(mode="after")
    def validate_sigma0_bound(self):
        """sigma0 must stay above c0 on the grid."""
        sigma0 = build_function("kernel", self.market.sigma0.model_dump())
        t = np.linspace(0.0, max(self.grid.T, self.grid.T0), self.grid.N + 1)
        tt, ss = np.meshgrid(t, t, indexing="ij")
        values = np.broadcast_to(np.asarray(sigma0(tt, ss, self.z_grid.center), dtype=float), tt.shape)[ss <= tt]
        if not np.all(np.isfinite(values)) or values.min() < self.market.c0:
            raise ValueError(f"market.sigma0: must be bounded away from zero, min {values.min():.4g} "
                             f"is below market.c0 = {self.market.c0:g}")
        return self
