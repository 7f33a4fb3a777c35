"""
Sample experiment configurations, one per pipeline
"""
from .experiment import (
    ChaosConfig, ControlConfig, ExperimentConfig, ExperimentKind, FunctionSpec, GridConfig,
    MarketConfig, ModelConfig, MonteCarloConfig, ZGridConfig
)


def create_sample_donsker_config() -> ExperimentConfig:
    """Gaussian signal Z = B(1), M-field on a 9-node z-window"""
    return ExperimentConfig(
        name="donsker-gaussian",
        kind=ExperimentKind.DONSKER,
        grid=GridConfig(T=0.5, T0=1.0, N=16),
        monte_carlo=MonteCarloConfig(n_scenarios=200, seed=7),
        z_grid=ZGridConfig(window=3.0, nodes=9),
    )


def create_sample_simulate_config() -> ExperimentConfig:
    """Drivers, signal and the LQ state at z = 0"""
    return ExperimentConfig(
        name="simulate-lq",
        kind=ExperimentKind.SIMULATE,
        grid=GridConfig(T=1.0, T0=2.0, N=32),
        monte_carlo=MonteCarloConfig(n_scenarios=500, seed=11),
        model=ModelConfig(name="lq"),
        control=ControlConfig(candidate=0.5),
    )


def create_sample_adjoint_config() -> ExperimentConfig:
    """x-free model with a linear terminal reward; the adjoint has a closed form"""
    return ExperimentConfig(
        name="adjoint-linear",
        kind=ExperimentKind.ADJOINT,
        grid=GridConfig(T=0.5, T0=1.0, N=16),
        monte_carlo=MonteCarloConfig(n_scenarios=2000, seed=5),
        model=ModelConfig(name="linear_terminal"),
        control=ControlConfig(candidate=0.2),
        z_grid=ZGridConfig(window=1.0, nodes=3),
    )


def create_sample_check_config() -> ExperimentConfig:
    """Non-insider LQ problem: oracle search, Gateaux routes and both maximum principles"""
    return ExperimentConfig(
        name="check-lq",
        kind=ExperimentKind.CHECK,
        grid=GridConfig(T=1.0, T0=2.0, N=16),
        chaos=ChaosConfig(insider=False),
        monte_carlo=MonteCarloConfig(n_scenarios=400, seed=3),
        model=ModelConfig(name="lq"),
        control=ControlConfig(bounds=(-1.0, 1.0), points=41),
        z_grid=ZGridConfig(nodes=1),
    )


def create_sample_portfolio_config() -> ExperimentConfig:
    """Insider log-utility market with constant kernels"""
    return ExperimentConfig(
        name="portfolio-log",
        kind=ExperimentKind.PORTFOLIO,
        grid=GridConfig(T=0.5, T0=1.0, N=32),
        market=MarketConfig(
            b0=FunctionSpec(name="constant", params={"value": 0.1}),
            sigma0=FunctionSpec(name="constant", params={"value": 1.0}),
            x0=1.0,
        ),
        monte_carlo=MonteCarloConfig(n_scenarios=1000, seed=17),
        z_grid=ZGridConfig(window=2.0, nodes=5),
    )


SAMPLES = {
    "simulate": create_sample_simulate_config,
    "donsker": create_sample_donsker_config,
    "adjoint": create_sample_adjoint_config,
    "check": create_sample_check_config,
    "portfolio": create_sample_portfolio_config,
}
