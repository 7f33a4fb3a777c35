import numpy as np
import pytest

from app.services.chaos import simulate_signal
from app.services.donsker import DonskerField, NeutralField
from app.services.paths import LevyModel, build_grid, sample_driver
from app.services.presets import build_chaos

UNIT_BETA = {"name": "constant", "params": {"value": 1.0}}


class GaussianSetup:
    """Z = B(T0) with T = 0.5, T0 = 1."""

    def __init__(self, n: int, N: int, seed: int, T: float = 0.5, T0: float = 1.0):
        self.grid = build_grid(T, T0, N)
        self.levy = LevyModel.pure_brownian()
        self.paths = sample_driver(self.grid, self.levy, n, seed)
        self.spec = build_chaos(UNIT_BETA, None, T0)
        self.signal = simulate_signal(self.spec, self.paths, self.grid)
        self.field = DonskerField(self.spec, self.levy, self.signal)


@pytest.fixture
def gaussian():
    return GaussianSetup(n=400, N=16, seed=7)


@pytest.fixture
def neutral():
    grid = build_grid(1.0, 2.0, 8)
    paths = sample_driver(grid, LevyModel.pure_brownian(), 200, 11)
    return grid, paths, NeutralField(grid, None, paths.n_scenarios)


@pytest.fixture
def jump_levy():
    return LevyModel.from_marks(2.0, [(1.0, 0.5), (-0.5, 0.5)])


@pytest.fixture
def small_config():
    """Factory for small experiment configurations as plain dicts."""
    def make(kind: str = "donsker", **sections):
        config = {
            "name": f"test-{kind}",
            "kind": kind,
            "grid": {"T": 0.5, "T0": 1.0, "N": 8},
            "monte_carlo": {"n_scenarios": 64, "seed": 5},
            "z_grid": {"window": 2.0, "nodes": 3},
        }
        config.update(sections)
        return config

    return make


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
