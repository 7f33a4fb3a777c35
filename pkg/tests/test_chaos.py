import numpy as np
import pytest

from app.core.errors import ChaosSpecError
from app.services.chaos import jump_exponent, remaining_variance, simulate_signal
from app.services.paths import LevyModel, build_grid, sample_driver
from app.services.presets import build_chaos

UNIT = {"name": "constant", "params": {"value": 1.0}}


def test_remaining_variance_of_constant_beta():
    spec = build_chaos(UNIT, None, 1.0)
    assert remaining_variance(spec, 0.25) == pytest.approx((0.75, 0.0))
    assert remaining_variance(spec, 1.0) == (0.0, 0.0)


def test_remaining_variance_with_jumps(jump_levy):
    spec = build_chaos(UNIT, {"name": "constant", "params": {"value": 0.5}}, 1.0)
    v_b, v_n = remaining_variance(spec, 0.0, jump_levy)
    assert v_b == pytest.approx(1.0)
    assert v_n == pytest.approx(2.0 * 0.25)
    assert remaining_variance(spec, 0.0)[1] == 0.0


def test_signal_matches_extended_brownian_path(gaussian):
    B = gaussian.paths.brownian_path(extended=True)
    np.testing.assert_allclose(gaussian.signal.terminal, B[:, gaussian.grid.signal_steps])
    np.testing.assert_allclose(gaussian.signal.values, gaussian.paths.brownian_path())


def test_signal_is_frozen_after_insider_horizon():
    grid = build_grid(1.0, 0.5, 8)
    paths = sample_driver(grid, LevyModel.pure_brownian(), 5, seed=4)
    signal = simulate_signal(build_chaos(UNIT, None, 0.5), paths, grid)
    for k in range(4, 9):
        np.testing.assert_array_equal(signal.values[:, k], signal.terminal)


def test_vanishing_beta_is_rejected(gaussian):
    spec = build_chaos({"name": "constant", "params": {"value": 0.0}}, None, 1.0)
    with pytest.raises(ChaosSpecError):
        simulate_signal(spec, gaussian.paths, gaussian.grid)


def test_gaussian_detection(jump_levy):
    spec = build_chaos(UNIT, {"name": "zero"}, 1.0)
    assert spec.is_gaussian(jump_levy)
    jumpy = build_chaos(UNIT, {"name": "scaled_mark", "params": {"scale": 0.5}}, 1.0)
    assert not jumpy.is_gaussian(jump_levy)
    assert jumpy.is_gaussian(LevyModel.pure_brownian())


def test_jump_exponent_small_argument(jump_levy):
    spec = build_chaos(UNIT, {"name": "constant", "params": {"value": 0.5}}, 1.0)
    _, v_n = remaining_variance(spec, 0.0, jump_levy)
    x = 1e-3
    value = jump_exponent(spec, jump_levy, 0.0, x)
    assert value.real == pytest.approx(-0.5 * x ** 2 * v_n, rel=1e-3)
    assert np.all(jump_exponent(spec, LevyModel.pure_brownian(), 0.0, np.array([1.0, 2.0])) == 0)
