import math

import numpy as np
import pytest

from app.core.errors import ConfigurationError, ControlBoundsError
from app.services.paths import LevyModel, build_grid, sample_driver
from app.services.presets import build_problem
from app.services.svie import (
    ControlField,
    admissible_direction,
    direction_values,
    solve_forward,
    solve_variational,
    z_column,
)


@pytest.fixture
def lq_setup():
    grid = build_grid(1.0, 2.0, 8)
    paths = sample_driver(grid, LevyModel.pure_brownian(), 16, seed=3)
    return grid, paths, build_problem("lq")


def test_lq_state_is_linear_in_time(lq_setup):
    grid, paths, problem = lq_setup
    state = solve_forward(problem.coeffs, ControlField.constant(0.3), 0.0, paths, grid)
    np.testing.assert_allclose(state.X, np.tile(0.3 * grid.points, (16, 1)), atol=1e-12)
    np.testing.assert_allclose(state.U, 0.3)
    np.testing.assert_allclose(state.terminal, 0.3)


def test_decaying_kernel_matches_direct_sum():
    grid = build_grid(1.0, 2.0, 8)
    paths = sample_driver(grid, LevyModel.pure_brownian(), 4, seed=1)
    problem = build_problem("volterra_lq", {"rate": 2.0, "sigma": 0.0})
    state = solve_forward(problem.coeffs, ControlField.constant(0.5), 0.0, paths, grid)
    t = grid.points
    expected = [1.0 + 0.5 * sum(math.exp(-2.0 * (t[k] - t[j])) * grid.dt for j in range(k)) for k in range(9)]
    np.testing.assert_allclose(state.X[0], expected, rtol=1e-12)


def test_control_leaving_bounds_is_rejected(lq_setup):
    grid, paths, problem = lq_setup
    with pytest.raises(ControlBoundsError):
        solve_forward(problem.coeffs, ControlField.constant(2.0, bounds=(0.0, 1.0)), 0.0, paths, grid)


def test_variational_process_of_lq(lq_setup):
    grid, paths, problem = lq_setup
    base = ControlField.constant(0.2)
    state = solve_forward(problem.coeffs, base, 0.0, paths, grid)
    direction = admissible_direction(base, ControlField.constant(1.0))
    chi = solve_variational(problem.coeffs, base, direction, 0.0, paths, grid, state)
    np.testing.assert_allclose(chi.X[:, -1], 1.0, atol=1e-12)
    np.testing.assert_allclose(chi.U, 1.0)


def test_admissible_direction_shrinks_near_the_boundary(lq_setup):
    grid, paths, problem = lq_setup
    base = ControlField.constant(0.9, bounds=(0.0, 1.0))
    state = solve_forward(problem.coeffs, base, 0.0, paths, grid)
    direction = admissible_direction(base, ControlField.constant(1.0))
    np.testing.assert_allclose(direction_values(direction, state, paths), 0.05)


def test_piecewise_control(lq_setup):
    grid, paths, problem = lq_setup
    control = ControlField.piecewise([0.5], [1.0, -1.0])
    state = solve_forward(problem.coeffs, control, 0.0, paths, grid)
    assert state.X[0, 4] == pytest.approx(0.5)
    assert state.X[0, -1] == pytest.approx(0.0, abs=1e-12)
    assert control.params == (1.0, -1.0)
    with pytest.raises(ConfigurationError):
        ControlField.piecewise([0.5], [1.0])


def test_z_column_shapes():
    assert z_column(0.5, 3).shape == (3, 1)
    assert z_column(np.arange(3.0), 3)[:, 0].tolist() == [0.0, 1.0, 2.0]
    with pytest.raises(ConfigurationError):
        z_column(np.arange(4.0), 3)


def test_state_frame(lq_setup):
    grid, paths, problem = lq_setup
    state = solve_forward(problem.coeffs, ControlField.constant(0.3), 0.25, paths, grid)
    frame = state.to_frame([0, 2])
    assert list(frame.columns) == ["scenario", "t", "z", "X"]
    assert len(frame) == 2 * (grid.n_steps + 1)
    assert set(frame["z"]) == {0.25}


def test_coefficient_dependence_detection():
    assert build_problem("log_market").coeffs.depends_on("x")
    assert not build_problem("lq").coeffs.depends_on("x")
    assert build_problem("volterra_lq").coeffs.depends_on("t")
    assert not build_problem("lq").coeffs.depends_on("t")
