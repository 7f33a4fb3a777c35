import math
from dataclasses import replace

import numpy as np
import pytest

from app.core.errors import ConfigurationError, XDependenceError
from app.services.adjoint import (
    closed_form_adjoint,
    duality_sides,
    ensure_x_free,
    first_argument_dependence,
    hamiltonian,
    hamiltonian_h0,
    hamiltonian_h1,
    reduced_hamiltonian,
    solve_adjoint_bsde,
)
from app.services.paths import LevyModel, build_grid, sample_driver
from app.services.presets import build_problem
from app.services.regression import RegressionSpec
from app.services.svie import ControlField, solve_forward
from tests.conftest import GaussianSetup

SIGNAL_ONLY = RegressionSpec(degree=3, features=("signal",))


@pytest.fixture(scope="module")
def linear_terminal_adjoint():
    setup = GaussianSetup(n=2000, N=16, seed=21)
    problem = build_problem("linear_terminal", {"slope": 2.0})
    control = ControlField.constant(0.4)
    state = solve_forward(problem.coeffs, control, 0.0, setup.paths, setup.grid, setup.signal)
    adjoint = solve_adjoint_bsde(problem.coeffs, problem.perf, control, state, setup.field, 0.0,
                                 setup.paths, setup.grid, SIGNAL_ONLY)
    return setup, adjoint


def test_terminal_condition(linear_terminal_adjoint):
    setup, adjoint = linear_terminal_adjoint
    np.testing.assert_allclose(adjoint.p[:, -1], 2.0 * setup.field.path(0.0)[:, -1], rtol=1e-12)


def test_linear_terminal_adjoint_matches_closed_form(linear_terminal_adjoint):
    setup, adjoint = linear_terminal_adjoint
    p_exact, _ = closed_form_adjoint(2.0, setup.field, 0.0)
    error = np.sqrt(np.mean((adjoint.p - p_exact) ** 2)) / np.sqrt(np.mean(p_exact ** 2))
    assert error < 0.1
    assert not adjoint.lower_accuracy


def test_adjoint_frame(linear_terminal_adjoint):
    setup, adjoint = linear_terminal_adjoint
    frame = adjoint.to_frame([0, 1, 2])
    assert {"scenario", "t", "z", "p", "q"} <= set(frame.columns)
    assert len(frame) == 3 * (setup.grid.n_steps + 1)
    assert frame["q"].isna().sum() == 3


def test_neutral_lq_adjoint_and_hamiltonian(neutral):
    grid, paths, field = neutral
    problem = build_problem("lq")
    control = ControlField.constant(0.2)
    state = solve_forward(problem.coeffs, control, 0.0, paths, grid)
    adjoint = solve_adjoint_bsde(problem.coeffs, problem.perf, control, state, field, 0.0, paths, grid)
    np.testing.assert_allclose(adjoint.p, 1.0, atol=1e-10)
    np.testing.assert_allclose(adjoint.q, 0.0, atol=1e-10)
    evaluation = hamiltonian(3, state.X[:, 3], state.U[:, 3], 0.0, adjoint, np.ones(paths.n_scenarios),
                             problem.coeffs, problem.perf)
    np.testing.assert_allclose(evaluation.dh_du, 1.0 - 2.0 * 0.2, atol=1e-10)
    np.testing.assert_allclose(evaluation.h, 0.2 - 0.04, atol=1e-10)


def test_hamiltonian_h0_value():
    coeffs, perf = build_problem("lq").coeffs, build_problem("lq").perf
    value = hamiltonian_h0(0.5, 1.0, 0.3, 0.0, 1.0, 5.0, None, 1.0, coeffs, perf)
    assert float(value) == pytest.approx(-0.09 + 0.3)


def test_future_kernel_term_of_decaying_kernel():
    grid = build_grid(1.0, 2.0, 16)
    coeffs = build_problem("volterra_lq", {"rate": 1.0, "sigma": 0.0}).coeffs
    p_field = np.ones((3, grid.n_steps + 1))
    exact = 0.5 * (math.exp(-1.0) - 1.0)
    with_partial = hamiltonian_h1(0.0, 1.0, 0.5, 0.0, p_field, None, coeffs, grid)
    np.testing.assert_allclose(with_partial, exact, atol=5e-3)
    stieltjes = replace(coeffs, partials={k: v for k, v in coeffs.partials.items() if k != "b_t"})
    np.testing.assert_allclose(hamiltonian_h1(0.0, 1.0, 0.5, 0.0, p_field, None, stieltjes, grid), exact,
                               atol=1e-10)


def test_traces_required_when_sigma_depends_on_time():
    grid = build_grid(1.0, 2.0, 8)
    coeffs = build_problem("volterra_lq").coeffs
    with pytest.raises(ConfigurationError):
        hamiltonian_h1(0.0, 1.0, 0.5, 0.0, np.ones((2, 9)), None, coeffs, grid)


def test_first_argument_dependence():
    assert first_argument_dependence(build_problem("volterra_lq").coeffs) == {"b": True, "sigma": True, "gamma": False}
    assert not any(first_argument_dependence(build_problem("lq").coeffs).values())


def test_ensure_x_free():
    lq = build_problem("lq")
    ensure_x_free(lq.coeffs, lq.perf)
    market = build_problem("log_market")
    with pytest.raises(XDependenceError):
        ensure_x_free(market.coeffs, market.perf)


def test_reduced_hamiltonian_of_neutral_lq(neutral):
    grid, paths, field = neutral
    problem = build_problem("lq")
    state = solve_forward(problem.coeffs, ControlField.constant(0.3), 0.0, paths, grid)
    values = reduced_hamiltonian(0.5, 0.0, 0.5, state, field, problem.coeffs, problem.perf, paths, grid)
    np.testing.assert_allclose(values, 0.25, atol=1e-10)
    with pytest.raises(ConfigurationError):
        reduced_hamiltonian(0.5, 1.0, 0.5, state, field, problem.coeffs, problem.perf, paths, grid)


def test_duality_of_brownian_motion():
    grid = build_grid(1.0, 2.0, 16)
    paths = sample_driver(grid, LevyModel.pure_brownian(), 4000, seed=13)
    report = duality_sides(paths, grid)
    assert report.lhs == pytest.approx(0.5, abs=4.0 * report.lhs_se + 0.02)
    assert report.rhs == pytest.approx(0.5, abs=4.0 * report.rhs_se + 0.02)
    assert abs(report.difference) < 0.1
