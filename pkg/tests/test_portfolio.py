import math

import numpy as np
import pytest

from app.core.errors import BracketError, ConfigurationError, JumpModelError, MarketSpecError, NegativeWealthError
from app.services import acceptance, portfolio
from app.services.paths import LevyModel, build_grid, sample_driver
from app.services.portfolio import (
    LogUtility,
    PowerUtility,
    aggregate_over_z,
    insider_value,
    martingale_fields,
    merton_value,
    solve_c,
    solve_portfolio,
    terminal_wealth,
    wealth_path,
)
from app.services.presets import build_market
from tests.conftest import GaussianSetup


def constant(value):
    return {"name": "constant", "params": {"value": value}}


@pytest.mark.parametrize("utility", [LogUtility(), PowerUtility(0.5), PowerUtility(-2.0)])
def test_inverse_marginal_utility(utility):
    x = np.array([0.5, 1.0, 3.0])
    np.testing.assert_allclose(utility.inverse_marginal(utility.marginal(x)), x, rtol=1e-12)


@pytest.mark.parametrize("gamma", [1.0, 0.0, 1.5])
def test_power_utility_rejects_gamma(gamma):
    with pytest.raises(MarketSpecError):
        PowerUtility(gamma)


def test_market_validation():
    grid = build_grid(0.5, 1.0, 8)
    with pytest.raises(MarketSpecError):
        build_market(constant(0.0), constant(0.0), 1.0, 0.5).validate(grid)
    with pytest.raises(MarketSpecError):
        build_market(constant(0.0), constant(1.0), -1.0, 0.5)
    market = build_market(constant(0.1), constant(0.5), 1.0, 0.5)
    assert market.validate(grid) is market
    assert market.merton_fraction(0.2) == pytest.approx(0.4)


def test_jumps_are_refused(jump_levy):
    grid = build_grid(0.5, 1.0, 8)
    paths = sample_driver(grid, jump_levy, 10, seed=1)
    market = build_market(constant(0.0), constant(1.0), 1.0, 0.5)
    with pytest.raises(JumpModelError):
        martingale_fields(market, None, paths, grid, 0.0)


def test_exponential_representation_of_the_field(gaussian):
    market = build_market(constant(0.0), constant(1.0), 1.0, 0.5)
    fields = martingale_fields(market, gaussian.field, gaussian.paths, gaussian.grid, 0.0)
    np.testing.assert_array_equal(fields.log_y, 0.0)
    error = np.sqrt(np.mean((fields.log_m[:, -1] - fields.log_m_exponential[:, -1]) ** 2))
    assert error < 0.1


def test_budget_constant_without_drift(gaussian):
    market = build_market(constant(0.0), constant(1.0), 2.0, 0.5)
    fields = martingale_fields(market, gaussian.field, gaussian.paths, gaussian.grid, 0.3)
    budget = solve_c(market, 0.3, fields, gaussian.paths, gaussian.grid)
    assert not budget.nested
    assert terminal_wealth(market, budget.c, fields).mean() == pytest.approx(2.0, rel=1e-5)
    with pytest.raises(BracketError):
        solve_c(market, 0.3, fields, gaussian.paths, gaussian.grid, bracket=(10.0, 100.0))
    with pytest.raises(BracketError):
        solve_c(market, 0.3, fields, gaussian.paths, gaussian.grid, bracket=(0.0, 1.0))
    with pytest.raises(ConfigurationError):
        terminal_wealth(market, -1.0, fields)


def test_insider_log_value():
    setup = GaussianSetup(n=4000, N=32, seed=31)
    market = build_market(constant(0.0), constant(1.0), 1.0, 0.5)
    z_nodes = np.linspace(-4.0, 4.0, 9)
    c_values = []
    for z in z_nodes:
        fields = martingale_fields(market, setup.field, setup.paths, setup.grid, float(z))
        c_values.append(solve_c(market, float(z), fields, setup.paths, setup.grid).c)
    value, se, terminal = insider_value(market, setup.field, setup.paths, setup.grid, z_nodes, c_values)
    exact = 0.5 * math.log(2.0)
    assert abs(value - exact) < 4.0 * se + 0.03
    assert terminal.min() > 0


def test_portfolio_formula_detects_wrong_market_price_of_risk(monkeypatch):
    baseline, wealth = acceptance.insider_portfolio_formula(n=2000, N=16, nodes=3, window=0.5)
    assert baseline.value < 0.2
    assert wealth > 0

    original = portfolio.theta0
    monkeypatch.setattr(portfolio, "theta0", lambda market, t, z: -original(market, t, z))
    try:
        mutated, _ = acceptance.insider_portfolio_formula(n=2000, N=16, nodes=3, window=0.5)
    except NegativeWealthError:
        return
    assert not mutated.passed
    assert mutated.value > 0.5




def test_portfolio_formula_at_battery_sizes():
    result, wealth = acceptance.insider_portfolio_formula()
    assert wealth > 0
    assert result.passed, result.detail


def test_bsvie_wealth_stays_positive_across_signal_window():
    setup = GaussianSetup(n=1000, N=32, seed=109)
    market = build_market(constant(0.5), constant(1.0), 1.0, 0.5)
    for z in np.linspace(-1.5, 1.5, 5):
        solution = solve_portfolio(market, setup.field, float(z), setup.paths, setup.grid)
        assert solution.bsvie.X_hat.min() > 0
        assert np.all(np.isfinite(solution.portfolio.pi_hat))


def test_wealth_matches_exponential_representation():
    grid = build_grid(1.0, 2.0, 32)
    paths = sample_driver(grid, LevyModel.pure_brownian(), 500, seed=4)
    market = build_market(constant(0.05), constant(0.3), 1.0, 1.0)
    report = wealth_path(market, np.full((500, 33), 0.5), 0.0, paths, grid)
    assert report.min_wealth > 0
    assert report.representation_residual < 0.05
    with pytest.raises(ConfigurationError):
        wealth_path(market, np.full((500, 33), np.nan), 0.0, paths, grid)


def test_merton_value_without_drift_is_zero():
    grid = build_grid(1.0, 2.0, 8)
    paths = sample_driver(grid, LevyModel.pure_brownian(), 100, seed=4)
    market = build_market(constant(0.0), constant(0.4), 1.0, 1.0)
    value, se, report = merton_value(market, paths, grid)
    assert value == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(report.state.X, 1.0)


def test_aggregate_over_z():
    values = [np.zeros((3, 2)), np.ones((3, 2))]
    result = aggregate_over_z([0.0, 1.0], values, np.array([0.0, 0.25, 2.0]))
    np.testing.assert_allclose(result[:, 0], [0.0, 0.25, 1.0])
    np.testing.assert_array_equal(aggregate_over_z([0.5], values[:1], np.array([0.1, 0.2, 0.3])), values[0])
