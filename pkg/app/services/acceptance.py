"""
Acceptance battery: property and oracle checks at desk scale, pinned seeds.

Each criterion is a function returning a ``CheckResult``; the size keywords
default to the full-scale battery and may be reduced for quick runs.
"""
from __future__ import annotations

import logging
import math
import time
from typing import Callable, Sequence

import numpy as np
from tqdm import tqdm

from app.core.config import settings
from app.core.errors import VolterraError
from app.schemas.reports import CheckResult, RunReport
from app.services import maxprin, portfolio
from app.services.adjoint import closed_form_adjoint, duality_sides, solve_adjoint_bsde
from app.services.chaos import ChaosSpec, SignalPaths, remaining_variance, simulate_signal
from app.services.donsker import DonskerField, NeutralField, QuadratureSpec
from app.services.paths import DriverPaths, LevyModel, TimeGrid, build_grid, sample_driver
from app.services.presets import build_chaos, build_market, build_problem
from app.services.svie import ControlField, admissible_direction, solve_forward
from app.utils.numerics import mean_and_se

logger = logging.getLogger(__name__)

UNIT_BETA = {"name": "constant", "params": {"value": 1.0}}


def _constant(value: float) -> dict:
    return {"name": "constant", "params": {"value": value}}


def _gaussian_setup(T: float, T0: float, N: int, n: int, seed: int, antithetic: bool = False,
                    method: str = "auto") -> tuple[TimeGrid, DriverPaths, ChaosSpec, SignalPaths, DonskerField]:
    """Z = int_0^T0 dB, no jumps."""
    grid = build_grid(T, T0, N)
    paths = sample_driver(grid, LevyModel.pure_brownian(), n, seed, settings.THREADS, antithetic)
    spec = build_chaos(UNIT_BETA, None, T0)
    signal = simulate_signal(spec, paths, grid)
    return grid, paths, spec, signal, DonskerField(spec, paths.levy, signal, method=method)


def closed_form_agreement(n: int = 20, seed: int = 101) -> CheckResult:
    """Quadrature vs Gaussian closed form over z in [-4, 4], t = 0, .1, ..., .9."""
    grid, paths, spec, signal, closed = _gaussian_setup(0.9, 1.0, 9, n, seed, method="closed_form")
    quad = DonskerField(spec, paths.levy, signal, QuadratureSpec(n_nodes=settings.QUADRATURE_NODES),
                        method="quadrature")
    z = np.linspace(-4.0, 4.0, 81)
    error = 0.0
    for t in grid.points:
        error = max(error, float(np.max(np.abs(quad.density(t, z, grid=True) - closed.density(t, z, grid=True)))))
    return CheckResult(name="1.donsker_closed_form", passed=error < 1e-8, value=error, threshold=1e-8,
                       detail="max |M_quadrature - M_closed|")


def normalization(n: int = 200, seed: int = 102, scenarios: int = 5, times: int = 5) -> CheckResult:
    """|int M dz - 1| on a +-8 sigma window with 400 nodes."""
    grid, paths, spec, signal, field = _gaussian_setup(0.5, 1.0, 32, n, seed, method="quadrature")
    rng = np.random.default_rng(seed)
    picks = rng.choice(n, size=min(scenarios, n), replace=False)
    steps = np.linspace(0, grid.n_steps, times).round().astype(int)
    worst = 0.0
    for k in steps:
        t = float(grid.points[k])
        sd = math.sqrt(sum(remaining_variance(spec, t, paths.levy, grid)))
        for i in picks:
            z = np.linspace(signal.values[i, k] - 8.0 * sd, signal.values[i, k] + 8.0 * sd, 400)
            mass = float(np.trapezoid(field.density(t, z, grid=True)[i], z))
            worst = max(worst, abs(mass - 1.0))
    return CheckResult(name="2.normalization", passed=worst < 1e-3, value=worst, threshold=1e-3,
                       detail="max |int M dz - 1| over 5 scenarios x 5 times")


def donsker_reproduction(n: int = 10_000, seed: int = 103,
                         times: Sequence[float] = (0.0, 0.125, 0.25, 0.375, 0.5)) -> CheckResult:
    """E[int g M(t, z) dz] against E[g(Z)] for g = z and z^2 at several grid times."""
    grid, paths, spec, signal, field = _gaussian_setup(0.5, 1.0, 32, n, seed)
    sd = math.sqrt(sum(remaining_variance(spec, 0.0, paths.levy)))
    z = np.linspace(-10.0 * sd, 10.0 * sd, 1601)
    worst, worst_t = 0.0, float(times[0])
    for t in times:
        density = field.density(float(t), z, grid=True)
        for g in (lambda v: v, lambda v: v ** 2):
            integrated = np.trapezoid(density * g(z)[None, :], z, axis=1)
            _, se = mean_and_se(integrated - g(signal.terminal))
            gap = abs(float(integrated.mean() - g(signal.terminal).mean())) / max(float(se), 1e-300)
            if gap > worst:
                worst, worst_t = gap, float(t)
    return CheckResult(name="3.donsker_reproduction", passed=worst < 3.0, value=worst, threshold=3.0,
                       detail=f"|E[int g M dz] - E[g(Z)]| in standard errors, g in {{z, z^2}}, "
                              f"t in {[float(t) for t in times]}; worst at t={worst_t:g}")


def duality(n: int = 10_000, seed: int = 104, N: int = 32) -> CheckResult:
    """Both sides of the duality identity against T^2 / 2 at T = 1."""
    grid = build_grid(1.0, 2.0, N)
    paths = sample_driver(grid, LevyModel.pure_brownian(), n, seed, settings.THREADS)
    report = duality_sides(paths, grid)
    exact = 0.5
    # the right side is nearly deterministic for p = B; keep a floor under its standard error
    bound_lhs = 3.0 * report.lhs_se
    bound_rhs = 3.0 * report.rhs_se + 1e-6
    worst = max(abs(report.lhs - exact) / bound_lhs, abs(report.rhs - exact) / bound_rhs)
    return CheckResult(name="4.duality", passed=worst <= 1.0, value=worst, threshold=1.0,
                       detail=f"lhs {report.lhs:.4f} +- {report.lhs_se:.4f}, rhs {report.rhs:.4f} "
                              f"+- {report.rhs_se:.2e}, exact {exact}; value is the gap over 3 SE")


def adjoint_oracle(n: int = 10_000, seed: int = 105, N: int = 64, nodes: int = 9) -> CheckResult:
    """Regression adjoint vs closed form p = slope * M on an x-free model."""
    grid, paths, spec, signal, field = _gaussian_setup(0.5, 1.0, N, n, seed)
    problem = build_problem("linear_terminal", {"slope": 1.0})
    control = ControlField.constant(0.3)
    sq_error, sq_norm = 0.0, 0.0
    for z in np.linspace(-2.0, 2.0, nodes):
        state = solve_forward(problem.coeffs, control, float(z), paths, grid, signal)
        triple = solve_adjoint_bsde(problem.coeffs, problem.perf, control, state, field, float(z), paths, grid)
        exact, _ = closed_form_adjoint(1.0, field, float(z))
        sq_error += float(np.mean((triple.p - exact) ** 2))
        sq_norm += float(np.mean(exact ** 2))
    rel = math.sqrt(sq_error / sq_norm)
    return CheckResult(name="5.adjoint_oracle", passed=rel < 5e-2, value=rel, threshold=5e-2,
                       detail=f"relative RMSE of p over {nodes} z-nodes")


def gateaux_consistency(n: int = 4000, seed: int = 106, N: int = 32) -> CheckResult:
    """chi route vs finite differences on three models, one with a time-dependent kernel."""
    grid, paths, spec, signal, field = _gaussian_setup(0.5, 1.0, N, n, seed)
    cases = [
        (build_problem("lq"), 0.2),
        (build_problem("linear_terminal", {"penalty": 0.5}), 0.4),
        (build_problem("volterra_lq", {"rate": 1.0, "sigma": 0.2}), 0.3),
    ]
    failures, worst = [], 0.0
    for problem, level in cases:
        base = ControlField.constant(level, (-1.0, 1.0))
        direction = admissible_direction(base, ControlField.constant(1.0))
        report = maxprin.gateaux_derivative(base, direction, problem.perf, problem.coeffs, field, 0.0, paths, grid)
        worst = max(worst, abs(report.chi_route - report.fd_route) / report.tolerance)
        if not report.agree:
            failures.append(problem.name)
    return CheckResult(name="6.gateaux_consistency", passed=not failures, value=worst, threshold=1.0,
                       detail=f"|chi - fd| / tolerance; failing: {failures or 'none'}")


def _necessary_at_oracle(problem, T: float, n: int, seed: int, N: int, displaced: float,
                         antithetic: bool) -> tuple[bool, bool, float]:
    grid = build_grid(T, 2.0 * T, N)
    paths = sample_driver(grid, LevyModel.pure_brownian(), n, seed, settings.THREADS, antithetic)
    field = NeutralField(grid, None, n)
    bounds = (-1.0, 1.0)
    search = maxprin.brute_force_optimize(problem.perf, problem.coeffs, field, [0.0], paths, grid,
                                          maxprin.constant_family(bounds, 41), settings.THREADS)
    at_optimum = maxprin.check_necessary(search.control, problem.perf, problem.coeffs, field, 0.0, paths, grid)
    moved = ControlField.constant(displaced, bounds)
    away = maxprin.check_necessary(moved, problem.perf, problem.coeffs, field, 0.0, paths, grid)
    return at_optimum.passed, not away.passed, float(search.control.params[0])


def necessary_condition(n: int = 2000, seed: int = 107, N: int = 16) -> CheckResult:
    """Necessary condition holds at the brute-force argmax and fails at displaced controls."""
    lq = _necessary_at_oracle(build_problem("lq"), 1.0, n, seed, N, 1.0, False)
    market = _necessary_at_oracle(build_problem("log_market", {"b0": 0.05, "sigma0": 0.5}), 2.0, n, seed, N,
                                  0.7, True)
    passed = all(lq[:2]) and all(market[:2])
    return CheckResult(name="7.necessary_condition", passed=passed, value=None, threshold=None,
                       detail=f"lq argmax {lq[2]:g} (holds {lq[0]}, fails displaced {lq[1]}); "
                              f"log market argmax {market[2]:g} (holds {market[0]}, fails displaced {market[1]})")


def insider_log_value(n: int = 10_000, seed: int = 108, N: int = 64, nodes: int = 9) -> tuple[CheckResult, float]:
    """E[ln X_hat(T)] - ln x0 against 1/2 ln(T0 / (T0 - T)) for b0 = 0, sigma0 = 1."""
    T, T0 = 0.5, 1.0
    grid, paths, spec, signal, field = _gaussian_setup(T, T0, N, n, seed)
    market = build_market(_constant(0.0), _constant(1.0), 1.0, T)
    z_nodes = np.linspace(-4.0, 4.0, nodes)
    c_values = []
    for z in z_nodes:
        fields = portfolio.martingale_fields(market, field, paths, grid, float(z))
        c_values.append(portfolio.solve_c(market, float(z), fields, paths, grid).c)
    value, se, terminal = portfolio.insider_value(market, field, paths, grid, z_nodes, c_values)
    exact = 0.5 * math.log(T0 / (T0 - T))
    distance = abs(value - exact) / se
    return CheckResult(name="8.insider_log_value", passed=distance < 3.0, value=distance, threshold=3.0,
                       detail=f"value {value:.5f} +- {se:.5f}, exact {exact:.5f}"), float(terminal.min())


def insider_portfolio_formula(n: int = 4000, seed: int = 109, N: int = 32, nodes: int = 5,
                              window: float = 1.5) -> tuple[CheckResult, float]:
    """
    pi_hat against b0/sigma0^2 + (z - B(t)) / (sigma0 (T0 - t)) with b0 != 0.

    Runs at n = 4000, N = 32 rather than the n = 10^4, N = 64 used by the
    other Monte Carlo criteria: the sweep costs one regression per step and
    z-node, and the 5% bound already holds at these sizes.
    """
    grid, paths, spec, signal, field = _gaussian_setup(0.5, 1.0, N, n, seed)
    market = build_market(_constant(0.5), _constant(1.0), 1.0, 0.5)
    z_nodes = np.linspace(-window, window, nodes)
    margin = 0.1 * (z_nodes[-1] - z_nodes[0])
    errors, min_wealth = [], math.inf
    for z in z_nodes:
        solution = portfolio.solve_portfolio(market, field, float(z), paths, grid)
        min_wealth = min(min_wealth, float(solution.X_hat.min()))
        if not z_nodes[0] + margin - 1e-12 <= z <= z_nodes[-1] - margin + 1e-12:
            continue
        analytic = portfolio.analytic_log_fraction(market, field, grid, float(z))
        errors.append(float(np.sqrt(np.mean((solution.pi_hat - analytic) ** 2) / np.mean(analytic ** 2))))
    worst = max(errors)
    return CheckResult(name="9.insider_portfolio_formula", passed=worst < 5e-2, value=worst, threshold=5e-2,
                       detail="relative RMSE of pi_hat on the central 80% of the z-window"), min_wealth


def euler_convergence(n: int = 4000, seed: int = 110, finest: int = 128, prior_min_wealth: float = math.inf,
                      pi: float = 0.5) -> CheckResult:
    """Strong error against the geometric closed form for N = finest/4, finest/2, finest; wealth positivity."""
    T = 1.0
    b0, sigma0 = 0.05, 0.3
    grid = build_grid(T, 2.0 * T, finest)
    fine = sample_driver(grid, LevyModel.pure_brownian(), n, seed, settings.THREADS)
    market = build_market(_constant(b0), _constant(sigma0), 1.0, T)
    exact = market.x0 * np.exp((b0 * pi - 0.5 * (sigma0 * pi) ** 2) * T + sigma0 * pi * fine.brownian_path()[:, -1])
    errors, min_wealth = [], prior_min_wealth
    for factor in (4, 2, 1):
        paths = fine.coarsen(factor) if factor > 1 else fine
        report = portfolio.wealth_path(market, np.full((n, paths.grid.n_steps + 1), pi), 0.0, paths, paths.grid)
        min_wealth = min(min_wealth, report.min_wealth)
        errors.append(float(np.mean(np.abs(report.state.terminal - exact))))
    rates = [math.log2(errors[i] / errors[i + 1]) for i in range(len(errors) - 1)]
    rate = float(np.mean(rates))
    passed = rate >= 0.4 and min_wealth > 0
    return CheckResult(name="10.wealth_positivity_and_convergence", passed=passed, value=rate, threshold=0.4,
                       detail=f"strong errors {[f'{e:.3e}' for e in errors]}, min wealth {min_wealth:.4g}")


def _criteria() -> dict[int, Callable[[dict], CheckResult]]:
    def eight(shared: dict) -> CheckResult:
        result, wealth = insider_log_value()
        shared["min_wealth"] = min(shared.get("min_wealth", math.inf), wealth)
        return result

    def nine(shared: dict) -> CheckResult:
        result, wealth = insider_portfolio_formula()
        shared["min_wealth"] = min(shared.get("min_wealth", math.inf), wealth)
        return result

    return {
        1: lambda shared: closed_form_agreement(),
        2: lambda shared: normalization(),
        3: lambda shared: donsker_reproduction(),
        4: lambda shared: duality(),
        5: lambda shared: adjoint_oracle(),
        6: lambda shared: gateaux_consistency(),
        7: lambda shared: necessary_condition(),
        8: eight,
        9: nine,
        10: lambda shared: euler_convergence(prior_min_wealth=shared.get("min_wealth", math.inf)),
    }


def validate_suite(only: Sequence[int] | None = None, progress: bool = True) -> RunReport:
    """Run the selected criteria (all by default) and collect them in one report."""
    registry = _criteria()
    selected = sorted(set(only)) if only else sorted(registry)
    unknown = [c for c in selected if c not in registry]
    if unknown:
        raise ValueError(f"unknown acceptance criteria {unknown}; available 1-{len(registry)}")
    checks, timings, shared = [], {}, {}
    for criterion in tqdm(selected, desc="acceptance", disable=not progress):
        start = time.perf_counter()
        try:
            result = registry[criterion](shared)
        except VolterraError as exc:
            logger.exception("criterion %d raised", criterion)
            result = CheckResult(name=f"{criterion}.error", passed=False, detail=f"{type(exc).__name__}: {exc}")
        timings[str(criterion)] = round(time.perf_counter() - start, 6)
        logger.info("criterion %s: %s (%s)", result.name, "pass" if result.passed else "FAIL", result.detail)
        checks.append(result)
    report = RunReport(name="validate", kind="validate", config={"criteria": selected}, checks=checks,
                       summary={"passed": sum(c.passed for c in checks), "total": len(checks)}, timings=timings)
    return report
