"""
Experiment orchestration shared by the CLI and the HTTP surface.

Layout of a run: <out>/<name>/report.json, <out>/<name>/timings.json and
<out>/<name>/fields/*.csv.
"""
from __future__ import annotations

import json
import logging
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import pandas as pd

from app.core.config import settings
from app.core.errors import ConfigurationError, XDependenceError
from app.schemas.experiment import ExperimentConfig, ExperimentKind
from app.schemas.reports import CheckResult, RunReport
from app.services import maxprin, portfolio
from app.services.adjoint import closed_form_adjoint, ensure_x_free, solve_adjoint_bsde
from app.services.chaos import ChaosSpec, SignalPaths, remaining_variance, simulate_signal
from app.services.donsker import DonskerField, NeutralField, QuadratureSpec, export_field
from app.services.paths import DriverPaths, LevyModel, TimeGrid, build_grid, sample_driver
from app.services.presets import ControlProblem, build_chaos, build_market, build_problem
from app.services.regression import RegressionSpec
from app.services.svie import ControlField, admissible_direction, solve_forward
from app.utils.exporters import config_hash, write_csv, write_json
from app.utils.numerics import evaluate, mean_and_se

logger = logging.getLogger(__name__)


@dataclass
class Environment:
    config: ExperimentConfig
    grid: TimeGrid
    levy: LevyModel
    paths: DriverPaths
    chaos: ChaosSpec | None
    signal: SignalPaths | None
    donsker: DonskerField | NeutralField
    regression: RegressionSpec
    threads: int

    @property
    def insider(self) -> bool:
        return self.chaos is not None


@dataclass
class Outcome:
    checks: list[CheckResult] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)
    frames: dict[str, pd.DataFrame] = field(default_factory=dict)

    def check(self, name: str, passed: bool, value: float | None = None, threshold: float | None = None,
              detail: str = "") -> None:
        self.checks.append(CheckResult(name=name, passed=bool(passed), value=_number(value),
                                       threshold=_number(threshold), detail=detail))


def _number(value: Any) -> Any:
    if value is None:
        return None
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_number(v) for v in np.asarray(value).tolist()]
    value = float(value)
    return value if math.isfinite(value) else None


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as handle:
        return ExperimentConfig.model_validate(json.load(handle))


def build_environment(config: ExperimentConfig) -> Environment:
    grid = build_grid(config.grid.T, config.grid.T0, config.grid.N)
    levy = LevyModel.from_marks(config.levy.intensity, config.levy.marks) if config.levy.intensity > 0 \
        else LevyModel.pure_brownian()
    mc = config.monte_carlo
    paths = sample_driver(grid, levy, mc.n_scenarios, mc.seed, mc.threads, mc.antithetic)
    regression = RegressionSpec(
        degree=config.regression.degree,
        features=tuple(config.regression.features),
        g_features=tuple(config.regression.g_features) if config.regression.g_features else None,
    )
    if config.chaos.insider:
        spec = build_chaos(config.chaos.beta.model_dump(),
                           config.chaos.psi.model_dump() if config.chaos.psi else None, config.grid.T0)
        signal = simulate_signal(spec, paths, grid)
        quad = QuadratureSpec(n_nodes=config.quadrature.nodes, envelope=config.quadrature.envelope)
        donsker = DonskerField(spec, levy, signal, quad, method=config.quadrature.method,
                               density_floor=config.tolerances.density_floor)
    else:
        spec, signal = None, None
        donsker = NeutralField(grid, None, paths.n_scenarios)
    logger.info("environment: %d scenarios, N=%d, T=%g, T0=%g, insider=%s, jumps=%s",
                paths.n_scenarios, grid.n_steps, grid.horizon, grid.insider_horizon, spec is not None, levy.active)
    return Environment(config, grid, levy, paths, spec, signal, donsker, regression, mc.threads)


def z_nodes(env: Environment) -> np.ndarray:
    zc = env.config.z_grid
    if zc.nodes == 1:
        return np.array([zc.center])
    window = zc.window
    if window is None:
        if env.chaos is not None:
            v_b, v_n = remaining_variance(env.chaos, 0.0, env.levy)
            window = 4.0 * math.sqrt(v_b + v_n)
        else:
            window = 1.0
    return np.linspace(zc.center - window, zc.center + window, zc.nodes)


def _export_scenarios(env: Environment) -> np.ndarray:
    return np.arange(min(settings.EXPORT_SCENARIOS, env.paths.n_scenarios))


def _subset_signal(signal: SignalPaths, scenarios: np.ndarray) -> SignalPaths:
    return SignalPaths(values=signal.values[scenarios], terminal=signal.terminal[scenarios],
                       horizon_step=signal.horizon_step, grid=signal.grid)


def _require_insider(env: Environment, what: str) -> None:
    if not env.insider:
        raise ConfigurationError(f"{what} needs chaos.insider = true")


def _candidate(env: Environment) -> ControlField:
    control = env.config.control
    value = control.candidate if control.candidate is not None else 0.5 * sum(control.bounds)
    return ControlField.constant(value, control.bounds)


def _field_times(env: Environment, count: int = 5) -> list[float]:
    grid = env.grid
    usable = [float(t) for t in grid.points if t < grid.insider_horizon - 1e-12]
    picks = np.unique(np.linspace(0, len(usable) - 1, min(count, len(usable))).round().astype(int))
    return [usable[i] for i in picks]


def run_simulate(env: Environment) -> Outcome:
    out = Outcome()
    problem = build_problem(env.config.model.name, env.config.model.params)
    control = _candidate(env)
    z = env.config.z_grid.center
    state = solve_forward(problem.coeffs, control, z, env.paths, env.grid, env.signal)
    scenarios = _export_scenarios(env)
    B = env.paths.brownian_path()
    frame = pd.DataFrame({
        "scenario": np.repeat(scenarios, env.grid.n_steps + 1),
        "t": np.tile(env.grid.points, scenarios.size),
        "B": B[scenarios].ravel(),
    })
    if env.signal is not None:
        frame["Z"] = env.signal.values[scenarios].ravel()
    out.frames["paths"] = frame
    out.frames["state"] = state.to_frame(scenarios)

    terminal_b = B[:, -1]
    out.summary.update({
        "n_scenarios": env.paths.n_scenarios,
        "mean_B_T": float(terminal_b.mean()),
        "var_B_T": float(terminal_b.var(ddof=1)),
        "mean_X_T": float(state.terminal.mean()),
        "n_jumps": int(env.paths.jump_time.size),
        "control": control.name,
    })
    out.check("state_finite", bool(np.all(np.isfinite(state.X))))
    if env.signal is not None:
        v_b, v_n = remaining_variance(env.chaos, 0.0, env.levy, env.grid)
        sample_var = float(env.signal.terminal.var(ddof=1))
        tolerance = 4.0 * math.sqrt(2.0 / env.paths.n_scenarios)
        out.summary["var_Z_T0"] = sample_var
        out.check("signal_variance", abs(sample_var / (v_b + v_n) - 1.0) < tolerance,
                  abs(sample_var / (v_b + v_n) - 1.0), tolerance, "relative error of Var Z(T0)")
    return out


def run_donsker(env: Environment) -> Outcome:
    _require_insider(env, "the donsker experiment")
    out = Outcome()
    nodes = z_nodes(env)
    scenarios = _export_scenarios(env)
    times = _field_times(env)
    small = _subset_signal(env.signal, scenarios)
    field_small = DonskerField(env.chaos, env.levy, small, env.donsker.quad, method=env.config.quadrature.method,
                               density_floor=env.donsker.density_floor)
    out.frames["donsker"] = export_field(field_small, times, nodes, np.arange(scenarios.size))

    v_b, v_n = remaining_variance(env.chaos, 0.0, env.levy)
    mass = []
    for t in times:
        k = env.grid.index_of(t)
        sd = math.sqrt(sum(remaining_variance(env.chaos, t, env.levy, env.grid)))
        centres = small.values[:, k]
        wide = np.linspace(centres.min() - 8.0 * sd, centres.max() + 8.0 * sd, 801)
        mass.append(np.trapezoid(field_small.density(t, wide, grid=True), wide, axis=1))
    worst = float(np.max(np.abs(np.asarray(mass) - 1.0)))
    out.check("normalization", worst < 1e-3, worst, 1e-3, "max |int M dz - 1| over scenarios and times")

    if field_small.gaussian:
        quad = DonskerField(env.chaos, env.levy, small, env.donsker.quad, method="quadrature")
        closed = DonskerField(env.chaos, env.levy, small, env.donsker.quad, method="closed_form")
        error = max(float(np.max(np.abs(quad.density(t, nodes, grid=True) - closed.density(t, nodes, grid=True))))
                    for t in times)
        out.check("closed_form_agreement", error < 1e-8, error, 1e-8, "quadrature vs Gaussian closed form")

    m0 = field_small.unconditional_density(nodes)
    out.summary.update({
        "z_nodes": nodes.tolist(),
        "times": times,
        "unconditional_density": m0.tolist(),
        "gaussian": bool(field_small.gaussian),
        "remaining_variance_0": [v_b, v_n],
    })
    return out


def _linear_terminal_slope(problem: ControlProblem, z: float) -> float | None:
    """g_x when the model is x-free with f = 0 and g linear, else None."""
    try:
        ensure_x_free(problem.coeffs, problem.perf)
    except XDependenceError:
        return None
    probes = np.linspace(-2.0, 2.0, 7)
    f = evaluate(problem.perf.f, probes.shape, 0.3, probes, probes, z)
    slopes = evaluate(problem.perf.partial("g", "x"), probes.shape, probes, z)
    if np.any(f != 0.0) or np.ptp(slopes) > 1e-9 * (1.0 + np.abs(slopes).max()):
        return None
    return float(slopes[0])


def run_adjoint(env: Environment) -> Outcome:
    out = Outcome()
    problem = build_problem(env.config.model.name, env.config.model.params)
    control = _candidate(env)
    scenarios = _export_scenarios(env)
    frames, p0, errors = [], [], []
    lower_accuracy = False
    for z in z_nodes(env):
        state = solve_forward(problem.coeffs, control, float(z), env.paths, env.grid, env.signal)
        triple = solve_adjoint_bsde(problem.coeffs, problem.perf, control, state, env.donsker, float(z),
                                    env.paths, env.grid, env.regression)
        lower_accuracy |= triple.lower_accuracy
        frames.append(triple.to_frame(scenarios))
        p0.append(float(triple.p[:, 0].mean()))
        expected = evaluate(problem.perf.partial("g", "x"), (env.paths.n_scenarios,), state.terminal, float(z)) \
            * env.donsker.path(float(z))[:, -1]
        terminal_gap = float(np.max(np.abs(triple.p[:, -1] - expected)))
        out.check(f"terminal_condition[z={z:g}]", terminal_gap <= 1e-12, terminal_gap, 1e-12)
        slope = _linear_terminal_slope(problem, float(z))
        if slope is not None:
            p_exact, _ = closed_form_adjoint(slope, env.donsker, float(z))
            scale = float(np.sqrt(np.mean(p_exact ** 2)))
            rel = float(np.sqrt(np.mean((triple.p - p_exact) ** 2)) / scale) if scale > 0 else 0.0
            errors.append(rel)
            out.check(f"closed_form_adjoint[z={z:g}]", rel < 5e-2, rel, 5e-2, "relative RMSE of p")
    out.frames["adjoint"] = pd.concat(frames, ignore_index=True)
    out.summary.update({"z_nodes": z_nodes(env).tolist(), "mean_p0": p0, "lower_accuracy": lower_accuracy,
                        "model": problem.name, "control": control.name})
    if errors:
        out.summary["closed_form_rmse"] = errors
    return out


def _family(env: Environment) -> list[ControlField]:
    control = env.config.control
    if control.family == "constant":
        return maxprin.constant_family(control.bounds, control.points)
    if control.family == "piecewise":
        return maxprin.piecewise_family(control.bounds, env.grid.horizon)
    slopes = np.linspace(0.0, 1.0, 5)
    intercepts = np.linspace(control.bounds[0], control.bounds[1], 9)
    return maxprin.insider_affine_family(intercepts, slopes, env.grid.insider_horizon, control.bounds)


def run_check(env: Environment) -> Outcome:
    out = Outcome()
    cfg = env.config
    problem = build_problem(cfg.model.name, cfg.model.params)
    nodes = z_nodes(env)
    z = float(cfg.z_grid.center)
    search = maxprin.brute_force_optimize(problem.perf, problem.coeffs, env.donsker, nodes, env.paths, env.grid,
                                          _family(env), env.threads)
    candidate = ControlField.constant(cfg.control.candidate, cfg.control.bounds) \
        if cfg.control.candidate is not None else search.control
    direction = admissible_direction(candidate, ControlField.constant(cfg.control.direction))
    gateaux = maxprin.gateaux_derivative(candidate, direction, problem.perf, problem.coeffs, env.donsker, z,
                                         env.paths, env.grid, step=cfg.tolerances.fd_step, tol=cfg.tolerances.gateaux,
                                         hamiltonian_route=True, regression=env.regression)
    necessary = maxprin.check_necessary(candidate, problem.perf, problem.coeffs, env.donsker, z, env.paths, env.grid,
                                        tol=cfg.tolerances.foc, regression=env.regression)
    sufficient = maxprin.check_sufficient(candidate, problem.perf, problem.coeffs, env.donsker, z, env.paths,
                                          env.grid, tol=cfg.tolerances.foc, regression=env.regression)
    out.check("gateaux_agreement", gateaux.agree, abs(gateaux.chi_route - gateaux.fd_route), gateaux.tolerance)
    out.check("necessary_condition", necessary.passed, necessary.max_abs_foc, necessary.tolerance)
    for name, flag in sufficient.concavity_flags.items():
        out.check(f"sufficient.{name}", flag)
    out.summary.update({
        "search": search.to_dict(),
        "candidate": candidate.name,
        "gateaux": gateaux.to_dict(),
        "necessary": {"max_abs_foc": necessary.max_abs_foc, "tolerance": necessary.tolerance,
                      "curvature": necessary.curvature},
        "sufficient": {"flags": sufficient.concavity_flags, "shortfall": sufficient.max_abs_foc},
    })
    if cfg.control.family == "constant":
        u_star, j_star = maxprin.refine_constant(problem.perf, problem.coeffs, env.donsker, nodes, env.paths,
                                                 env.grid, search, cfg.control.bounds)
        out.summary["refined"] = {"u": u_star, "J": j_star}
        if problem.analytic_optimum is not None:
            cell = (cfg.control.bounds[1] - cfg.control.bounds[0]) / (cfg.control.points - 1)
            gap = abs(search.control.params[0] - problem.analytic_optimum)
            out.check("oracle_near_analytic_optimum", gap <= cell + 1e-12, gap, cell)
    out.frames["foc"] = pd.DataFrame({"t": necessary.times, "foc": necessary.foc[0]})
    return out


def run_portfolio(env: Environment) -> Outcome:
    out = Outcome()
    cfg = env.config
    market = build_market(cfg.market.b0.model_dump(), cfg.market.sigma0.model_dump(), cfg.market.x0,
                          env.grid.horizon, cfg.market.utility, cfg.market.gamma, cfg.market.c0)
    nodes = z_nodes(env) if env.insider else np.array([cfg.z_grid.center])
    market.validate(env.grid, nodes)
    solutions = [portfolio.solve_portfolio(market, env.donsker, float(z), env.paths, env.grid, env.regression,
                                           tuple(cfg.market.bracket)) for z in nodes]
    frames = []
    log_constant = market.utility.name == "log"
    analytic_errors = []
    for z, sol in zip(nodes, solutions):
        frame = pd.DataFrame({
            "t": env.grid.points[:-1],
            "z": float(z),
            "pi_hat": sol.pi_hat.mean(axis=0),
            "X_hat": sol.X_hat[:, :-1].mean(axis=0),
        })
        if log_constant:
            analytic = portfolio.analytic_log_fraction(market, env.donsker, env.grid, float(z))
            frame["pi_analytic"] = analytic.mean(axis=0)
            scale = float(np.sqrt(np.mean(analytic ** 2)))
            analytic_errors.append(float(np.sqrt(np.mean((sol.pi_hat - analytic) ** 2)) / scale) if scale else 0.0)
        frames.append(frame)
        residual = abs(sol.budget.residual)
        out.check(f"budget[z={z:g}]", residual < 1e-3 * market.x0, residual, 1e-3 * market.x0)
    out.frames["portfolio"] = pd.concat(frames, ignore_index=True)

    merton, merton_se, merton_wealth = portfolio.merton_value(market, env.paths, env.grid, float(cfg.z_grid.center))
    if env.insider:
        value, value_se, _ = portfolio.insider_value(market, env.donsker, env.paths, env.grid, nodes,
                                                     [s.c for s in solutions])
        realized = env.signal.terminal
        pi_realized = portfolio.aggregate_over_z(nodes, [s.pi_hat for s in solutions], realized)
        wealth = portfolio.wealth_path(market, pi_realized, realized, env.paths, env.grid, env.signal)
    else:
        sol = solutions[0]
        gains = market.utility.value(sol.terminal) - float(market.utility.value(market.x0))
        value, value_se = (float(v) for v in mean_and_se(gains))
        wealth = portfolio.wealth_path(market, sol.pi_hat, float(nodes[0]), env.paths, env.grid)
    bound = 3.0 * math.hypot(value_se, merton_se)
    out.check("insider_dominance", value >= merton - bound, value - merton, -bound)
    out.check("wealth_positive", wealth.min_wealth > 0 and merton_wealth.min_wealth > 0,
              min(wealth.min_wealth, merton_wealth.min_wealth), 0.0)
    if log_constant and analytic_errors:
        inner = _central(nodes, analytic_errors)
        out.check("analytic_log_fraction", max(inner) < 5e-2, max(inner), 5e-2,
                  "relative RMSE of pi_hat on the central z-nodes")
    out.summary.update({
        "z_nodes": nodes.tolist(),
        "c": [s.c for s in solutions],
        "value": value,
        "value_se": value_se,
        "merton_value": merton,
        "insider_gain": value - merton,
        "min_wealth": wealth.min_wealth,
        "representation_residual": wealth.representation_residual,
        "sensitivity": [s.portfolio.sensitivity for s in solutions],
        "mean_X_hat_0": [float(s.X_hat[:, 0].mean()) for s in solutions],
    })
    return out


def _central(nodes: np.ndarray, values: list[float], share: float = 0.8) -> list[float]:
    """Values on the central ``share`` of the z-window."""
    if nodes.size < 3:
        return values
    lo, hi = nodes[0], nodes[-1]
    margin = 0.5 * (1.0 - share) * (hi - lo)
    return [v for z, v in zip(nodes, values) if lo + margin - 1e-12 <= z <= hi - margin + 1e-12] or values


EXPERIMENTS: dict[ExperimentKind, Callable[[Environment], Outcome]] = {
    ExperimentKind.SIMULATE: run_simulate,
    ExperimentKind.DONSKER: run_donsker,
    ExperimentKind.ADJOINT: run_adjoint,
    ExperimentKind.CHECK: run_check,
    ExperimentKind.PORTFOLIO: run_portfolio,
}


@contextmanager
def _timed(timings: dict[str, float], stage: str):
    start = time.perf_counter()
    try:
        yield
    finally:
        timings[stage] = round(time.perf_counter() - start, 6)


def prepare_config(config: ExperimentConfig | dict | str | Path, kind: str | None = None, seed: int | None = None,
                   threads: int | None = None) -> ExperimentConfig:
    """Validated config with CLI-style overrides and the effective seed filled in."""
    if isinstance(config, (str, Path)):
        config = load_config(config)
    elif isinstance(config, dict):
        config = ExperimentConfig.model_validate(config)
    mc = config.monte_carlo.model_copy(update={
        "seed": seed if seed is not None else (config.monte_carlo.seed if config.monte_carlo.seed is not None
                                               else settings.DEFAULT_SEED),
        "threads": threads if threads is not None else config.monte_carlo.threads,
    })
    update: dict[str, Any] = {"monte_carlo": mc}
    if kind is not None:
        update["kind"] = ExperimentKind(kind)
    return ExperimentConfig.model_validate(config.model_copy(update=update).model_dump())


def run(
    config: ExperimentConfig | dict | str | Path,
    kind: str | None = None,
    out: str | Path | None = None,
    seed: int | None = None,
    threads: int | None = None,
    write: bool = True,
) -> RunReport:
    """Execute one experiment and write its artifacts."""
    config = prepare_config(config, kind, seed, threads)
    echo = config.model_dump(mode="json")
    digest = config_hash(echo)
    timings: dict[str, float] = {}
    logger.info("run '%s' (%s), config hash %s", config.name, config.kind.value, digest)
    with _timed(timings, "environment"):
        env = build_environment(config)
    with _timed(timings, config.kind.value):
        outcome = EXPERIMENTS[config.kind](env)

    report = RunReport(name=config.name, kind=config.kind.value, config=echo, config_hash=digest,
                       checks=outcome.checks, summary=_jsonable(outcome.summary), timings=timings)
    if write:
        run_dir = Path(out or settings.OUTPUT_DIR) / config.name
        for name, frame in sorted(outcome.frames.items()):
            relative = f"fields/{name}.csv"
            write_csv(frame, run_dir / relative, digest)
            report.artifacts[name] = relative
        report.artifacts["report"] = "report.json"
        report.artifacts["timings"] = "timings.json"
        write_json(report.deterministic_dump(), run_dir / "report.json")
        write_json(timings, run_dir / "timings.json")
        logger.info("wrote %s", run_dir)
    for check in report.checks:
        logger.info("check %s: %s", check.name, "pass" if check.passed else "FAIL")
    return report


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return _number(value)
    return value
