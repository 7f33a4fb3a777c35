"""
Maximum-principle checkers and the brute-force control oracle.

Performance of a control u at insider value z is

    j(u)(z) = E[ int_0^T f(t, X(t,z), u(t,z), z) M(t,z) dt + g(X(T,z), z) M(T,z) ],

and J(u) = int j(u)(z) dz by the trapezoid rule over the z-nodes.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Literal, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import minimize_scalar

from app.core.errors import ControlBoundsError, DiagnosticMismatch
from app.services.adjoint import (
    PerformanceSpec,
    first_argument_dependence,
    ensure_x_free,
    hamiltonian,
    reduced_hamiltonian_at,
    solve_adjoint_bsde,
)
from app.services.paths import DriverPaths, TimeGrid
from app.services.regression import Regressor, RegressionSpec
from app.services.svie import (
    CoefficientSet,
    ControlField,
    StateField,
    solve_forward,
    solve_variational,
    z_column,
)
from app.utils.numerics import evaluate, mean_and_se, trapezoid_weights

logger = logging.getLogger(__name__)

HamiltonianKind = Literal["full", "reduced"]
FD_STEP = 1e-3
CURVATURE_STEP = 1e-2
U_GRID_POINTS = 41
PROBE_TIMES = 16


@dataclass
class PerformanceReport:
    z_nodes: list[float] | None
    j_of_z: list[float]
    standard_errors: list[float]
    J: float
    control: str = "custom"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GateauxReport:
    chi_route: float
    fd_route: float
    chi_se: float
    fd_se: float
    tolerance: float
    agree: bool
    hamiltonian_route: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OptimalityReport:
    times: list[float]
    z_nodes: list[float]
    foc: list[list[float]] = field(default_factory=list)
    rms_foc: list[list[float]] = field(default_factory=list)
    max_abs_foc: float = 0.0
    tolerance: float = 0.0
    curvature: float = 0.0
    concavity_flags: dict[str, bool] = field(default_factory=dict)
    passed: bool = True
    hamiltonian: str = "full"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SearchResult:
    control: ControlField
    report: PerformanceReport
    values: list[float]
    standard_errors: list[float]
    names: list[str]
    argmax: int
    runner_up_gap: float

    def to_dict(self) -> dict:
        return {
            "control": self.control.name,
            "params": list(self.control.params),
            "J": self.report.J,
            "argmax": self.argmax,
            "runner_up_gap": self.runner_up_gap,
            "candidates": dict(zip(self.names, self.values)),
        }


def _signal(donsker):
    return getattr(donsker, "signal", None)


def _scenario_values(perf: PerformanceSpec, state: StateField, m_path: NDArray, grid: TimeGrid,
                     z: ArrayLike) -> NDArray[np.float64]:
    """sum_k f(t_k, X_k, U_k, z) M_k dt + g(X_N, z) M_N per scenario."""
    n, N = state.X.shape[0], grid.n_steps
    zc = z_column(z, n)
    t = grid.points[:N]
    running = evaluate(perf.f, (n, N), t[None, :], state.X[:, :N], state.U[:, :N], zc)
    terminal = evaluate(perf.g, (n,), state.terminal, zc[:, 0])
    return (running * m_path[:, :N]).sum(axis=1) * grid.dt + terminal * m_path[:, N]


def _z_weights(z_nodes: NDArray[np.float64]) -> NDArray[np.float64]:
    return trapezoid_weights(z_nodes) if z_nodes.size > 1 else np.ones(1)


def performance(
    perf: PerformanceSpec,
    control: ControlField,
    coeffs: CoefficientSet,
    donsker,
    z_nodes: ArrayLike,
    paths: DriverPaths,
    grid: TimeGrid,
) -> PerformanceReport:
    z_nodes = np.atleast_1d(np.asarray(z_nodes, dtype=float))
    signal = _signal(donsker)
    j, se = [], []
    for z in z_nodes:
        state = solve_forward(coeffs, control, float(z), paths, grid, signal)
        mean, err = mean_and_se(_scenario_values(perf, state, donsker.path(float(z)), grid, float(z)))
        j.append(float(mean))
        se.append(float(err))
    J = float(np.dot(_z_weights(z_nodes), j))
    return PerformanceReport(z_nodes=z_nodes.tolist(), j_of_z=j, standard_errors=se, J=J, control=control.name)


def realized_performance(
    perf: PerformanceSpec,
    control: ControlField,
    coeffs: CoefficientSet,
    signal,
    paths: DriverPaths,
    grid: TimeGrid,
) -> PerformanceReport:
    """E[int f dt + g] with z = Z(T0) substituted scenario by scenario; no M weights."""
    z = signal.terminal
    state = solve_forward(coeffs, control, z, paths, grid, signal)
    ones = np.ones_like(state.X)
    mean, err = mean_and_se(_scenario_values(perf, state, ones, grid, z))
    return PerformanceReport(z_nodes=None, j_of_z=[float(mean)], standard_errors=[float(err)], J=float(mean),
                             control=control.name)


def gateaux_derivative(
    control: ControlField,
    direction: ControlField,
    perf: PerformanceSpec,
    coeffs: CoefficientSet,
    donsker,
    z: float,
    paths: DriverPaths,
    grid: TimeGrid,
    step: float = FD_STEP,
    tol: float = 1e-2,
    hamiltonian_route: bool = False,
    regression: RegressionSpec | None = None,
    strict: bool = False,
) -> GateauxReport:
    """
    d/da j(u + a beta)(z) at a = 0 through the variational process chi and
    through a central difference with common random numbers.
    """
    signal = _signal(donsker)
    n, N = paths.n_scenarios, grid.n_steps
    zc = z_column(z, n)[:, 0]
    m_path = donsker.path(z)
    base = solve_forward(coeffs, control, z, paths, grid, signal)
    chi = solve_variational(coeffs, control, direction, z, paths, grid, base, signal)
    beta = chi.U

    t = grid.points[:N]
    f_x = evaluate(perf.partial("f", "x"), (n, N), t[None, :], base.X[:, :N], base.U[:, :N], zc[:, None])
    f_u = evaluate(perf.partial("f", "u"), (n, N), t[None, :], base.X[:, :N], base.U[:, :N], zc[:, None])
    g_x = evaluate(perf.partial("g", "x"), (n,), base.terminal, zc)
    chi_values = ((f_x * chi.X[:, :N] + f_u * beta[:, :N]) * m_path[:, :N]).sum(axis=1) * grid.dt \
        + g_x * chi.terminal * m_path[:, N]

    bumped = []
    for sign in (1.0, -1.0):
        shifted = ControlField.from_array(base.U + sign * step * beta, control.bounds, f"{control.name}{sign * step:+g}")
        state = solve_forward(coeffs, shifted, z, paths, grid, signal)
        bumped.append(_scenario_values(perf, state, m_path, grid, z))
    fd_values = (bumped[0] - bumped[1]) / (2.0 * step)

    chi_mean, chi_se = mean_and_se(chi_values)
    fd_mean, fd_se = mean_and_se(fd_values)
    _, diff_se = mean_and_se(chi_values - fd_values)
    tolerance = max(tol * max(1.0, abs(float(fd_mean))), 3.0 * float(fd_se), 3.0 * float(diff_se))
    agree = abs(float(chi_mean) - float(fd_mean)) <= tolerance
    route = None
    if hamiltonian_route:
        adjoint = solve_adjoint_bsde(coeffs, perf, control, base, donsker, z, paths, grid, regression)
        first_arg = first_argument_dependence(coeffs)
        total = np.zeros(n)
        for k in range(N):
            ev = hamiltonian(k, base.X[:, k], base.U[:, k], zc, adjoint, m_path[:, k], coeffs, perf,
                             paths.levy, first_arg)
            total += ev.dh_du * beta[:, k] * grid.dt
        route = float(total.mean())
    report = GateauxReport(chi_route=float(chi_mean), fd_route=float(fd_mean), chi_se=float(chi_se),
                           fd_se=float(fd_se), tolerance=tolerance, agree=agree, hamiltonian_route=route)
    if not agree:
        logger.warning("Gateaux routes disagree: chi %.6g vs finite difference %.6g (tol %.3g)",
                       report.chi_route, report.fd_route, tolerance)
        if strict:
            raise DiagnosticMismatch(f"Gateaux derivative routes disagree: {report.chi_route:.6g} "
                                     f"vs {report.fd_route:.6g}")
    return report


def _probe_steps(N: int, count: int = PROBE_TIMES) -> NDArray[np.int64]:
    return np.unique(np.linspace(0, N - 1, min(N, count)).round().astype(int))


class _HamiltonianProbe:
    """H and dH/du at grid step k for arbitrary (x, u), full or reduced."""

    def __init__(self, kind: HamiltonianKind, coeffs, perf, control, donsker, z, paths, grid, regression):
        self.kind = kind
        self.coeffs, self.perf = coeffs, perf
        self.paths, self.grid = paths, grid
        self.z = z
        self.regression = regression
        self.levy = paths.levy
        self.signal = _signal(donsker)
        self.donsker = donsker
        if kind == "reduced":
            ensure_x_free(coeffs, perf)
        self.state = solve_forward(coeffs, control, z, paths, grid, self.signal)
        self.m_path = donsker.path(z)
        self.zc = z_column(z, paths.n_scenarios)[:, 0]
        self.first_arg = first_argument_dependence(coeffs)
        self.adjoint = None
        self._reduced = {}
        if kind == "full":
            self.adjoint = solve_adjoint_bsde(coeffs, perf, control, self.state, donsker, z, paths, grid, regression)

    def _reduced_at(self, k: int):
        if k not in self._reduced:
            self._reduced[k] = reduced_hamiltonian_at(k, self.state, self.donsker, self.coeffs, self.perf,
                                                      self.paths, self.grid, self.regression, check=False)
        return self._reduced[k]

    def value(self, k: int, x, u) -> NDArray[np.float64]:
        if self.kind == "reduced":
            return self._reduced_at(k).value(u)
        return hamiltonian(k, x, u, self.zc, self.adjoint, self.m_path[:, k], self.coeffs, self.perf,
                           self.levy, self.first_arg).h

    def du(self, k: int, x, u) -> NDArray[np.float64]:
        if self.kind == "reduced":
            return self._reduced_at(k).derivative(u)
        return hamiltonian(k, x, u, self.zc, self.adjoint, self.m_path[:, k], self.coeffs, self.perf,
                           self.levy, self.first_arg).dh_du

    def curvature(self, k: int) -> float:
        x, u = self.state.X[:, k], self.state.U[:, k]
        h = CURVATURE_STEP
        second = (self.value(k, x, u + h) - 2.0 * self.value(k, x, u) + self.value(k, x, u - h)) / h ** 2
        return float(np.mean(np.abs(second)))

    def g_basis(self, k: int) -> tuple[NDArray[np.float64], Regressor]:
        regressor = Regressor(self.regression, label="g-filtration")
        B = self.paths.brownian_path()[:, k]
        Z = self.signal.values[:, k] if self.signal is not None else np.zeros_like(B)
        return regressor.basis({"state": self.state.X[:, k], "signal": Z, "brownian": B},
                               g_measurable=True), regressor


def _z_list(z: float | Sequence[float]) -> list[float]:
    return [float(v) for v in np.atleast_1d(np.asarray(z, dtype=float))]


def check_necessary(
    control: ControlField,
    perf: PerformanceSpec,
    coeffs: CoefficientSet,
    donsker,
    z: float | Sequence[float],
    paths: DriverPaths,
    grid: TimeGrid,
    tol: float = 1e-2,
    hamiltonian: HamiltonianKind = "full",
    regression: RegressionSpec | None = None,
) -> OptimalityReport:
    """
    E[dH/du | G_t] along the candidate, estimated by G-measurable regression.
    foc holds the largest |E[dH/du | G_t]| over scenarios per step, rms_foc the
    root mean square; pass/fail uses the former.
    The tolerance is scaled by max(1, |d2H/du2|) so pass/fail does not depend on model units.
    """
    N = grid.n_steps
    foc, rms, curvature = [], [], 0.0
    for zv in _z_list(z):
        probe = _HamiltonianProbe(hamiltonian, coeffs, perf, control, donsker, zv, paths, grid, regression)
        row, row_rms = [], []
        for k in range(N):
            dh_du = probe.du(k, probe.state.X[:, k], probe.state.U[:, k])
            basis, regressor = probe.g_basis(k)
            conditional = regressor.conditional(basis, dh_du)
            row.append(float(np.max(np.abs(conditional))))
            row_rms.append(float(np.sqrt(np.mean(conditional ** 2))))
        foc.append(row)
        rms.append(row_rms)
        curvature = max(curvature, max(probe.curvature(int(k)) for k in _probe_steps(N)))
    max_abs = float(np.max(foc)) if foc else 0.0
    tolerance = tol * max(1.0, curvature)
    passed = max_abs < tolerance
    logger.info("necessary condition (%s): max |E[dH/du|G]| = %.4g, tol %.3g -> %s",
                hamiltonian, max_abs, tolerance, "pass" if passed else "fail")
    return OptimalityReport(times=grid.points[:N].tolist(), z_nodes=_z_list(z), foc=foc, rms_foc=rms,
                            max_abs_foc=max_abs, tolerance=tolerance, curvature=curvature, passed=passed,
                            hamiltonian=hamiltonian)


def _chord_points(values: NDArray[np.float64]) -> NDArray[np.float64]:
    xs = np.unique(np.quantile(values, np.linspace(0.05, 0.95, 8)))
    if xs.size >= 3:
        return xs
    centre = float(np.mean(values))
    if centre == 0.0:
        return np.linspace(-1.0, 1.0, 5)
    return centre * np.linspace(0.5, 1.5, 5)


def _g_concave(perf: PerformanceSpec, terminal: NDArray, z: float, tol: float) -> bool:
    xs = _chord_points(terminal)
    left, right = xs[:-1], xs[1:]
    left, right = np.concatenate([left, xs[:-2]]), np.concatenate([right, xs[2:]])
    mid = evaluate(perf.g, left.shape, 0.5 * (left + right), z)
    chord = 0.5 * (evaluate(perf.g, left.shape, left, z) + evaluate(perf.g, left.shape, right, z))
    defect = mid - chord
    return bool(np.all(np.isfinite(defect)) and np.all(defect >= -tol * (1.0 + np.abs(chord))))


def _h_concave(probe: _HamiltonianProbe, k: int, bounds: tuple[float, float], tol: float) -> bool:
    x, u = probe.state.X[:, k], probe.state.U[:, k]
    dx = 0.1 * (1.0 + np.abs(x))
    du = 0.1 if math.isinf(bounds[0]) or math.isinf(bounds[1]) else 0.05 * (bounds[1] - bounds[0])
    shifts = [(dx, 0.0), (0.0, du), (dx, du), (dx, -du)]
    if probe.kind == "reduced":
        shifts = [(0.0, du), (0.0, 2 * du), (0.0, 3 * du)]
    for sx, su in shifts:
        ua, ub = np.clip(u - su, *bounds), np.clip(u + su, *bounds)
        xa, xb = x - sx, x + sx
        mid = probe.value(k, 0.5 * (xa + xb), 0.5 * (ua + ub))
        chord = 0.5 * (probe.value(k, xa, ua) + probe.value(k, xb, ub))
        defect = float(np.mean(mid - chord))
        if not math.isfinite(defect) or defect < -tol * (1.0 + float(np.mean(np.abs(chord)))):
            return False
    return True


def check_sufficient(
    control: ControlField,
    perf: PerformanceSpec,
    coeffs: CoefficientSet,
    donsker,
    z: float,
    paths: DriverPaths,
    grid: TimeGrid,
    tol: float = 1e-2,
    u_grid: ArrayLike | None = None,
    hamiltonian: HamiltonianKind = "full",
    regression: RegressionSpec | None = None,
) -> OptimalityReport:
    """Concavity of g and H, and the maximum condition E[H(w) | G_t] <= E[H(u) | G_t] over a grid of w."""
    probe = _HamiltonianProbe(hamiltonian, coeffs, perf, control, donsker, z, paths, grid, regression)
    bounds = control.bounds
    if u_grid is None:
        lo, hi = bounds
        if math.isinf(lo) or math.isinf(hi):
            centre = float(np.mean(probe.state.U))
            lo, hi = max(lo, centre - 1.0), min(hi, centre + 1.0)
        u_grid = np.linspace(lo, hi, U_GRID_POINTS)
    u_grid = np.asarray(u_grid, dtype=float)
    steps = _probe_steps(grid.n_steps)

    g_ok = _g_concave(perf, probe.state.terminal, z, tol)
    h_ok = all(_h_concave(probe, int(k), bounds, tol) for k in steps[:: max(1, steps.size // 3)])

    shortfall = 0.0
    for k in steps:
        x, u = probe.state.X[:, k], probe.state.U[:, k]
        candidates = np.column_stack([probe.value(k, x, np.full_like(u, w)) for w in u_grid])
        targets = np.column_stack([probe.value(k, x, u), candidates])
        basis, regressor = probe.g_basis(int(k))
        conditional = regressor.conditional(basis, targets)
        gap = np.maximum(conditional[:, 1:].max(axis=1) - conditional[:, 0], 0.0)
        shortfall = max(shortfall, float(gap.mean()))
    curvature = max(probe.curvature(int(k)) for k in steps)
    tolerance = tol * max(1.0, curvature)
    max_ok = shortfall <= tolerance
    flags = {"g_concave": g_ok, "h_concave": h_ok, "maximum_condition": max_ok}
    logger.info("sufficient conditions (%s): %s, max shortfall %.4g", hamiltonian, flags, shortfall)
    return OptimalityReport(times=grid.points[steps].tolist(), z_nodes=[float(z)], foc=[], max_abs_foc=shortfall,
                            tolerance=tolerance, curvature=curvature, concavity_flags=flags,
                            passed=all(flags.values()), hamiltonian=hamiltonian)


def constant_family(bounds: tuple[float, float], points: int = U_GRID_POINTS) -> list[ControlField]:
    return [ControlField.constant(float(u), bounds) for u in np.linspace(bounds[0], bounds[1], points)]


def piecewise_family(bounds: tuple[float, float], horizon: float, pieces: int = 3, levels: int = 5) -> list[ControlField]:
    """All piecewise-constant controls with ``pieces`` equal pieces and ``levels`` values per piece."""
    if not 1 <= pieces <= 3:
        raise ValueError("piecewise family supports 1 to 3 pieces")
    values = np.linspace(bounds[0], bounds[1], levels)
    edges = [horizon * i / pieces for i in range(1, pieces)]
    grids = np.meshgrid(*([values] * pieces), indexing="ij")
    combos = np.stack([g.ravel() for g in grids], axis=1)
    return [ControlField.piecewise(edges, combo.tolist(), bounds) for combo in combos]


def insider_affine_family(intercepts: ArrayLike, slopes: ArrayLike, horizon: float,
                          bounds: tuple[float, float] = (-math.inf, math.inf)) -> list[ControlField]:
    return [ControlField.insider_affine(float(a), float(c), horizon, bounds)
            for a in np.atleast_1d(intercepts) for c in np.atleast_1d(slopes)]


def _evaluate_candidate(perf, control, coeffs, donsker, z, paths, grid) -> PerformanceReport | None:
    try:
        if isinstance(z, str):
            return realized_performance(perf, control, coeffs, _signal(donsker), paths, grid)
        return performance(perf, control, coeffs, donsker, z, paths, grid)
    except ControlBoundsError:
        logger.debug("candidate %s leaves the control set; skipped", control.name)
        return None


def brute_force_optimize(
    perf: PerformanceSpec,
    coeffs: CoefficientSet,
    donsker,
    z: float | Sequence[float] | Literal["realized"],
    paths: DriverPaths,
    grid: TimeGrid,
    family: Sequence[ControlField],
    threads: int = 1,
) -> SearchResult:
    """Exhaustive search over ``family`` on one shared noise sample."""
    if not family:
        raise ValueError("control family is empty")
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        reports = list(pool.map(lambda c: _evaluate_candidate(perf, c, coeffs, donsker, z, paths, grid), family))
    values = [r.J if r is not None else -math.inf for r in reports]
    errors = [max(r.standard_errors) if r is not None else math.inf for r in reports]
    order = np.argsort(values, kind="stable")[::-1]
    best = int(order[0])
    if reports[best] is None:
        raise ControlBoundsError("no candidate of the family stays inside the control set")
    gap = float(values[best] - values[int(order[1])]) if len(order) > 1 else math.inf
    logger.info("brute force: best %s with J = %.6g (gap %.3g over %d candidates)",
                family[best].name, values[best], gap, len(family))
    return SearchResult(control=family[best], report=reports[best], values=values, standard_errors=errors,
                        names=[c.name for c in family], argmax=best, runner_up_gap=gap)


def refine_constant(
    perf: PerformanceSpec,
    coeffs: CoefficientSet,
    donsker,
    z: float | Sequence[float],
    paths: DriverPaths,
    grid: TimeGrid,
    search: SearchResult,
    bounds: tuple[float, float],
) -> tuple[float, float]:
    """Bounded scalar refinement of a constant-control search, within one cell of its argmax."""
    centre = search.control.params[0]
    cell = (bounds[1] - bounds[0]) / max(1, len(search.values) - 1)
    lo, hi = max(bounds[0], centre - cell), min(bounds[1], centre + cell)

    def objective(u: float) -> float:
        return -performance(perf, ControlField.constant(float(u), bounds), coeffs, donsker, z, paths, grid).J

    result = minimize_scalar(objective, bounds=(lo, hi), method="bounded", options={"xatol": 1e-4})
    return float(result.x), float(-result.fun)
