"""
Hamiltonians and the z-parameterized adjoint BSDE.

    H0 = f M + b(t,t) p + sigma(t,t) q + sum_i gamma(t,t,zeta_i) r_i lambda p_i
    H1 = int_t^T d_s b(s,t) p(s) ds + int_t^T d_s sigma(s,t) E[D_t p(s) | F_t] ds
         + int_t^T sum_i d_s gamma(s,t,zeta_i) E[D_{t,zeta_i} p(s) | F_t] lambda p_i ds

    dp = -dH/dx dt + q dB + int r dN~,   p(T) = g_x(X(T)) M(T, z)

The BSDE is solved backward by least-squares Monte Carlo; q and r come
from the same joint regression as the conditional expectation. The
Malliavin traces E[D_t p(s) | F_t], s > t, needed by H1 are read off the
dB-coefficients of p(s) regressed at t.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Literal, Mapping

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray

from app.core.errors import ConfigurationError, XDependenceError
from app.services.paths import DriverPaths, LevyModel, TimeGrid
from app.services.regression import Regressor, RegressionSpec
from app.services.svie import CoefficientSet, ControlField, StateField, z_column
from app.utils.numerics import batch_means, evaluate, mean_and_se, partial, trapezoid_weights

logger = logging.getLogger(__name__)

Wrt = Literal["x", "u"] | None
PERF_ARGS = {"f": {"x": 1, "u": 2}, "g": {"x": 0}}


@dataclass(frozen=True)
class PerformanceSpec:
    """Running reward f(t, x, u, z) and terminal reward g(x, z)."""
    f: Callable[..., ArrayLike]
    g: Callable[..., ArrayLike]
    partials: Mapping[str, Callable[..., ArrayLike]] = field(default_factory=dict)
    name: str = "custom"

    def partial(self, name: str, wrt: str) -> Callable[..., ArrayLike]:
        key = f"{name}_{wrt}"
        if key in self.partials:
            return self.partials[key]
        return partial(getattr(self, name), PERF_ARGS[name][wrt])

    def depends_on_state(self) -> bool:
        t = np.array([0.1, 0.4, 0.7])
        u = np.array([-0.3, 0.2, 0.6])
        z = np.array([-0.5, 0.0, 0.5])
        a = evaluate(self.f, (3,), t, np.full(3, 0.8), u, z)
        b = evaluate(self.f, (3,), t, np.full(3, 1.3), u, z)
        return not np.allclose(a, b, rtol=0, atol=1e-14)


@dataclass
class HamiltonianEval:
    h0: NDArray[np.float64]
    h1: NDArray[np.float64]
    dh_du: NDArray[np.float64]
    dh_dx: NDArray[np.float64]

    @property
    def h(self) -> NDArray[np.float64]:
        return self.h0 + self.h1


@dataclass
class AdjointTriple:
    p: NDArray[np.float64] = field(repr=False)                 # (n, N + 1)
    q: NDArray[np.float64] = field(repr=False)                 # (n, N)
    r: NDArray[np.float64] | None = field(repr=False)          # (n, N, marks)
    z: float | NDArray[np.float64]
    grid: TimeGrid = field(repr=False)
    traces: dict[int, NDArray[np.float64]] = field(default_factory=dict, repr=False)
    jump_traces: dict[int, NDArray[np.float64]] = field(default_factory=dict, repr=False)
    lower_accuracy: bool = False

    def trace_row(self, k: int) -> NDArray[np.float64] | None:
        """E[D_{t_k} p(t_m) | F_{t_k}] for m = k .. N, shape (n, N + 1 - k)."""
        return self.traces.get(k)

    def jump_trace_row(self, k: int) -> NDArray[np.float64] | None:
        return self.jump_traces.get(k)

    def to_frame(self, scenarios) -> pd.DataFrame:
        scenarios = np.asarray(scenarios, dtype=int)
        t = self.grid.points
        q = np.concatenate([self.q, np.full((self.q.shape[0], 1), np.nan)], axis=1)
        z = np.broadcast_to(np.asarray(self.z, dtype=float), (self.p.shape[0],))[scenarios]
        return pd.DataFrame({
            "scenario": np.repeat(scenarios, t.size),
            "t": np.tile(t, scenarios.size),
            "z": np.repeat(z, t.size),
            "p": self.p[scenarios].ravel(),
            "q": q[scenarios].ravel(),
        })


def _z_flat(z: ArrayLike, n: int) -> NDArray[np.float64]:
    return z_column(z, n)[:, 0]


def _kernel_for(coeffs: CoefficientSet, name: str, wrt: Wrt):
    return coeffs.kernel(name) if wrt is None else coeffs.partial(name, wrt)


def _h0(t, x, u, z, p, q, r_slice, m_value, coeffs, perf, levy, wrt: Wrt) -> NDArray[np.float64]:
    x = np.asarray(x, dtype=float)
    shape = np.broadcast(x, np.asarray(u), np.asarray(p), np.asarray(q)).shape
    f = perf.f if wrt is None else perf.partial("f", wrt)
    total = evaluate(f, shape, t, x, u, z) * m_value
    total = total + evaluate(_kernel_for(coeffs, "b", wrt), shape, t, t, x, u, z) * p
    total = total + evaluate(_kernel_for(coeffs, "sigma", wrt), shape, t, t, x, u, z) * q
    if levy is not None and levy.active and coeffs.gamma is not None and r_slice is not None:
        gamma = _kernel_for(coeffs, "gamma", wrt)
        r_slice = np.asarray(r_slice, dtype=float)
        for i, (zeta, weight) in enumerate(zip(levy.marks, levy.nu_weights)):
            total = total + evaluate(gamma, shape, t, t, x, u, z, zeta) * r_slice[..., i] * weight
    return np.asarray(total, dtype=float)


def hamiltonian_h0(t, x, u, z, p, q, r_slice, M_value, coeffs: CoefficientSet, perf: PerformanceSpec,
                   levy: LevyModel | None = None) -> NDArray[np.float64]:
    return _h0(t, x, u, z, p, q, r_slice, M_value, coeffs, perf, levy, None)


def _stieltjes(kernel, s: NDArray, t: float, x, u, z, weights: NDArray, zeta=None) -> NDArray[np.float64]:
    """sum_m (k(s_{m+1}, t) - k(s_m, t)) * (w_m + w_{m+1}) / 2 per scenario."""
    n = weights.shape[0]
    x = np.broadcast_to(np.asarray(x, dtype=float), (n,))[:, None]
    u = np.broadcast_to(np.asarray(u, dtype=float), (n,))[:, None]
    zc = np.broadcast_to(np.asarray(z, dtype=float), (n,))[:, None]
    args = (s[None, :], t, x, u, zc) + (() if zeta is None else (zeta,))
    values = evaluate(kernel, (n, s.size), *args)
    mid = 0.5 * (weights[:, 1:] + weights[:, :-1])
    return (np.diff(values, axis=1) * mid).sum(axis=1)


def _h1(t, x, u, z, p_row, traces, coeffs: CoefficientSet, grid: TimeGrid, levy, jump_traces,
        wrt: Wrt, first_arg: dict[str, bool] | None = None) -> NDArray[np.float64]:
    k = grid.index_of(t)
    s = grid.points[k:]
    n = p_row.shape[0]
    if s.size < 2:
        return np.zeros(n)
    first_arg = first_arg or {name: coeffs.depends_on("t", names=(name,)) for name in ("b", "sigma", "gamma")}
    total = np.zeros(n)
    if first_arg["b"]:
        if wrt is None and coeffs.has_partial("b_t"):
            xb = np.broadcast_to(np.asarray(x, dtype=float), (n,))[:, None]
            ub = np.broadcast_to(np.asarray(u, dtype=float), (n,))[:, None]
            zb = np.broadcast_to(np.asarray(z, dtype=float), (n,))[:, None]
            slope = evaluate(coeffs.partials["b_t"], (n, s.size), s[None, :], t, xb, ub, zb)
            total += (slope * p_row) @ trapezoid_weights(s)
        else:
            total += _stieltjes(_kernel_for(coeffs, "b", wrt), s, t, x, u, z, p_row)
    if first_arg["sigma"]:
        if traces is None:
            raise ConfigurationError("Malliavin traces of p are required when sigma depends on its first argument")
        total += _stieltjes(_kernel_for(coeffs, "sigma", wrt), s, t, x, u, z, traces)
    if first_arg["gamma"] and levy is not None and levy.active and coeffs.gamma is not None:
        if jump_traces is None:
            raise ConfigurationError("jump traces of p are required when gamma depends on its first argument")
        gamma = _kernel_for(coeffs, "gamma", wrt)
        for i, (zeta, weight) in enumerate(zip(levy.marks, levy.nu_weights)):
            total += weight * _stieltjes(gamma, s, t, x, u, z, jump_traces[..., i], zeta)
    return total


def hamiltonian_h1(t, x, u, z, p_field, traces, coeffs: CoefficientSet, grid: TimeGrid,
                   levy: LevyModel | None = None, jump_traces=None) -> NDArray[np.float64]:
    """
    Future-kernel part of H at ``t``. ``p_field`` and ``traces`` hold
    p(s) and E[D_t p(s) | F_t] on the grid points s = t .. T, shape (n, ...).
    """
    p_field = np.atleast_2d(np.asarray(p_field, dtype=float))
    traces = None if traces is None else np.atleast_2d(np.asarray(traces, dtype=float))
    return _h1(t, x, u, z, p_field, traces, coeffs, grid, levy, jump_traces, None)


def first_argument_dependence(coeffs: CoefficientSet) -> dict[str, bool]:
    return {name: coeffs.depends_on("t", names=(name,)) for name in ("b", "sigma", "gamma")}


def hamiltonian(k: int, x, u, z, adjoint: AdjointTriple, m_value, coeffs: CoefficientSet,
                perf: PerformanceSpec, levy: LevyModel | None = None,
                first_arg: dict[str, bool] | None = None) -> HamiltonianEval:
    """H0, H1 and their x- and u-derivatives at grid step ``k`` along an adjoint solution."""
    grid = adjoint.grid
    t = float(grid.points[k])
    first_arg = first_arg or first_argument_dependence(coeffs)
    p = adjoint.p[:, k]
    q = adjoint.q[:, min(k, adjoint.q.shape[1] - 1)] if k < grid.n_steps else np.zeros_like(p)
    r = None
    if adjoint.r is not None and k < grid.n_steps:
        r = adjoint.r[:, k]
    p_row = adjoint.p[:, k:]
    traces, jump_traces = adjoint.trace_row(k), adjoint.jump_trace_row(k)
    parts = {}
    for wrt in (None, "x", "u"):
        parts[wrt] = (
            _h0(t, x, u, z, p, q, r, m_value, coeffs, perf, levy, wrt),
            _h1(t, x, u, z, p_row, traces, coeffs, grid, levy, jump_traces, wrt, first_arg),
        )
    return HamiltonianEval(h0=parts[None][0], h1=parts[None][1],
                           dh_du=parts["u"][0] + parts["u"][1], dh_dx=parts["x"][0] + parts["x"][1])


def solve_adjoint_bsde(
    coeffs: CoefficientSet,
    perf: PerformanceSpec,
    control: ControlField,
    state: StateField,
    donsker,
    z: ArrayLike,
    paths: DriverPaths,
    grid: TimeGrid,
    regression: RegressionSpec | None = None,
) -> AdjointTriple:
    """Backward Euler / least-squares sweep for (p, q, r) along ``state``."""
    n, N, dt = paths.n_scenarios, grid.n_steps, grid.dt
    levy = paths.levy
    zf = _z_flat(z, n)
    jumps = coeffs.gamma is not None and levy.active
    dB = paths.brownian_increments
    dN = paths.compensated_counts() if jumps else None
    B = paths.brownian_path()
    signal = getattr(donsker, "signal", None)
    Z = signal.values if signal is not None else np.zeros_like(B)
    X, U = state.X, state.U
    M = donsker.path(z)
    neutral = getattr(donsker, "neutral", False)

    first_arg = first_argument_dependence(coeffs)
    need_traces = first_arg["sigma"] or (first_arg["gamma"] and jumps)
    lower_accuracy = any(first_arg.values())
    if lower_accuracy:
        logger.warning("kernels depend on their first argument; H1 uses regression traces (lower accuracy)")

    regressor = Regressor(regression, label="adjoint")
    p = np.empty((n, N + 1))
    q = np.zeros((n, N))
    r = np.zeros((n, N, levy.n_marks)) if jumps else None
    p[:, N] = evaluate(perf.partial("g", "x"), (n,), X[:, N], zf) * M[:, N]
    traces: dict[int, NDArray] = {}
    jump_traces: dict[int, NDArray] = {}

    for k in range(N - 1, -1, -1):
        basis = regressor.basis({"state": X[:, k], "signal": Z[:, k], "brownian": B[:, k]},
                                multiplier=None if neutral else M[:, k])
        dN_k = dN[:, k] if jumps else None
        fit = regressor.with_increments(basis, p[:, k + 1], dB[:, k], dN_k)
        q[:, k] = fit.q
        if jumps:
            r[:, k] = fit.r
        if need_traces:
            future = regressor.with_increments(basis, p[:, k + 1:], dB[:, k], dN_k)
            traces[k] = np.column_stack([fit.q, future.q])
            if jumps:
                jump_traces[k] = np.concatenate([fit.r[:, None, :], future.r], axis=1)
        t = float(grid.points[k])
        r_k = r[:, k] if jumps else None
        row = np.column_stack([fit.conditional, p[:, k + 1:]])
        driver = _h0(t, X[:, k], U[:, k], zf, fit.conditional, fit.q, r_k, M[:, k], coeffs, perf, levy, "x")
        if lower_accuracy:
            driver = driver + _h1(t, X[:, k], U[:, k], zf, row, traces.get(k), coeffs, grid, levy,
                                  jump_traces.get(k), "x", first_arg)
        p[:, k] = fit.conditional + driver * dt

    return AdjointTriple(p=p, q=q, r=r, z=state.z, grid=grid, traces=traces,
                         jump_traces=jump_traces, lower_accuracy=lower_accuracy)


def closed_form_adjoint(slope: float, donsker, z: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """x-free model with g_x = slope and f = 0: p = slope * M, q = slope * M_B."""
    return slope * donsker.path(z), slope * donsker.path(z, kind="derivative_b")


def ensure_x_free(coeffs: CoefficientSet, perf: PerformanceSpec) -> None:
    if coeffs.depends_on("x") or perf.depends_on_state():
        raise XDependenceError("the reduced Hamiltonian needs coefficients that do not depend on x")


@dataclass
class ReducedHamiltonian:
    """Reduced Hamiltonian at one grid time; value and u-derivative for any u."""
    t: float
    horizon: float
    z: NDArray[np.float64]
    m_value: NDArray[np.float64]
    expectation: NDArray[np.float64]        # E[g'(X(T)) M(T) | F_t]
    malliavin: NDArray[np.float64]          # E[D_t (g'(X(T)) M(T)) | F_t]
    jump: NDArray[np.float64] | None        # E[D_{t,zeta_i} (...) | F_t]
    coeffs: CoefficientSet
    perf: PerformanceSpec
    levy: LevyModel

    def _evaluate(self, u: ArrayLike, wrt: Wrt) -> NDArray[np.float64]:
        shape = self.m_value.shape
        u = np.broadcast_to(np.asarray(u, dtype=float), shape)
        x = np.zeros(shape)
        f = self.perf.f if wrt is None else self.perf.partial("f", "u")
        total = evaluate(f, shape, self.t, x, u, self.z) * self.m_value
        total = total + evaluate(_kernel_for(self.coeffs, "b", wrt), shape, self.horizon, self.t, x, u, self.z) * self.expectation
        total = total + evaluate(_kernel_for(self.coeffs, "sigma", wrt), shape, self.horizon, self.t, x, u, self.z) * self.malliavin
        if self.jump is not None:
            gamma = _kernel_for(self.coeffs, "gamma", wrt)
            for i, (zeta, weight) in enumerate(zip(self.levy.marks, self.levy.nu_weights)):
                total = total + evaluate(gamma, shape, self.horizon, self.t, x, u, self.z, zeta) * self.jump[:, i] * weight
        return total

    def value(self, u: ArrayLike) -> NDArray[np.float64]:
        return self._evaluate(u, None)

    def derivative(self, u: ArrayLike) -> NDArray[np.float64]:
        return self._evaluate(u, "u")


def reduced_hamiltonian_at(
    k: int,
    terminal_state: StateField,
    donsker,
    coeffs: CoefficientSet,
    perf: PerformanceSpec,
    paths: DriverPaths,
    grid: TimeGrid,
    regression: RegressionSpec | None = None,
    check: bool = True,
) -> ReducedHamiltonian:
    if check:
        ensure_x_free(coeffs, perf)
    n = paths.n_scenarios
    levy = paths.levy
    zf = _z_flat(terminal_state.z, n)
    jumps = coeffs.gamma is not None and levy.active
    t = float(grid.points[k])
    neutral = getattr(donsker, "neutral", False)
    m_terminal = donsker.path(terminal_state.z)[:, grid.n_steps] if not neutral else np.ones(n)
    m_now = donsker.density(t, terminal_state.z) if not neutral else np.ones(n)
    target = evaluate(perf.partial("g", "x"), (n,), terminal_state.terminal, zf) * m_terminal
    if k == grid.n_steps:
        return ReducedHamiltonian(t, grid.horizon, zf, m_now, target, np.zeros(n), None, coeffs, perf, levy)
    signal = getattr(donsker, "signal", None)
    B = paths.brownian_path()
    Z = signal.values[:, k] if signal is not None else np.zeros(n)
    regressor = Regressor(regression, label="reduced-hamiltonian")
    basis = regressor.basis({"state": terminal_state.X[:, k], "signal": Z, "brownian": B[:, k]},
                            multiplier=None if neutral else m_now)
    dN = paths.compensated_counts()[:, k] if jumps else None
    fit = regressor.with_increments(basis, target, paths.brownian_increments[:, k], dN)
    return ReducedHamiltonian(t, grid.horizon, zf, m_now, fit.conditional, fit.q,
                              fit.r if jumps else None, coeffs, perf, levy)


def reduced_hamiltonian(t: float, z: ArrayLike, u: ArrayLike, terminal_state: StateField, donsker,
                        coeffs: CoefficientSet, perf: PerformanceSpec, paths: DriverPaths, grid: TimeGrid,
                        regression: RegressionSpec | None = None) -> NDArray[np.float64]:
    """Reduced Hamiltonian value at time ``t`` for control value(s) ``u``."""
    if np.ndim(z) == 0 and np.ndim(terminal_state.z) == 0 and float(z) != float(terminal_state.z):
        raise ConfigurationError("z does not match the z of the terminal state")
    k = grid.index_of(t)
    return reduced_hamiltonian_at(k, terminal_state, donsker, coeffs, perf, paths, grid, regression).value(u)


@dataclass
class DualityReport:
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float

    @property
    def difference(self) -> float:
        return self.lhs - self.rhs


def duality_sides(
    paths: DriverPaths,
    grid: TimeGrid,
    p_path: NDArray[np.float64] | None = None,
    kernel: Callable[[ArrayLike, ArrayLike], ArrayLike] | None = None,
    n_batches: int = 10,
    regression: RegressionSpec | None = None,
) -> DualityReport:
    """
    Both sides of E[int_0^T (int_0^t f(t,s) dB(s)) p(t) dt]
                 = E[int_0^T int_t^T f(s,t) E[D_t p(s) | F_t] ds dt].

    ``p_path`` defaults to B itself. The right side regresses p(s) on the
    Brownian state at t; its standard error comes from batch means.
    """
    n, N = paths.n_scenarios, grid.n_steps
    t = grid.points
    dB = paths.brownian_increments
    B = paths.brownian_path()
    p_path = B if p_path is None else np.asarray(p_path, dtype=float)
    f = kernel or (lambda a, b: 1.0)
    f_grid = evaluate(f, (N + 1, N + 1), t[:, None], t[None, :])          # f(t_a, t_b)

    inner = np.zeros((n, N + 1))
    for k in range(1, N + 1):
        inner[:, k] = dB[:, :k] @ f_grid[k, :k]
    lhs_values = (inner * p_path) @ trapezoid_weights(t)
    lhs, lhs_se = mean_and_se(lhs_values)

    spec = regression or RegressionSpec(degree=3, features=("brownian",))
    totals = np.zeros(n)
    for batch in np.array_split(np.arange(n), n_batches):
        regressor = Regressor(spec, label="duality")
        for k in range(N):
            basis = regressor.basis({"brownian": B[batch, k], "state": p_path[batch, k], "signal": B[batch, k]})
            targets = p_path[batch][:, k + 1:]
            fit = regressor.with_increments(basis, targets, dB[batch, k])
            row = np.column_stack([fit.q[:, 0], fit.q])                 # D_t p(t) taken from p(t + dt)
            s = t[k:]
            inner_weights = trapezoid_weights(s) * f_grid[k:, k]
            totals[batch] += trapezoid_weights(t)[k] * (row @ inner_weights)
    rhs, rhs_se = batch_means(totals, n_batches)
    return DualityReport(lhs=float(lhs), lhs_se=float(lhs_se), rhs=float(rhs), rhs_se=float(rhs_se))
