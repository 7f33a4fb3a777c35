"""
Optimal insider portfolio in a Volterra market without jumps.

Wealth follows

    X(t) = x0 + int_0^t b0(t,s,z) pi(s) X(s) ds + int_0^t sigma0(t,s,z) pi(s) X(s) dB(s),

and the optimal terminal wealth is F(c) = (U')^{-1}(c Y(T) / M(T)) in
normalized form. (X_hat, K_hat) solve the backward Volterra equation

    X_hat(t) = F(c) - int_t^T (b0/sigma0)(t,s) K_hat(t,s) ds - int_t^T K_hat(t,s) dB(s),

c is fixed by E[X_hat(0)] = x0, and the traded fraction is read off the
diagonal pi_hat(s) = K_hat(s,s) / (sigma0(s,s) X_hat(s)).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import bisect

from app.core.errors import (
    BracketError,
    ConfigurationError,
    FarTailError,
    JumpModelError,
    MarketSpecError,
    NegativeWealthError,
)
from app.services.paths import DriverPaths, TimeGrid
from app.services.regression import Regressor, RegressionSpec
from app.services.svie import CoefficientSet, ControlField, StateField, solve_forward, z_column
from app.utils.numerics import evaluate, mean_and_se, partial

logger = logging.getLogger(__name__)

MarketKernel = Callable[[ArrayLike, ArrayLike, ArrayLike], ArrayLike]
SENSITIVITY_WARNING = 0.05
C_XTOL = 1e-6


class LogUtility:
    name = "log"

    def value(self, x: ArrayLike) -> NDArray[np.float64]:
        return np.log(x)

    def marginal(self, x: ArrayLike) -> NDArray[np.float64]:
        return 1.0 / np.asarray(x, dtype=float)

    def inverse_marginal(self, y: ArrayLike) -> NDArray[np.float64]:
        return 1.0 / np.asarray(y, dtype=float)


class PowerUtility:
    """U(x) = x^gamma / gamma with gamma < 1, gamma != 0."""

    def __init__(self, gamma: float):
        if not (gamma < 1.0 and gamma != 0.0):
            raise MarketSpecError(f"power utility needs gamma < 1 and gamma != 0, got {gamma}")
        self.gamma = gamma
        self.name = f"power({gamma:g})"

    def value(self, x: ArrayLike) -> NDArray[np.float64]:
        return np.asarray(x, dtype=float) ** self.gamma / self.gamma

    def marginal(self, x: ArrayLike) -> NDArray[np.float64]:
        return np.asarray(x, dtype=float) ** (self.gamma - 1.0)

    def inverse_marginal(self, y: ArrayLike) -> NDArray[np.float64]:
        return np.asarray(y, dtype=float) ** (1.0 / (self.gamma - 1.0))


Utility = LogUtility | PowerUtility


@dataclass(frozen=True)
class MarketSpec:
    b0: MarketKernel
    sigma0: MarketKernel
    x0: float
    horizon: float
    utility: Utility = field(default_factory=LogUtility)
    c0: float = 1e-3
    name: str = "custom"

    def __post_init__(self) -> None:
        if not (self.x0 > 0 and math.isfinite(self.x0)):
            raise MarketSpecError(f"initial wealth x0 must be positive, got {self.x0}")
        if not self.c0 > 0:
            raise MarketSpecError(f"c0 must be positive, got {self.c0}")

    def validate(self, grid: TimeGrid, z: ArrayLike = (0.0,)) -> "MarketSpec":
        """sigma0(t, s, z) >= c0 on every grid pair s <= t and probed z."""
        t = grid.points
        tt, ss = np.meshgrid(t, t, indexing="ij")
        mask = ss <= tt
        for zv in np.atleast_1d(np.asarray(z, dtype=float)):
            values = evaluate(self.sigma0, tt.shape, tt, ss, zv)[mask]
            if not np.all(np.isfinite(values)) or values.min() < self.c0:
                raise MarketSpecError(f"sigma0 must be bounded away from zero: min {values.min():.4g} < c0 = {self.c0:g}")
        return self

    def drift_free(self, grid: TimeGrid, z: ArrayLike = 0.0) -> bool:
        t = grid.points
        return bool(np.all(evaluate(self.b0, (t.size, t.size), t[:, None], t[None, :], z) == 0.0))

    def ratio(self, t: ArrayLike, s: ArrayLike, z: ArrayLike) -> NDArray[np.float64]:
        """b0 / sigma0."""
        return np.asarray(self.b0(t, s, z), dtype=float) / np.asarray(self.sigma0(t, s, z), dtype=float)

    def merton_fraction(self, t: ArrayLike, z: ArrayLike = 0.0) -> NDArray[np.float64]:
        sigma = np.asarray(self.sigma0(t, t, z), dtype=float)
        return np.asarray(self.b0(t, t, z), dtype=float) / sigma ** 2


def theta0(market: MarketSpec, t: ArrayLike, z: ArrayLike) -> NDArray[np.float64]:
    """theta0(t, z) = -b0(T, t, z) / sigma0(T, t, z)."""
    sigma = np.asarray(market.sigma0(market.horizon, t, z), dtype=float)
    if np.any(sigma < market.c0):
        raise MarketSpecError(f"sigma0(T, t, z) below c0 = {market.c0:g}")
    return -np.asarray(market.b0(market.horizon, t, z), dtype=float) / sigma


@dataclass
class MartingaleFields:
    z: float | NDArray[np.float64]
    theta: NDArray[np.float64] = field(repr=False)        # (n, N + 1)
    log_y: NDArray[np.float64] = field(repr=False)        # ln Y(t)/Y(0), (n, N + 1)
    log_m: NDArray[np.float64] = field(repr=False)        # ln M(t)/M(0) from the field itself
    log_m_exponential: NDArray[np.float64] = field(repr=False)  # ln M(t)/M(0) from the exponential representation
    phi: NDArray[np.float64] = field(repr=False)          # (n, N + 1)
    m0: NDArray[np.float64] = field(repr=False)

    @property
    def numeraire(self) -> NDArray[np.float64]:
        """M(t)/Y(t) in normalized form."""
        return np.exp(self.log_m - self.log_y)


def martingale_fields(market: MarketSpec, donsker, paths: DriverPaths, grid: TimeGrid, z: ArrayLike) -> MartingaleFields:
    if paths.levy.active:
        raise JumpModelError("the portfolio pipeline covers markets without jumps only")
    n, N, dt = paths.n_scenarios, grid.n_steps, grid.dt
    zc = z_column(z, n)
    dB = paths.brownian_increments
    theta = evaluate(lambda t, zz: theta0(market, t, zz), (n, N + 1), grid.points[None, :], zc)
    log_y = np.zeros((n, N + 1))
    np.cumsum(theta[:, :N] * dB - 0.5 * theta[:, :N] ** 2 * dt, axis=1, out=log_y[:, 1:])

    z_arg = zc[:, 0] if np.ndim(z) else float(z)
    phi = donsker.phi_path(z_arg, strict=False)
    density = donsker.path(z_arg)
    m0 = density[:, 0]
    with np.errstate(divide="ignore"):
        log_m = np.log(density) - np.log(m0)[:, None]
    slopes = np.array([donsker.phi_signal_slope(float(t)) for t in grid.points[:N]])
    increments = phi[:, :N] * dB - 0.5 * phi[:, :N] ** 2 * dt + 0.5 * slopes * (dB ** 2 - dt)
    log_m_exp = np.zeros((n, N + 1))
    np.cumsum(increments, axis=1, out=log_m_exp[:, 1:])
    return MartingaleFields(z=np.asarray(z, dtype=float) if np.ndim(z) else float(z), theta=theta, log_y=log_y,
                            log_m=log_m, log_m_exponential=log_m_exp, phi=phi, m0=m0)


def terminal_wealth(market: MarketSpec, c: ArrayLike, fields: MartingaleFields) -> NDArray[np.float64]:
    """
    F(c) = (U')^{-1}(c exp(int (theta0 - Phi) dB - 1/2 int (theta0^2 - Phi^2) ds)),
    evaluated as (U')^{-1}(c Y(T) / M(T)) in normalized form.
    """
    c = np.asarray(c, dtype=float)
    if np.any(~(c > 0)):
        raise ConfigurationError(f"c must be positive, got {c}")
    exponent = fields.log_y[:, -1] - fields.log_m[:, -1]
    return market.utility.inverse_marginal(c * np.exp(exponent))


@dataclass
class BSVIESolution:
    X_hat: NDArray[np.float64] = field(repr=False)        # (n, N + 1)
    K_diag: NDArray[np.float64] = field(repr=False)       # K_hat(t_j, t_j), (n, N)
    K_first_row: NDArray[np.float64] = field(repr=False)  # K_hat(0, t_j), (n, N)
    K_mean: NDArray[np.float64] = field(repr=False)       # E[K_hat(t_k, t_j)], (N, N), NaN below the diagonal
    drift_term: NDArray[np.float64] = field(repr=False)   # int_0^T (b0/sigma0)(0,s) K_hat(0,s) ds, (n,)


def _bsvie_basis(regressor: Regressor, fields: MartingaleFields, signal, paths: DriverPaths,
                 j: int) -> tuple[NDArray, NDArray]:
    """Basis at t_j and the numeraire M/Y(t_j) that the sweep regresses in units of."""
    B = paths.brownian_path()[:, j]
    Z = signal.values[:, j] if signal is not None else np.zeros_like(B)
    log_weight = fields.log_m[:, j] - fields.log_y[:, j]
    if not np.all(np.isfinite(log_weight)):
        raise FarTailError(f"numeraire M/Y vanishes at step {j} for {int((~np.isfinite(log_weight)).sum())} scenarios")
    basis = regressor.basis({"state": log_weight, "signal": Z, "brownian": B})
    return basis, np.exp(log_weight)


def solve_bsvie(
    market: MarketSpec,
    terminal: NDArray[np.float64],
    z: ArrayLike,
    fields: MartingaleFields,
    paths: DriverPaths,
    grid: TimeGrid,
    regression: RegressionSpec | None = None,
    signal=None,
    first_slice_only: bool = False,
) -> BSVIESolution:
    """
    Slice-wise backward sweep. For slice t_k, Y^k(t_N) = F and
    Y^k(t_j) = E[Y^k(t_{j+1}) | F_j] - a(t_k, t_j) K(t_k, t_j) dt with
    K(t_k, t_j) = E[Y^k(t_{j+1}) dB_j | F_j] / dt; X_hat(t_k) = Y^k(t_k).
    All live slices share one regression per step.

    Targets are taken in units of the numeraire w_j = M/Y(t_j), which is
    F_j-measurable: the fit is on Y^k(t_{j+1}) / w_j and both the
    conditional value and K are scaled back by w_j. For log utility the
    ratio is close to the constant 1/c, so the fit stays positive where
    w spans several orders of magnitude.
    """
    terminal = np.asarray(terminal, dtype=float)
    if not np.all(np.isfinite(terminal)) or np.any(terminal <= 0):
        raise NegativeWealthError("terminal wealth must be finite and positive")
    n, N, dt = paths.n_scenarios, grid.n_steps, grid.dt
    zc = z_column(z, n)
    t = grid.points
    dB = paths.brownian_increments
    regressor = Regressor(regression or RegressionSpec(degree=2, features=("signal",)), label="bsvie")
    slices = 1 if first_slice_only else N
    Y = np.repeat(terminal[:, None], slices, axis=1)
    X_hat = np.empty((n, N + 1))
    X_hat[:, N] = terminal
    K_diag = np.zeros((n, N))
    K_first = np.zeros((n, N))
    K_mean = np.full((N, N), np.nan)
    drift = np.zeros(n)

    for j in range(N - 1, -1, -1):
        live = min(j + 1, slices)
        basis, weight = _bsvie_basis(regressor, fields, signal, paths, j)
        fit = regressor.with_increments(basis, Y[:, :live] / weight[:, None], dB[:, j])
        conditional = fit.conditional * weight[:, None]
        K = fit.q * weight[:, None]
        a = evaluate(market.ratio, (n, live), t[None, :live], t[j], zc)
        Y[:, :live] = conditional - a * K * dt
        K_mean[:live, j] = K.mean(axis=0)
        K_first[:, j] = K[:, 0]
        drift += a[:, 0] * K[:, 0] * dt
        if not first_slice_only:
            K_diag[:, j] = K[:, j]
            X_hat[:, j] = Y[:, j]
        elif j == 0:
            X_hat[:, 0] = Y[:, 0]
    if first_slice_only:
        X_hat[:, 1:N] = np.nan
    checked = X_hat[:, :N] if not first_slice_only else X_hat[:, :1]
    if np.any(checked <= 0):
        raise NegativeWealthError(f"X_hat is not positive ({int((checked <= 0).sum())} values); "
                                  "check utility and horizon")
    return BSVIESolution(X_hat=X_hat, K_diag=K_diag, K_first_row=K_first, K_mean=K_mean, drift_term=drift)


@dataclass
class BudgetSolution:
    c: float
    residual: float
    iterations: int
    nested: bool


def budget_gap(market: MarketSpec, c: float, z: ArrayLike, fields: MartingaleFields, paths: DriverPaths,
               grid: TimeGrid, regression: RegressionSpec | None = None, signal=None,
               nested: bool | None = None) -> float:
    """E[F(c)] - E[int_0^T (b0/sigma0)(0,s) K_hat(0,s) ds] - x0."""
    terminal = terminal_wealth(market, c, fields)
    nested = (not market.drift_free(grid, z if np.ndim(z) == 0 else 0.0)) if nested is None else nested
    if not nested:
        return float(terminal.mean() - market.x0)
    solution = solve_bsvie(market, terminal, z, fields, paths, grid, regression, signal, first_slice_only=True)
    return float(terminal.mean() - solution.drift_term.mean() - market.x0)


def solve_c(
    market: MarketSpec,
    z: ArrayLike,
    fields: MartingaleFields,
    paths: DriverPaths,
    grid: TimeGrid,
    bracket: tuple[float, float] = (1e-4, 1e4),
    regression: RegressionSpec | None = None,
    signal=None,
) -> BudgetSolution:
    """Bisection in log c for the budget constraint; the BSVIE is re-solved per candidate when b0 != 0."""
    lo, hi = bracket
    if not 0 < lo < hi:
        raise BracketError(f"bracket must satisfy 0 < c_lo < c_hi, got {bracket}")
    nested = not market.drift_free(grid, z if np.ndim(z) == 0 else 0.0)
    calls = 0

    def gap(log_c: float) -> float:
        nonlocal calls
        calls += 1
        return budget_gap(market, math.exp(log_c), z, fields, paths, grid, regression, signal, nested)

    g_lo, g_hi = gap(math.log(lo)), gap(math.log(hi))
    if g_lo * g_hi > 0:
        raise BracketError(f"budget equation has no sign change on [{lo:g}, {hi:g}] "
                           f"(gaps {g_lo:.4g}, {g_hi:.4g})")
    log_c = bisect(gap, math.log(lo), math.log(hi), xtol=C_XTOL)
    c = math.exp(log_c)
    residual = gap(log_c)
    logger.info("budget constant c = %.8g (residual %.3g, %d evaluations, nested=%s)", c, residual, calls, nested)
    return BudgetSolution(c=c, residual=residual, iterations=calls, nested=nested)


@dataclass
class PortfolioFields:
    pi_hat: NDArray[np.float64] = field(repr=False)        # diagonal convention, (n, N)
    pi_first_row: NDArray[np.float64] = field(repr=False)  # t = 0 row, (n, N)
    sensitivity: float = 0.0


def optimal_portfolio(market: MarketSpec, solution: BSVIESolution, grid: TimeGrid, z: ArrayLike) -> PortfolioFields:
    n, N = solution.X_hat.shape[0], grid.n_steps
    X = solution.X_hat[:, :N]
    if np.any(~(X > 0)):
        raise NegativeWealthError("optimal portfolio needs X_hat > 0")
    zc = z_column(z, n)
    t = grid.points[:N]
    sigma_diag = evaluate(market.sigma0, (n, N), t[None, :], t[None, :], zc)
    sigma_row = evaluate(market.sigma0, (n, N), 0.0, t[None, :], zc)
    pi_diag = solution.K_diag / (sigma_diag * X)
    pi_row = solution.K_first_row / (sigma_row * X)
    scale = float(np.sqrt(np.mean(pi_diag ** 2)))
    sensitivity = float(np.sqrt(np.mean((pi_row - pi_diag) ** 2)) / scale) if scale > 0 else 0.0
    if sensitivity > SENSITIVITY_WARNING:
        logger.warning("pi_hat depends on the t-convention: diagonal vs t=0 row differ by %.1f%%",
                       100 * sensitivity)
    return PortfolioFields(pi_hat=pi_diag, pi_first_row=pi_row, sensitivity=sensitivity)


@dataclass
class WealthReport:
    state: StateField = field(repr=False)
    min_wealth: float
    representation_residual: float


def market_coefficients(market: MarketSpec) -> CoefficientSet:
    """Wealth equation as a controlled Volterra equation with u = pi."""
    def b(t, s, x, u, z):
        return market.b0(t, s, z) * u * x

    def sigma(t, s, x, u, z):
        return market.sigma0(t, s, z) * u * x

    return CoefficientSet(
        xi=lambda t, z: market.x0,
        b=b,
        sigma=sigma,
        partials={
            "b_x": lambda t, s, x, u, z: market.b0(t, s, z) * u,
            "b_u": lambda t, s, x, u, z: market.b0(t, s, z) * x,
            "sigma_x": lambda t, s, x, u, z: market.sigma0(t, s, z) * u,
            "sigma_u": lambda t, s, x, u, z: market.sigma0(t, s, z) * x,
        },
        name=f"market({market.name})",
    )


def wealth_path(market: MarketSpec, pi: NDArray[np.float64], z: ArrayLike, paths: DriverPaths,
                grid: TimeGrid, signal=None) -> WealthReport:
    """
    Forward wealth for the fraction ``pi`` (n, N) or (n, N + 1), and the
    residual of X(T) against x0 exp(int (b0 pi + alpha/X - sigma0^2 pi^2 / 2) ds + int sigma0 pi dB),
    where alpha collects the t-derivatives of the kernels over the history.
    """
    pi = np.asarray(pi, dtype=float)
    if not np.all(np.isfinite(pi)):
        raise ConfigurationError("portfolio fraction must be finite")
    state = solve_forward(market_coefficients(market), ControlField.from_array(pi, name="pi"), z, paths, grid, signal)
    X, U = state.X, state.U
    min_wealth = float(X.min())
    if min_wealth <= 0:
        raise NegativeWealthError(f"wealth reached {min_wealth:.4g}")
    n, N, dt = paths.n_scenarios, grid.n_steps, grid.dt
    zc = z_column(z, n)
    t = grid.points
    dB = paths.brownian_increments
    db0, dsig = partial(market.b0, 0), partial(market.sigma0, 0)
    log_x = np.full(n, math.log(market.x0))
    for k in range(N):
        alpha = np.zeros(n)
        if k:
            s = t[None, :k]
            weights = U[:, :k] * X[:, :k]
            alpha = (evaluate(db0, (n, k), t[k], s, zc) * weights).sum(axis=1) * dt \
                + (evaluate(dsig, (n, k), t[k], s, zc) * weights * dB[:, :k]).sum(axis=1)
        b_diag = evaluate(market.b0, (n,), t[k], t[k], zc[:, 0])
        s_diag = evaluate(market.sigma0, (n,), t[k], t[k], zc[:, 0])
        log_x += (b_diag * U[:, k] + alpha / X[:, k] - 0.5 * (s_diag * U[:, k]) ** 2) * dt + s_diag * U[:, k] * dB[:, k]
    residual = float(np.sqrt(np.mean((np.exp(log_x) - X[:, N]) ** 2)) / np.sqrt(np.mean(X[:, N] ** 2)))
    return WealthReport(state=state, min_wealth=min_wealth, representation_residual=residual)


@dataclass
class PortfolioSolution:
    z: float
    c: float
    budget: BudgetSolution
    fields: MartingaleFields = field(repr=False)
    terminal: NDArray[np.float64] = field(repr=False)
    bsvie: BSVIESolution = field(repr=False)
    portfolio: PortfolioFields = field(repr=False)

    @property
    def pi_hat(self) -> NDArray[np.float64]:
        return self.portfolio.pi_hat

    @property
    def X_hat(self) -> NDArray[np.float64]:
        return self.bsvie.X_hat


def solve_portfolio(
    market: MarketSpec,
    donsker,
    z: float,
    paths: DriverPaths,
    grid: TimeGrid,
    regression: RegressionSpec | None = None,
    bracket: tuple[float, float] = (1e-4, 1e4),
) -> PortfolioSolution:
    """Fields, budget constant, BSVIE and diagonal fraction at one insider value z."""
    signal = getattr(donsker, "signal", None)
    fields = martingale_fields(market, donsker, paths, grid, z)
    budget = solve_c(market, z, fields, paths, grid, bracket, regression, signal)
    terminal = terminal_wealth(market, budget.c, fields)
    bsvie = solve_bsvie(market, terminal, z, fields, paths, grid, regression, signal)
    portfolio = optimal_portfolio(market, bsvie, grid, z)
    return PortfolioSolution(z=float(z), c=budget.c, budget=budget, fields=fields, terminal=terminal,
                             bsvie=bsvie, portfolio=portfolio)


def aggregate_over_z(z_nodes: ArrayLike, values: Sequence[NDArray[np.float64]], realized: NDArray[np.float64]) -> NDArray[np.float64]:
    """
    Substitute z = Z scenario by scenario: ``values[i]`` holds a field at
    z_nodes[i] with shape (n, ...); the result interpolates linearly in z.
    """
    z_nodes = np.asarray(z_nodes, dtype=float)
    stack = np.stack(values, axis=0)                     # (n_z, n, ...)
    if z_nodes.size == 1:
        return stack[0]
    realized = np.clip(np.asarray(realized, dtype=float), z_nodes[0], z_nodes[-1])
    upper = np.clip(np.searchsorted(z_nodes, realized, side="right"), 1, z_nodes.size - 1)
    lower = upper - 1
    width = z_nodes[upper] - z_nodes[lower]
    weight = (realized - z_nodes[lower]) / width
    rows = np.arange(realized.size)
    shape = (-1,) + (1,) * (stack.ndim - 2)
    w = weight.reshape(shape)
    return (1.0 - w) * stack[lower, rows] + w * stack[upper, rows]


@dataclass
class ValueReport:
    value: float
    standard_error: float
    merton_value: float
    merton_standard_error: float
    min_wealth: float

    @property
    def insider_gain(self) -> float:
        return self.value - self.merton_value


def insider_value(
    market: MarketSpec,
    donsker,
    paths: DriverPaths,
    grid: TimeGrid,
    c_nodes: ArrayLike,
    c_values: ArrayLike,
) -> tuple[float, float, NDArray[np.float64]]:
    """E[U(X_hat(T, Z))] - U(x0) with c(z) interpolated at the realized Z; also returns X_hat(T, Z)."""
    signal = donsker.signal
    realized = signal.terminal
    c_nodes = np.asarray(c_nodes, dtype=float)
    c = np.interp(realized, c_nodes, np.asarray(c_values, dtype=float)) if c_nodes.size > 1 \
        else np.full(realized.shape, float(np.asarray(c_values).ravel()[0]))
    fields = martingale_fields(market, donsker, paths, grid, realized)
    terminal = terminal_wealth(market, c, fields)
    gains = market.utility.value(terminal) - float(market.utility.value(market.x0))
    mean, se = mean_and_se(gains)
    return float(mean), float(se), terminal


def merton_value(market: MarketSpec, paths: DriverPaths, grid: TimeGrid, z: float = 0.0) -> tuple[float, float, WealthReport]:
    """Value of the non-insider fraction b0(t,t)/sigma0(t,t)^2 through the forward wealth equation."""
    pi = np.broadcast_to(market.merton_fraction(grid.points, z), (paths.n_scenarios, grid.n_steps + 1))
    report = wealth_path(market, pi, z, paths, grid)
    gains = market.utility.value(report.state.terminal) - float(market.utility.value(market.x0))
    mean, se = mean_and_se(gains)
    return float(mean), float(se), report


def analytic_log_fraction(market: MarketSpec, donsker, grid: TimeGrid, z: ArrayLike) -> NDArray[np.float64]:
    """(Phi - theta0) / sigma0 on the diagonal; equals b0/sigma0^2 + Phi/sigma0 for constant kernels."""
    n, N = donsker.n_scenarios, grid.n_steps
    zc = z_column(z, n)
    t = grid.points[:N]
    phi = donsker.phi_path(z, strict=False)[:, :N]
    theta = -evaluate(market.b0, (n, N), t[None, :], t[None, :], zc) / evaluate(market.sigma0, (n, N), t[None, :], t[None, :], zc)
    return (phi - theta) / evaluate(market.sigma0, (n, N), t[None, :], t[None, :], zc)
