"""
Euler scheme for the z-parameterized stochastic Volterra equation

    X(t, z) = xi(t, z) + int_0^t b(t, s, X(s), u(s), z) ds
                       + int_0^t sigma(t, s, X(s), u(s), z) dB(s)
                       + int_0^t int gamma(t, s, X(s), u(s), z, zeta) N~(ds, dzeta).

The kernels depend on the outer time t, so the whole history is
re-evaluated at every grid point (O(N^2) kernel calls per z).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray

from app.core.errors import ConfigurationError, ControlBoundsError, SolverDivergenceError
from app.services.chaos import SignalPaths
from app.services.paths import DriverPaths, TimeGrid
from app.utils.numerics import evaluate, partial

logger = logging.getLogger(__name__)

Kernel = Callable[..., ArrayLike]
ARGUMENTS = {"t": 0, "s": 1, "x": 2, "u": 3}
BOUND_TOL = 1e-12


@dataclass(frozen=True)
class ControlContext:
    """Information available to a control at grid step ``step``."""
    step: int
    t: float
    z: NDArray[np.float64]
    state: NDArray[np.float64]
    brownian: NDArray[np.float64]
    signal: NDArray[np.float64]


@dataclass(frozen=True)
class ControlField:
    func: Callable[[ControlContext], ArrayLike]
    bounds: tuple[float, float] = (-math.inf, math.inf)
    name: str = "custom"
    params: tuple[float, ...] = ()

    def __call__(self, ctx: ControlContext) -> NDArray[np.float64]:
        values = np.broadcast_to(np.asarray(self.func(ctx), dtype=float), ctx.state.shape)
        lo, hi = self.bounds
        if np.any(values < lo - BOUND_TOL) or np.any(values > hi + BOUND_TOL):
            raise ControlBoundsError(f"control '{self.name}' leaves U=[{lo}, {hi}] at t={ctx.t:g}")
        return values

    def distance_to_boundary(self, values: NDArray[np.float64]) -> NDArray[np.float64]:
        lo, hi = self.bounds
        return np.minimum(values - lo, hi - values)

    @classmethod
    def constant(cls, value: float, bounds: tuple[float, float] = (-math.inf, math.inf)) -> "ControlField":
        return cls(lambda ctx: value, bounds, f"constant({value:g})", (float(value),))

    @classmethod
    def piecewise(cls, breakpoints: Sequence[float], values: Sequence[float],
                  bounds: tuple[float, float] = (-math.inf, math.inf)) -> "ControlField":
        """values[i] on [breakpoints[i-1], breakpoints[i]); one more value than breakpoints."""
        if len(values) != len(breakpoints) + 1:
            raise ConfigurationError("piecewise control needs len(values) == len(breakpoints) + 1")
        edges = np.asarray(breakpoints, dtype=float)
        levels = np.asarray(values, dtype=float)

        def func(ctx: ControlContext) -> float:
            return float(levels[np.searchsorted(edges, ctx.t, side="right")])

        label = ",".join(f"{v:g}" for v in levels)
        return cls(func, bounds, f"piecewise({label})", tuple(levels))

    @classmethod
    def affine(cls, intercept: float, slope: float,
               bounds: tuple[float, float] = (-math.inf, math.inf)) -> "ControlField":
        """intercept + slope * (z - B(t))."""
        return cls(lambda ctx: intercept + slope * (ctx.z - ctx.brownian), bounds,
                   f"affine({intercept:g},{slope:g})", (float(intercept), float(slope)))

    @classmethod
    def insider_affine(cls, intercept: float, slope: float, horizon: float,
                       bounds: tuple[float, float] = (-math.inf, math.inf)) -> "ControlField":
        """intercept + slope * (z - B(t)) / (T0 - t)."""
        def func(ctx: ControlContext) -> NDArray[np.float64]:
            return intercept + slope * (ctx.z - ctx.brownian) / (horizon - ctx.t)

        return cls(func, bounds, f"insider_affine({intercept:g},{slope:g})", (float(intercept), float(slope)))

    @classmethod
    def from_array(cls, values: NDArray[np.float64],
                   bounds: tuple[float, float] = (-math.inf, math.inf), name: str = "array") -> "ControlField":
        """Open-loop control read column by column; shape (n, N) or (n, N + 1)."""
        values = np.asarray(values, dtype=float)

        def func(ctx: ControlContext) -> NDArray[np.float64]:
            return values[:, min(ctx.step, values.shape[1] - 1)]

        return cls(func, bounds, name)


def admissible_direction(base: ControlField, beta0: ControlField, bound: float | None = None) -> ControlField:
    """
    Perturbation beta = delta * beta0 with delta = min(1, dist(u, boundary of U) / (2K)),
    K = sup |beta0|, so that u + a beta stays in U for |a| < 1.
    """
    def func(ctx: ControlContext) -> NDArray[np.float64]:
        raw = np.asarray(beta0(ctx), dtype=float)
        k = bound if bound is not None else float(np.max(np.abs(raw)))
        if k <= 0:
            return np.zeros_like(raw)
        dist = base.distance_to_boundary(base(ctx))
        with np.errstate(invalid="ignore"):
            delta = np.where(np.isinf(dist), 1.0, np.minimum(1.0, dist / (2.0 * k)))
        return delta * raw

    return ControlField(func, (-math.inf, math.inf), f"direction({beta0.name})")


@dataclass(frozen=True)
class CoefficientSet:
    """
    Volterra coefficients. Kernels take (t, s, x, u, z) and gamma also zeta;
    all callables must broadcast over numpy arrays. ``partials`` maps keys
    such as ``"b_x"``, ``"sigma_u"``, ``"gamma_t"`` or ``"xi_t"`` to analytic
    derivatives; missing ones fall back to central differences.
    """
    xi: Callable[[ArrayLike, ArrayLike], ArrayLike]
    b: Kernel
    sigma: Kernel
    gamma: Kernel | None = None
    partials: Mapping[str, Kernel] = field(default_factory=dict)
    name: str = "custom"

    def kernel(self, name: str) -> Kernel:
        if name == "gamma" and self.gamma is None:
            return _zero_gamma
        return getattr(self, name)

    def has_partial(self, key: str) -> bool:
        return key in self.partials

    def partial(self, name: str, wrt: str) -> Kernel:
        key = f"{name}_{wrt}"
        if key in self.partials:
            return self.partials[key]
        if name == "gamma" and self.gamma is None:
            return _zero_gamma
        if name == "xi":
            return partial(self.xi, 0)
        return partial(self.kernel(name), ARGUMENTS[wrt])

    def depends_on(self, wrt: str, names: Sequence[str] = ("b", "sigma", "gamma"), probes: int = 4,
                   bounds: tuple[float, float] = (-1.0, 1.0), marks: Sequence[float] = (1.0,)) -> bool:
        """Probe whether any of the named kernels changes with argument ``wrt`` ('t' or 'x')."""
        rng = np.random.default_rng(7)
        lo, hi = (max(bounds[0], -1.0), min(bounds[1], 1.0))
        t = rng.uniform(0.1, 1.0, probes)
        s = t * rng.uniform(0.0, 0.9, probes)
        x = rng.uniform(0.5, 1.5, probes)
        u = rng.uniform(lo, hi, probes)
        z = rng.uniform(-1.0, 1.0, probes)
        first = (t, s, x, u, z)
        second = {"t": (t + 0.37, s, x, u, z), "x": (t, s, x + 0.73, u, z)}[wrt]
        for name in [n for n in names if n != "gamma"]:
            f = self.kernel(name)
            if not np.allclose(evaluate(f, (probes,), *first), evaluate(f, (probes,), *second), rtol=0, atol=1e-14):
                return True
        if self.gamma is not None and "gamma" in names:
            for zeta in marks:
                if not np.allclose(evaluate(self.gamma, (probes,), *first, zeta),
                                   evaluate(self.gamma, (probes,), *second, zeta), rtol=0, atol=1e-14):
                    return True
        return False

    def spot_check(self, grid: TimeGrid, bounds: tuple[float, float] = (-1.0, 1.0), probes: int = 16) -> None:
        """Finite values and stable finite differences at random points of the domain."""
        rng = np.random.default_rng(11)
        lo, hi = (max(bounds[0], -1.0), min(bounds[1], 1.0))
        t = rng.uniform(grid.dt, grid.horizon, probes)
        s = t * rng.uniform(0.0, 1.0, probes)
        x = rng.uniform(0.5, 1.5, probes)
        u = rng.uniform(lo, hi, probes)
        z = rng.uniform(-1.0, 1.0, probes)
        for name in ("b", "sigma"):
            f = self.kernel(name)
            values = evaluate(f, (probes,), t, s, x, u, z)
            if not np.all(np.isfinite(values)):
                raise ConfigurationError(f"coefficient {name} is not finite on the evaluation domain")
            for wrt, arg in (("x", 2), ("u", 3)):
                args = [t, s, x, u, z]
                coarse = _difference(f, args, arg, 1e-4)
                fine = _difference(f, args, arg, 1e-5)
                if np.any(np.abs(coarse - fine) > 1e-2 * (1.0 + np.abs(fine))):
                    raise ConfigurationError(f"coefficient {name} is not C1 in {wrt} on the evaluation domain")


def _difference(f: Kernel, args: list, argnum: int, h: float) -> NDArray[np.float64]:
    up, down = list(args), list(args)
    up[argnum] = args[argnum] + h
    down[argnum] = args[argnum] - h
    return (np.asarray(f(*up), dtype=float) - np.asarray(f(*down), dtype=float)) / (2.0 * h)


def _zero_gamma(t, s, x, u, z, zeta=0.0):
    return 0.0


@dataclass(frozen=True)
class StateField:
    X: NDArray[np.float64] = field(repr=False)     # (n, N + 1)
    U: NDArray[np.float64] = field(repr=False)     # control values along the path, (n, N + 1)
    z: float | NDArray[np.float64]
    grid: TimeGrid = field(repr=False)

    @property
    def terminal(self) -> NDArray[np.float64]:
        return self.X[:, -1]

    def to_frame(self, scenarios: Sequence[int]) -> pd.DataFrame:
        scenarios = np.asarray(scenarios, dtype=int)
        t = self.grid.points
        z = np.broadcast_to(np.asarray(self.z, dtype=float), (self.X.shape[0],))[scenarios]
        return pd.DataFrame({
            "scenario": np.repeat(scenarios, t.size),
            "t": np.tile(t, scenarios.size),
            "z": np.repeat(z, t.size),
            "X": self.X[scenarios].ravel(),
        })


def z_column(z: ArrayLike, n: int) -> NDArray[np.float64]:
    """z as an (n, 1) column so kernels broadcast against history blocks."""
    z = np.asarray(z, dtype=float)
    if z.ndim == 0:
        return np.full((n, 1), float(z))
    if z.shape != (n,):
        raise ConfigurationError(f"z must be a scalar or have one value per scenario, got shape {z.shape}")
    return z.reshape(n, 1)


class _Drivers:
    """Noise views shared by the forward and variational sweeps."""

    def __init__(self, paths: DriverPaths, grid: TimeGrid, signal: SignalPaths | None, jumps: bool = False):
        self.n = paths.n_scenarios
        self.dt = grid.dt
        self.t = grid.points
        self.dB = paths.brownian_increments
        self.B = paths.brownian_path()
        self.Z = signal.values if signal is not None else np.zeros_like(self.B)
        self.jumps = jumps and paths.levy.active
        self.marks = paths.levy.marks
        self.dN = paths.compensated_counts() if self.jumps else None

    def context(self, k: int, zc: NDArray, state: NDArray) -> ControlContext:
        return ControlContext(step=k, t=float(self.t[k]), z=zc[:, 0], state=state,
                              brownian=self.B[:, k], signal=self.Z[:, k])


def _history_sum(kernels: tuple[Kernel, Kernel, Kernel], weights: tuple, tk: float, drv: _Drivers,
                 k: int, X: NDArray, U: NDArray, zc: NDArray) -> NDArray[np.float64]:
    """sum_j [k_b dt + k_sigma dB_j + sum_i k_gamma(zeta_i) dN_ij] over j < k, with optional multipliers."""
    b, sigma, gamma = kernels
    mult_b, mult_sigma, mult_gamma = weights
    shape = (drv.n, k)
    s = drv.t[:k]
    xh, uh = X[:, :k], U[:, :k]
    total = (evaluate(b, shape, tk, s, xh, uh, zc) * mult_b(k)).sum(axis=1) * drv.dt
    total += (evaluate(sigma, shape, tk, s, xh, uh, zc) * mult_sigma(k) * drv.dB[:, :k]).sum(axis=1)
    if drv.jumps:
        for i, zeta in enumerate(drv.marks):
            total += (evaluate(gamma, shape, tk, s, xh, uh, zc, zeta) * mult_gamma(k) * drv.dN[:, :k, i]).sum(axis=1)
    return total


def solve_forward(
    coeffs: CoefficientSet,
    control: ControlField,
    z: ArrayLike,
    paths: DriverPaths,
    grid: TimeGrid,
    signal: SignalPaths | None = None,
) -> StateField:
    drv = _Drivers(paths, grid, signal, coeffs.gamma is not None)
    n, N = drv.n, grid.n_steps
    zc = z_column(z, n)
    X = np.empty((n, N + 1))
    U = np.empty((n, N + 1))

    def one(k: int) -> float:
        return 1.0

    kernels = (coeffs.b, coeffs.sigma, coeffs.kernel("gamma"))
    for k in range(N + 1):
        tk = float(drv.t[k])
        value = np.broadcast_to(np.asarray(coeffs.xi(tk, zc[:, 0]), dtype=float), (n,)).copy()
        if k:
            value += _history_sum(kernels, (one, one, one), tk, drv, k, X, U, zc)
        if not np.all(np.isfinite(value)):
            raise SolverDivergenceError("forward Volterra solve produced a non-finite state", step=k)
        X[:, k] = value
        U[:, k] = control(drv.context(k, zc, value))
    return StateField(X=X, U=U, z=np.asarray(z, dtype=float) if np.ndim(z) else float(z), grid=grid)


def direction_values(direction: ControlField, state: StateField, paths: DriverPaths,
                     signal: SignalPaths | None = None) -> NDArray[np.float64]:
    """Evaluate a direction along an already solved state; shape (n, N + 1)."""
    drv = _Drivers(paths, state.grid, signal)
    zc = z_column(state.z, drv.n)
    return np.stack([direction(drv.context(k, zc, state.X[:, k])) for k in range(state.grid.n_steps + 1)], axis=1)


def solve_variational(
    coeffs: CoefficientSet,
    control: ControlField,
    direction: ControlField,
    z: ArrayLike,
    paths: DriverPaths,
    grid: TimeGrid,
    base_state: StateField,
    signal: SignalPaths | None = None,
) -> StateField:
    """
    Derivative process chi = d/da X^{u + a beta} at a = 0: a linear Volterra
    equation with x- and u-partials evaluated along ``base_state``.
    ``U`` of the result holds the direction values.
    """
    drv = _Drivers(paths, grid, signal, coeffs.gamma is not None)
    n, N = drv.n, grid.n_steps
    zc = z_column(z, n)
    beta = direction_values(direction, base_state, paths, signal)
    X, U = base_state.X, base_state.U
    chi = np.zeros((n, N + 1))
    partials = {name: (coeffs.partial(name, "x"), coeffs.partial(name, "u")) for name in ("b", "sigma", "gamma")}
    for k in range(1, N + 1):
        tk = float(drv.t[k])
        history_chi = lambda j: chi[:, :j]
        history_beta = lambda j: beta[:, :j]
        value = _history_sum(tuple(p[0] for p in partials.values()), (history_chi,) * 3, tk, drv, k, X, U, zc)
        value += _history_sum(tuple(p[1] for p in partials.values()), (history_beta,) * 3, tk, drv, k, X, U, zc)
        if not np.all(np.isfinite(value)):
            raise SolverDivergenceError("variational Volterra solve produced a non-finite value", step=k)
        chi[:, k] = value
    return StateField(X=chi, U=beta, z=base_state.z, grid=grid)
