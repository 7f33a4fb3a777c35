"""
First-order chaos insider signal

    Z(t) = int_0^t beta(s) dB(s) + int_0^t int psi(s, zeta) N~(ds, dzeta),  t <= T0,

and the remaining-variance profile used by the Donsker formulas.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from app.core.errors import ChaosSpecError, HorizonError
from app.services.paths import DriverPaths, LevyModel, TimeGrid, compensated_integral_path

logger = logging.getLogger(__name__)

DEFAULT_SUBINTERVALS = 512
# beta is flagged when min|beta| falls below this fraction of max|beta|
BETA_FLAG_RATIO = 1e-3

TimeFunction = Callable[[ArrayLike], ArrayLike]
MarkFunction = Callable[[ArrayLike, ArrayLike], ArrayLike]


@dataclass(frozen=True)
class ChaosSpec:
    beta: TimeFunction
    horizon: float
    psi: MarkFunction | None = None
    name: str = "custom"

    def beta_at(self, t: ArrayLike) -> NDArray[np.float64]:
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(np.asarray(self.beta(t), dtype=float), t.shape)

    def psi_at(self, t: ArrayLike, zeta: ArrayLike) -> NDArray[np.float64]:
        t, zeta = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(zeta, dtype=float))
        if self.psi is None:
            return np.zeros(t.shape)
        return np.broadcast_to(np.asarray(self.psi(t, zeta), dtype=float), t.shape)

    def validate(self, grid: TimeGrid | None = None) -> "ChaosSpec":
        """Reject beta vanishing on [0, T0]; warn when it is not bounded away from 0."""
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ChaosSpecError(f"insider horizon must be positive, got {self.horizon}")
        probe = np.linspace(0.0, self.horizon, DEFAULT_SUBINTERVALS + 1)
        if grid is not None:
            probe = np.union1d(probe, grid.extended_points()[: grid.signal_steps + 1])
        values = np.abs(self.beta_at(probe))
        if not np.all(np.isfinite(values)):
            raise ChaosSpecError("beta must be finite on [0, T0]")
        if values.min() == 0.0:
            raise ChaosSpecError("beta must be non-zero on [0, T0]")
        if values.min() < BETA_FLAG_RATIO * values.max():
            logger.warning("beta is not bounded away from 0 (min |beta| = %.3g); "
                           "Fourier quadrature may lose accuracy", values.min())
        return self

    def is_gaussian(self, levy: LevyModel) -> bool:
        """True when the jump part of Z vanishes identically."""
        if not levy.active or self.psi is None:
            return True
        probe = np.linspace(0.0, self.horizon, 65)
        return bool(np.all(self.psi_at(probe[:, None], levy.marks[None, :]) == 0.0))


@dataclass(frozen=True)
class SignalPaths:
    values: NDArray[np.float64] = field(repr=False)      # (n, N + 1)
    terminal: NDArray[np.float64] = field(repr=False)    # Z(T0), (n,)
    horizon_step: int
    grid: TimeGrid = field(repr=False)

    @property
    def n_scenarios(self) -> int:
        return self.values.shape[0]


def simulate_signal(spec: ChaosSpec, paths: DriverPaths, grid: TimeGrid) -> SignalPaths:
    """
    Z(t_k) = sum_{j<k} beta(t_j) dB_j + compensated psi-integral up to t_k.

    When T0 > T the extended noise carries Z up to T0; Z is frozen at
    Z(T0) on grid points beyond the insider horizon.
    """
    spec.validate(grid)
    steps = grid.signal_steps
    t_left = np.arange(steps) * grid.dt
    dB = paths.increments[:, :steps]
    full = np.zeros((paths.n_scenarios, steps + 1))
    np.cumsum(spec.beta_at(t_left) * dB, axis=1, out=full[:, 1:])
    if paths.levy.active and spec.psi is not None:
        jump_part = compensated_integral_path(paths, spec.psi_at, extended=True)
        full += jump_part[:, : steps + 1]
    if steps >= grid.n_steps:
        values = full[:, : grid.n_steps + 1]
    else:
        values = np.concatenate([full, np.repeat(full[:, -1:], grid.n_steps - steps, axis=1)], axis=1)
    return SignalPaths(values=values, terminal=full[:, steps].copy(), horizon_step=steps, grid=grid)


def _time_nodes(spec: ChaosSpec, t: float, grid: TimeGrid | None) -> NDArray[np.float64]:
    length = spec.horizon - t
    if grid is None:
        n = DEFAULT_SUBINTERVALS
    else:
        n = max(1, int(math.ceil(length / grid.dt - 1e-9)))
    return np.linspace(t, spec.horizon, n + 1)


def _check_time(spec: ChaosSpec, t: float) -> None:
    if t < 0 or t > spec.horizon + 1e-12:
        raise HorizonError(f"time {t} outside [0, T0={spec.horizon}]")


def remaining_variance(
    spec: ChaosSpec,
    t: float,
    levy: LevyModel | None = None,
    grid: TimeGrid | None = None,
) -> tuple[float, float]:
    """(V_B, V_N) on [t, T0] by the trapezoid rule; grid spacing when a grid is given."""
    _check_time(spec, t)
    if t >= spec.horizon:
        return 0.0, 0.0
    s = _time_nodes(spec, t, grid)
    v_b = float(np.trapezoid(spec.beta_at(s) ** 2, s))
    v_n = 0.0
    if levy is not None and levy.active and spec.psi is not None:
        psi2 = spec.psi_at(s[:, None], levy.marks[None, :]) ** 2
        v_n = float(np.trapezoid((psi2 * levy.nu_weights).sum(axis=1), s))
    return v_b, v_n


def jump_exponent(
    spec: ChaosSpec,
    levy: LevyModel,
    t: float,
    x: ArrayLike,
    grid: TimeGrid | None = None,
) -> NDArray[np.complex128]:
    """Psi(t, x) = int_t^T0 sum_i lambda p_i (exp(i x psi) - 1 - i x psi) ds."""
    _check_time(spec, t)
    x = np.asarray(x, dtype=float)
    if not levy.active or spec.psi is None or t >= spec.horizon:
        return np.zeros(x.shape, dtype=complex)
    s = _time_nodes(spec, t, grid)
    psi = spec.psi_at(s[:, None], levy.marks[None, :])                  # (S, m)
    phase = 1j * x[..., None, None] * psi                               # (..., S, m)
    integrand = ((np.exp(phase) - 1.0 - phase) * levy.nu_weights).sum(axis=-1)
    return np.trapezoid(integrand, s, axis=-1)
