"""
Conditional Donsker-delta field of a first-order chaos signal.

For t < T0 the field M(t, z) = E[delta_Z(z) | F_t] is the conditional
density of Z(T0) given F_t,

    M(t, z) = (1/2pi) int exp(i x Z(t) + Psi(t, x) - x^2 V_B(t) / 2 - i x z) dx,

and its Hida-Malliavin traces carry the extra factors i x beta(t)
(Brownian) and exp(i x psi(t, zeta)) - 1 (jumps). Without jumps the
integral has the Gaussian closed form, which is used as a fast path.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Literal, Sequence

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray

from app.core.config import settings
from app.core.errors import (ChaosSpecError, FarTailError, HorizonError,
                             MarkSupportError, QuadratureError)
from app.services.chaos import ChaosSpec, SignalPaths, jump_exponent, remaining_variance
from app.services.paths import LevyModel

logger = logging.getLogger(__name__)

Kind = Literal["density", "derivative_b", "derivative_n"]
Method = Literal["auto", "quadrature", "closed_form"]


@dataclass(frozen=True)
class QuadratureSpec:
    """Truncated trapezoid rule in the Fourier variable x."""
    n_nodes: int = 2048
    x_cutoff: float | None = None
    envelope: float = 1e-12
    z_window: tuple[float, float] | None = None
    z_nodes: int = 41
    imaginary_tol: float = dataclass_field(default_factory=lambda: settings.IMAGINARY_RESIDUE_TOL)
    chunk: int = 256

    def __post_init__(self) -> None:
        if self.n_nodes < 2 or self.n_nodes % 2:
            raise ChaosSpecError(f"quadrature.n_nodes must be a positive even number, got {self.n_nodes}")
        if self.x_cutoff is not None and self.x_cutoff <= 0:
            raise ChaosSpecError("quadrature.x_cutoff must be positive")
        if not 0 < self.envelope < 1:
            raise ChaosSpecError("quadrature.envelope must lie in (0, 1)")

    def cutoff(self, v_b: float) -> float:
        """|x| where exp(-x^2 V_B / 2) drops to the envelope."""
        if self.x_cutoff is not None:
            return self.x_cutoff
        return math.sqrt(2.0 * math.log(1.0 / self.envelope) / v_b)

    def nodes(self, v_b: float) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        c = self.cutoff(v_b)
        x = np.linspace(-c, c, self.n_nodes + 1)
        w = np.full(x.size, 2.0 * c / self.n_nodes)
        w[[0, -1]] *= 0.5
        return x, w

    def z_grid(self) -> NDArray[np.float64]:
        if self.z_window is None:
            raise ChaosSpecError("quadrature.z_window is not set")
        return np.linspace(self.z_window[0], self.z_window[1], self.z_nodes)


def _gaussian(u: NDArray[np.float64], v: float) -> NDArray[np.float64]:
    return np.exp(-u * u / (2.0 * v)) / math.sqrt(2.0 * math.pi * v)


class DonskerField:
    """
    M, M_B, M_N and Phi for one simulated signal.

    ``z`` arguments are either scalars / per-scenario arrays of shape
    (n,) (paired evaluation, result (n,)) or, with ``grid=True``, a vector
    of z-nodes shared by every scenario (result (n, n_z)).
    """
    neutral = False

    def __init__(
        self,
        spec: ChaosSpec,
        levy: LevyModel,
        signal: SignalPaths,
        quad: QuadratureSpec | None = None,
        method: Method = "auto",
        density_floor: float | None = None,
    ):
        self.spec = spec
        self.levy = levy
        self.signal = signal
        self.grid = signal.grid
        self.quad = quad or QuadratureSpec(n_nodes=settings.QUADRATURE_NODES)
        self.density_floor = settings.DENSITY_FLOOR if density_floor is None else density_floor
        self.gaussian = spec.is_gaussian(levy)
        if method == "closed_form" and not self.gaussian:
            raise ChaosSpecError("closed-form Donsker field requires psi = 0 or no jumps")
        self.closed_form = method == "closed_form" or (method == "auto" and self.gaussian)
        self._variance: dict[int, tuple[float, float]] = {}
        self._exponent: dict[int, tuple[NDArray, NDArray, NDArray]] = {}

    @property
    def n_scenarios(self) -> int:
        return self.signal.n_scenarios

    # -- time handling -------------------------------------------------
    def index(self, t: float) -> int:
        k = self.grid.index_of(t)
        if k > self.grid.n_steps:
            raise HorizonError(f"time {t} beyond the simulated horizon T={self.grid.horizon}")
        if t >= self.spec.horizon - 1e-12:
            raise HorizonError(f"Donsker field degenerates for t={t} >= T0={self.spec.horizon}")
        return k

    def variance(self, k: int) -> tuple[float, float]:
        if k not in self._variance:
            v_b, v_n = remaining_variance(self.spec, k * self.grid.dt, self.levy, self.grid)
            if v_b <= 0:
                raise HorizonError(f"remaining Brownian variance vanishes at t={k * self.grid.dt}")
            self._variance[k] = (v_b, v_n)
        return self._variance[k]

    def _base(self, k: int) -> tuple[NDArray, NDArray, NDArray]:
        """Nodes, weights and the z-free part of the integrand at t_k."""
        if k not in self._exponent:
            v_b, _ = self.variance(k)
            x, w = self.quad.nodes(v_b)
            exponent = jump_exponent(self.spec, self.levy, k * self.grid.dt, x, self.grid) - 0.5 * x * x * v_b
            self._exponent[k] = (x, w, w * np.exp(exponent) / (2.0 * math.pi))
        return self._exponent[k]

    # -- quadrature ----------------------------------------------------
    def _factor(self, kind: Kind, k: int, x: NDArray, zeta: float | None) -> NDArray:
        t = k * self.grid.dt
        if kind == "density":
            return np.ones_like(x, dtype=complex)
        if kind == "derivative_b":
            return 1j * x * float(self.spec.beta_at(t))
        psi = float(self.spec.psi_at(t, zeta))
        return np.exp(1j * x * psi) - 1.0

    def _quadrature(self, kind: Kind, k: int, z: ArrayLike, grid: bool, zeta: float | None) -> NDArray:
        x, _, base = self._base(k)
        weights = base * self._factor(kind, k, x, zeta)
        z_t = self.signal.values[:, k]
        n = z_t.size
        size = self.quad.chunk
        if grid:
            nodes = np.atleast_1d(np.asarray(z, dtype=float))
            kernel = np.exp(-1j * x[:, None] * nodes[None, :])
            out = np.empty((n, nodes.size), dtype=complex)
            for lo in range(0, n, size):
                phase = np.exp(1j * z_t[lo:lo + size, None] * x[None, :]) * weights
                out[lo:lo + size] = phase @ kernel
        else:
            zz = np.broadcast_to(np.asarray(z, dtype=float), (n,))
            out = np.empty(n, dtype=complex)
            for lo in range(0, n, size):
                shift = z_t[lo:lo + size] - zz[lo:lo + size]
                out[lo:lo + size] = (np.exp(1j * shift[:, None] * x[None, :]) * weights).sum(axis=1)
        residue = float(np.max(np.abs(out.imag))) if out.size else 0.0
        if residue > self.quad.imaginary_tol:
            raise QuadratureError(f"imaginary residue {residue:.3g} exceeds {self.quad.imaginary_tol:g} "
                                  f"({kind}, t={k * self.grid.dt:g})")
        return out.real

    # -- closed form ---------------------------------------------------
    def _closed(self, kind: Kind, k: int, z: ArrayLike, grid: bool) -> NDArray:
        v_b, _ = self.variance(k)
        z_t = self.signal.values[:, k]
        if grid:
            u = np.atleast_1d(np.asarray(z, dtype=float))[None, :] - z_t[:, None]
        else:
            u = np.broadcast_to(np.asarray(z, dtype=float), z_t.shape) - z_t
        if kind == "derivative_n":
            return np.zeros(u.shape)
        density = _gaussian(u, v_b)
        if kind == "density":
            return density
        return float(self.spec.beta_at(k * self.grid.dt)) * u / v_b * density

    def _evaluate(self, kind: Kind, t: float, z: ArrayLike, grid: bool, zeta: float | None = None) -> NDArray:
        k = self.index(t)
        if kind == "derivative_n":
            if zeta is None or self.levy.mark_index(zeta) < 0:
                raise MarkSupportError(f"mark {zeta} is not in the jump-mark support {self.levy.sizes}")
            if self.gaussian:
                return self._closed(kind, k, z, grid)
        if self.closed_form:
            return self._closed(kind, k, z, grid)
        values = self._quadrature(kind, k, z, grid, zeta)
        return np.maximum(values, 0.0) if kind == "density" else values

    # -- public field --------------------------------------------------
    def density(self, t: float, z: ArrayLike, grid: bool = False) -> NDArray[np.float64]:
        return self._evaluate("density", t, z, grid)

    def derivative_b(self, t: float, z: ArrayLike, grid: bool = False) -> NDArray[np.float64]:
        return self._evaluate("derivative_b", t, z, grid)

    def derivative_n(self, t: float, z: ArrayLike, zeta: float, grid: bool = False) -> NDArray[np.float64]:
        return self._evaluate("derivative_n", t, z, grid, zeta)

    def phi(self, t: float, z: ArrayLike, grid: bool = False, strict: bool = True) -> NDArray[np.float64]:
        """
        Phi = M_B / M. Below the density floor a strict call raises; otherwise
        the Gaussian closed form is returned (NaN in the jump case).
        """
        k = self.index(t)
        density = self.density(t, z, grid)
        below = density <= self.density_floor
        if strict and np.any(below):
            raise FarTailError(f"M(t={t:g}, z) below density floor {self.density_floor:g} "
                               f"for {int(below.sum())} evaluations (far-tail z)")
        if self.closed_form:
            v_b, _ = self.variance(k)
            z_t = self.signal.values[:, k]
            u = (np.atleast_1d(np.asarray(z, dtype=float))[None, :] - z_t[:, None]) if grid \
                else np.broadcast_to(np.asarray(z, dtype=float), z_t.shape) - z_t
            return float(self.spec.beta_at(t)) * u / v_b
        ratio = np.full(density.shape, np.nan)
        np.divide(self.derivative_b(t, z, grid), density, out=ratio, where=~below)
        return ratio

    def phi_signal_slope(self, t: float) -> float:
        """d Phi / d Z(t) times beta(t) in the Gaussian case: -beta^2 / V_B."""
        if not self.gaussian:
            raise ChaosSpecError("the Phi slope is only available without jumps")
        k = self.index(t)
        v_b, _ = self.variance(k)
        return -float(self.spec.beta_at(t)) ** 2 / v_b

    def unconditional_density(self, z: ArrayLike) -> NDArray[np.float64]:
        """M(0, z), the law of Z(T0)."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        return self.density(0.0, z, grid=True)[0]

    def path(self, z: ArrayLike, kind: Kind = "density", upto: int | None = None) -> NDArray[np.float64]:
        """Field on t_0 .. t_upto (default T), paired with ``z``; shape (n, upto + 1)."""
        upto = self.grid.n_steps if upto is None else upto
        return np.stack([self._evaluate(kind, k * self.grid.dt, z, False) for k in range(upto + 1)], axis=1)

    def phi_path(self, z: ArrayLike, upto: int | None = None, strict: bool = False) -> NDArray[np.float64]:
        upto = self.grid.n_steps if upto is None else upto
        return np.stack([self.phi(k * self.grid.dt, z, strict=strict) for k in range(upto + 1)], axis=1)


class NeutralField:
    """Non-insider field: M = 1, M_B = M_N = Phi = 0."""
    neutral = True
    gaussian = True
    closed_form = True

    def __init__(self, grid, signal: SignalPaths | None = None, n_scenarios: int | None = None):
        self.grid = grid
        self.signal = signal
        self._n = n_scenarios if n_scenarios is not None else (signal.n_scenarios if signal else 1)

    @property
    def n_scenarios(self) -> int:
        return self._n

    def _shape(self, z: ArrayLike, grid: bool) -> tuple[int, ...]:
        if grid:
            return (self._n, np.atleast_1d(np.asarray(z)).size)
        return (self._n,)

    def density(self, t: float, z: ArrayLike, grid: bool = False) -> NDArray[np.float64]:
        return np.ones(self._shape(z, grid))

    def derivative_b(self, t: float, z: ArrayLike, grid: bool = False) -> NDArray[np.float64]:
        return np.zeros(self._shape(z, grid))

    def derivative_n(self, t: float, z: ArrayLike, zeta: float, grid: bool = False) -> NDArray[np.float64]:
        return np.zeros(self._shape(z, grid))

    def phi(self, t: float, z: ArrayLike, grid: bool = False, strict: bool = True) -> NDArray[np.float64]:
        return np.zeros(self._shape(z, grid))

    def phi_signal_slope(self, t: float) -> float:
        return 0.0

    def path(self, z: ArrayLike, kind: Kind = "density", upto: int | None = None) -> NDArray[np.float64]:
        upto = self.grid.n_steps if upto is None else upto
        fill = 1.0 if kind == "density" else 0.0
        return np.full((self._n, upto + 1), fill)

    def phi_path(self, z: ArrayLike, upto: int | None = None, strict: bool = False) -> NDArray[np.float64]:
        upto = self.grid.n_steps if upto is None else upto
        return np.zeros((self._n, upto + 1))


def _field(spec, levy, signal, quad, method: Method = "auto") -> DonskerField:
    return DonskerField(spec, levy, signal, quad, method=method)


def conditional_density(spec: ChaosSpec, levy: LevyModel, signal: SignalPaths, t: float,
                        z: ArrayLike, quad: QuadratureSpec | None = None,
                        method: Method = "auto") -> NDArray[np.float64]:
    return _field(spec, levy, signal, quad, method).density(t, z)


def conditional_derivative_b(spec: ChaosSpec, levy: LevyModel, signal: SignalPaths, t: float,
                             z: ArrayLike, quad: QuadratureSpec | None = None,
                             method: Method = "auto") -> NDArray[np.float64]:
    return _field(spec, levy, signal, quad, method).derivative_b(t, z)


def conditional_derivative_n(spec: ChaosSpec, levy: LevyModel, signal: SignalPaths, t: float,
                             z: ArrayLike, zeta: float, quad: QuadratureSpec | None = None,
                             method: Method = "auto") -> NDArray[np.float64]:
    return _field(spec, levy, signal, quad, method).derivative_n(t, z, zeta)


def phi_ratio(spec: ChaosSpec, levy: LevyModel, signal: SignalPaths, t: float,
              z: ArrayLike, quad: QuadratureSpec | None = None,
              method: Method = "auto") -> NDArray[np.float64]:
    return _field(spec, levy, signal, quad, method).phi(t, z, strict=True)


def invert_characteristic_function(
    cf: Callable[[NDArray[np.float64]], NDArray[np.complex128]],
    y: ArrayLike,
    x_max: float = 2000.0,
    n: int = 2 ** 20,
) -> NDArray[np.float64]:
    """
    Density at ``y`` of the law with characteristic function ``cf`` by a
    single FFT on [-x_max, x_max) followed by linear interpolation.
    """
    dx = 2.0 * x_max / n
    x = -x_max + dx * np.arange(n)
    values = np.fft.fft(cf(x))
    freq = np.fft.fftfreq(n) * 2.0 * math.pi / dx
    pdf = (dx / (2.0 * math.pi)) * np.exp(-1j * (-x_max) * freq) * values
    order = np.argsort(freq)
    return np.interp(np.asarray(y, dtype=float), freq[order], pdf.real[order])


def export_field(
    field: DonskerField,
    times: Sequence[float],
    z_nodes: ArrayLike,
    scenarios: Sequence[int],
) -> pd.DataFrame:
    """Long table (scenario, t, z, M, M_B, Phi) for plotting."""
    z_nodes = np.atleast_1d(np.asarray(z_nodes, dtype=float))
    scenarios = np.asarray(scenarios, dtype=int)
    frames = []
    for t in times:
        m = field.density(t, z_nodes, grid=True)[scenarios]
        m_b = field.derivative_b(t, z_nodes, grid=True)[scenarios]
        phi = field.phi(t, z_nodes, grid=True, strict=False)[scenarios]
        frames.append(pd.DataFrame({
            "scenario": np.repeat(scenarios, z_nodes.size),
            "t": float(t),
            "z": np.tile(z_nodes, scenarios.size),
            "M": m.ravel(),
            "M_B": m_b.ravel(),
            "Phi": phi.ravel(),
        }))
    return pd.concat(frames, ignore_index=True)
