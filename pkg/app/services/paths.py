"""
Driving noise: Brownian motion and a compound Poisson random measure with
finitely many marks, sampled on a uniform time grid.

Every scenario owns a counter-based Philox stream keyed by
``(seed, scenario)``, so serial and threaded sampling agree bit for bit.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from app.core.errors import GridError, LevyModelError

logger = logging.getLogger(__name__)

GRID_TOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, T] with the insider horizon T0 marked."""
    horizon: float
    insider_horizon: float
    n_steps: int
    points: NDArray[np.float64] = field(repr=False)
    horizon_index: int | None       # index of T0 when T0 <= T, else None ("beyond grid")
    snap_distance: float

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def beyond_grid(self) -> bool:
        return self.horizon_index is None

    @property
    def signal_steps(self) -> int:
        """Number of steps from 0 to the (snapped) insider horizon."""
        return max(1, int(round(self.insider_horizon / self.dt)))

    @property
    def total_steps(self) -> int:
        """Steps needed to cover both T and T0."""
        return max(self.n_steps, self.signal_steps)

    def extended_points(self) -> NDArray[np.float64]:
        return np.arange(self.total_steps + 1) * self.dt

    def index_of(self, t: float) -> int:
        """Grid index of ``t``; raises if ``t`` is not a grid point."""
        k = int(round(t / self.dt))
        if k < 0 or k > self.total_steps or abs(k * self.dt - t) > GRID_TOL * (1.0 + abs(t)):
            raise GridError(f"time {t} is not a grid point (dt={self.dt})")
        return k


def build_grid(T: float, T0: float, N: int) -> TimeGrid:
    if not (T > 0 and math.isfinite(T)):
        raise GridError(f"horizon T must be positive, got {T}")
    if not (T0 > 0 and math.isfinite(T0)):
        raise GridError(f"insider horizon T0 must be positive, got {T0}")
    if int(N) != N or N < 2:
        raise GridError(f"number of steps N must be an integer >= 2, got {N}")
    N = int(N)
    dt = T / N
    points = np.arange(N + 1) * dt
    points[-1] = T
    if T0 <= T + GRID_TOL * T:
        index = max(1, int(round(T0 / dt)))
        snap = abs(index * dt - T0)
    else:
        index = None
        snap = abs(round(T0 / dt) * dt - T0)
    if snap > GRID_TOL * T0:
        logger.warning("insider horizon T0=%g snapped to grid point %g", T0, round(T0 / dt) * dt)
    return TimeGrid(horizon=float(T), insider_horizon=float(T0), n_steps=N, points=points,
                    horizon_index=index, snap_distance=float(snap))


@dataclass(frozen=True)
class LevyModel:
    """Finite-activity jump law nu(dzeta) = intensity * sum_i p_i delta_{zeta_i}."""
    intensity: float = 0.0
    sizes: tuple[float, ...] = ()
    probabilities: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not (self.intensity >= 0 and math.isfinite(self.intensity)):
            raise LevyModelError(f"intensity must be finite and >= 0, got {self.intensity}")
        if len(self.sizes) != len(self.probabilities):
            raise LevyModelError("marks and probabilities must have the same length")
        if any(z == 0 for z in self.sizes):
            raise LevyModelError("jump marks must be non-zero")
        if any(p < 0 for p in self.probabilities):
            raise LevyModelError("mark probabilities must be non-negative")
        if self.sizes and abs(sum(self.probabilities) - 1.0) > 1e-9:
            raise LevyModelError(f"mark probabilities must sum to 1, got {sum(self.probabilities)}")
        if self.intensity > 0 and not self.sizes:
            raise LevyModelError("a positive intensity needs at least one mark")

    @classmethod
    def pure_brownian(cls) -> "LevyModel":
        return cls()

    @classmethod
    def from_marks(cls, intensity: float, marks: Sequence[tuple[float, float]]) -> "LevyModel":
        return cls(float(intensity), tuple(float(z) for z, _ in marks), tuple(float(p) for _, p in marks))

    @property
    def n_marks(self) -> int:
        return len(self.sizes)

    @property
    def active(self) -> bool:
        return self.intensity > 0

    @property
    def marks(self) -> NDArray[np.float64]:
        return np.asarray(self.sizes, dtype=float)

    @property
    def nu_weights(self) -> NDArray[np.float64]:
        """lambda * p_i, the mass nu puts on each mark."""
        return self.intensity * np.asarray(self.probabilities, dtype=float)

    def mark_index(self, zeta: float) -> int:
        for i, size in enumerate(self.sizes):
            if abs(size - zeta) <= 1e-12 * (1.0 + abs(size)):
                return i
        return -1


@dataclass(frozen=True)
class DriverPaths:
    """
    Immutable noise for ``n_scenarios`` scenarios.

    ``increments`` and ``counts`` cover the extended grid (up to T0 when
    T0 > T); the public Brownian view is restricted to the first N steps.
    Jump records are flat arrays sorted by (scenario, time).
    """
    grid: TimeGrid
    levy: LevyModel
    seed: int
    increments: NDArray[np.float64] = field(repr=False)
    counts: NDArray[np.int64] = field(repr=False)
    jump_scenario: NDArray[np.int64] = field(repr=False)
    jump_step: NDArray[np.int64] = field(repr=False)
    jump_time: NDArray[np.float64] = field(repr=False)
    jump_mark: NDArray[np.int64] = field(repr=False)
    antithetic: bool = False

    @property
    def n_scenarios(self) -> int:
        return self.increments.shape[0]

    @property
    def brownian_increments(self) -> NDArray[np.float64]:
        return self.increments[:, : self.grid.n_steps]

    def brownian_path(self, extended: bool = False) -> NDArray[np.float64]:
        dB = self.increments if extended else self.brownian_increments
        path = np.zeros((dB.shape[0], dB.shape[1] + 1))
        np.cumsum(dB, axis=1, out=path[:, 1:])
        return path

    def compensated_counts(self, extended: bool = False) -> NDArray[np.float64]:
        """Per-step compensated counts count - lambda p_i dt, shape (n, steps, marks)."""
        counts = self.counts if extended else self.counts[:, : self.grid.n_steps]
        return counts - self.levy.nu_weights * self.grid.dt

    def jumps(self, scenario: int) -> list[tuple[float, float]]:
        """(time, mark) pairs of one scenario with time in (0, T]."""
        mask = (self.jump_scenario == scenario) & (self.jump_step < self.grid.n_steps)
        marks = self.levy.marks
        return [(float(t), float(marks[m])) for t, m in zip(self.jump_time[mask], self.jump_mark[mask])]

    def coarsen(self, factor: int) -> "DriverPaths":
        """Aggregate the noise onto the grid with N / factor steps."""
        grid = self.grid
        total = self.increments.shape[1]
        if factor < 1 or grid.n_steps % factor or total % factor:
            raise GridError(f"cannot coarsen {grid.n_steps} steps by a factor of {factor}")
        coarse = build_grid(grid.horizon, grid.insider_horizon, grid.n_steps // factor)
        if coarse.total_steps != total // factor:
            raise GridError("extended grid does not coarsen evenly")
        n = self.n_scenarios
        increments = self.increments.reshape(n, total // factor, factor).sum(axis=2)
        counts = self.counts.reshape(n, total // factor, factor, -1).sum(axis=2)
        return DriverPaths(grid=coarse, levy=self.levy, seed=self.seed, increments=increments,
                           counts=counts, jump_scenario=self.jump_scenario,
                           jump_step=self.jump_step // factor, jump_time=self.jump_time,
                           jump_mark=self.jump_mark, antithetic=self.antithetic)


def scenario_generator(seed: int, scenario: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(scenario,))))


def _sample_scenario(grid: TimeGrid, levy: LevyModel, seed: int, scenario: int):
    rng = scenario_generator(seed, scenario)
    steps = grid.total_steps
    dt = grid.dt
    dB = rng.standard_normal(steps) * math.sqrt(dt)
    counts = np.zeros((steps, levy.n_marks), dtype=np.int64)
    if not levy.active:
        return dB, counts, np.empty(0, np.int64), np.empty(0), np.empty(0, np.int64)
    per_step = rng.poisson(levy.intensity * dt, size=steps)
    total = int(per_step.sum())
    steps_of_jump = np.repeat(np.arange(steps), per_step)
    marks = rng.choice(levy.n_marks, size=total, p=np.asarray(levy.probabilities))
    # uniform position inside (t_k, t_k+1]
    times = (steps_of_jump + (1.0 - rng.random(total))) * dt
    np.add.at(counts, (steps_of_jump, marks), 1)
    order = np.argsort(times, kind="stable")
    return dB, counts, steps_of_jump[order], times[order], marks[order]


def sample_driver(
    grid: TimeGrid,
    levy: LevyModel,
    n: int,
    seed: int,
    threads: int = 1,
    antithetic: bool = False,
) -> DriverPaths:
    """
    Sample ``n`` independent scenarios of (dB, jump records).

    With ``antithetic`` the second half of the scenarios reuses the first
    half's streams with negated Brownian increments and identical jumps.
    """
    if int(n) != n or n < 1:
        raise GridError(f"number of scenarios must be >= 1, got {n}")
    n = int(n)
    if antithetic and n % 2:
        raise GridError("antithetic sampling needs an even number of scenarios")
    base = n // 2 if antithetic else n

    def task(i: int):
        return _sample_scenario(grid, levy, seed, i)

    if threads > 1 and base > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(task, range(base)))
    else:
        results = [task(i) for i in range(base)]

    increments = np.stack([r[0] for r in results])
    counts = np.stack([r[1] for r in results])
    scen = np.concatenate([np.full(r[2].size, i, dtype=np.int64) for i, r in enumerate(results)])
    step = np.concatenate([r[2] for r in results]).astype(np.int64)
    times = np.concatenate([r[3] for r in results]).astype(float)
    marks = np.concatenate([r[4] for r in results]).astype(np.int64)

    if antithetic:
        increments = np.concatenate([increments, -increments])
        counts = np.concatenate([counts, counts])
        scen = np.concatenate([scen, scen + base])
        step = np.concatenate([step, step])
        times = np.concatenate([times, times])
        marks = np.concatenate([marks, marks])

    logger.debug("sampled %d scenarios, %d steps, %d jumps", n, grid.total_steps, times.size)
    return DriverPaths(grid=grid, levy=levy, seed=int(seed), increments=increments, counts=counts,
                       jump_scenario=scen, jump_step=step, jump_time=times, jump_mark=marks,
                       antithetic=antithetic)


def _evaluate_mark_function(f: Callable[[ArrayLike, ArrayLike], ArrayLike], t: ArrayLike, zeta: ArrayLike) -> NDArray[np.float64]:
    t, zeta = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(zeta, dtype=float))
    return np.broadcast_to(np.asarray(f(t, zeta), dtype=float), t.shape)


def compensated_integral_path(
    paths: DriverPaths,
    f: Callable[[ArrayLike, ArrayLike], ArrayLike],
    extended: bool = False,
) -> NDArray[np.float64]:
    """
    Running value of the compensated integral at every grid point.

    Jumps in (t_k, t_k+1] enter at t_k+1; the compensator uses the left
    point t_k. Shape (n, steps + 1).
    """
    grid, levy = paths.grid, paths.levy
    steps = grid.total_steps if extended else grid.n_steps
    n = paths.n_scenarios
    out = np.zeros((n, steps + 1))
    if not levy.active:
        return out
    per_step = np.zeros((n, steps))
    mask = paths.jump_step < steps
    if mask.any():
        values = _evaluate_mark_function(f, paths.jump_time[mask], levy.marks[paths.jump_mark[mask]])
        np.add.at(per_step, (paths.jump_scenario[mask], paths.jump_step[mask]), values)
    t_left = np.arange(steps) * grid.dt
    mark_values = _evaluate_mark_function(f, t_left[:, None], levy.marks[None, :])
    compensator = (mark_values * levy.nu_weights).sum(axis=1) * grid.dt
    np.cumsum(per_step - compensator, axis=1, out=out[:, 1:])
    return out


def compensated_integral(
    paths: DriverPaths,
    grid: TimeGrid,
    f: Callable[[ArrayLike, ArrayLike], ArrayLike],
    upto: float,
) -> NDArray[np.float64]:
    """Per-scenario value of the compensated jump integral of ``f`` over [0, upto]."""
    k = grid.index_of(upto)
    extended = k > grid.n_steps
    return compensated_integral_path(paths, f, extended=extended)[:, k]
