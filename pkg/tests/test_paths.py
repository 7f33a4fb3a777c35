import logging
import math

import numpy as np
import pytest

from app.core.errors import GridError, LevyModelError
from app.services.paths import (
    LevyModel,
    build_grid,
    compensated_integral_path,
    sample_driver,
)


def test_grid_points_and_horizon():
    grid = build_grid(1.0, 2.0, 8)
    assert grid.n_steps == 8
    assert grid.dt == pytest.approx(0.125)
    assert grid.points[-1] == 1.0
    assert grid.beyond_grid
    assert grid.total_steps == 16
    assert grid.index_of(0.5) == 4


def test_grid_inside_horizon():
    grid = build_grid(1.0, 0.5, 8)
    assert grid.horizon_index == 4
    assert not grid.beyond_grid


@pytest.mark.parametrize("T, T0, N", [(0.0, 1.0, 8), (1.0, -1.0, 8), (1.0, 1.0, 1), (1.0, 1.0, 2.5)])
def test_grid_rejects_bad_input(T, T0, N):
    with pytest.raises(GridError):
        build_grid(T, T0, N)


def test_grid_warns_when_insider_horizon_snaps(caplog):
    caplog.set_level(logging.WARNING, logger="app.services.paths")
    build_grid(1.0, 0.33, 10)
    assert any("snapped" in record.message for record in caplog.records)


def test_index_of_rejects_off_grid_time():
    with pytest.raises(GridError):
        build_grid(1.0, 2.0, 8).index_of(0.1)


def test_levy_model_validation():
    with pytest.raises(LevyModelError):
        LevyModel.from_marks(1.0, [(1.0, 0.4), (2.0, 0.4)])
    with pytest.raises(LevyModelError):
        LevyModel.from_marks(1.0, [(0.0, 1.0)])
    with pytest.raises(LevyModelError):
        LevyModel(intensity=1.0)
    assert not LevyModel.pure_brownian().active


def test_sampling_is_deterministic_and_thread_independent(jump_levy):
    grid = build_grid(1.0, 1.5, 16)
    serial = sample_driver(grid, jump_levy, 50, seed=42)
    again = sample_driver(grid, jump_levy, 50, seed=42)
    threaded = sample_driver(grid, jump_levy, 50, seed=42, threads=4)
    np.testing.assert_array_equal(serial.increments, again.increments)
    np.testing.assert_array_equal(serial.increments, threaded.increments)
    np.testing.assert_array_equal(serial.jump_time, threaded.jump_time)
    other = sample_driver(grid, jump_levy, 50, seed=43)
    assert not np.array_equal(serial.increments, other.increments)


def test_extended_horizon_keeps_public_view():
    grid = build_grid(1.0, 1.5, 16)
    paths = sample_driver(grid, LevyModel.pure_brownian(), 10, seed=1)
    assert paths.increments.shape == (10, grid.total_steps)
    assert paths.brownian_increments.shape == (10, 16)
    assert paths.brownian_path().shape == (10, 17)
    assert paths.brownian_path(extended=True).shape == (10, grid.total_steps + 1)


def test_antithetic_pairs_negate_brownian_increments(jump_levy):
    grid = build_grid(1.0, 2.0, 8)
    paths = sample_driver(grid, jump_levy, 20, seed=3, antithetic=True)
    np.testing.assert_array_equal(paths.increments[10:], -paths.increments[:10])
    np.testing.assert_array_equal(paths.counts[10:], paths.counts[:10])
    with pytest.raises(GridError):
        sample_driver(grid, jump_levy, 21, seed=3, antithetic=True)


def test_brownian_variance():
    grid = build_grid(1.0, 2.0, 16)
    paths = sample_driver(grid, LevyModel.pure_brownian(), 4000, seed=9)
    terminal = paths.brownian_path()[:, -1]
    assert abs(terminal.mean()) < 4.0 / math.sqrt(4000)
    assert abs(terminal.var(ddof=1) - 1.0) < 4.0 * math.sqrt(2.0 / 4000)


def test_jump_counts_and_records(jump_levy):
    grid = build_grid(1.0, 2.0, 16)
    paths = sample_driver(grid, jump_levy, 2000, seed=5)
    per_scenario = paths.counts[:, :16].sum(axis=(1, 2))
    assert abs(per_scenario.mean() - 2.0) < 5.0 * math.sqrt(2.0 / 2000)
    for scenario in range(5):
        jumps = paths.jumps(scenario)
        assert len(jumps) == int(per_scenario[scenario])
        assert all(0.0 < t <= 1.0 for t, _ in jumps)
        assert all(mark in (1.0, -0.5) for _, mark in jumps)


def test_compensated_integral_is_centred(jump_levy):
    grid = build_grid(1.0, 2.0, 16)
    paths = sample_driver(grid, jump_levy, 4000, seed=6)
    values = compensated_integral_path(paths, lambda t, zeta: zeta)[:, -1]
    # Var = lambda * E[zeta^2] * T = 2 * 0.625
    assert abs(values.mean()) < 4.0 * math.sqrt(1.25 / 4000)


def test_coarsen_preserves_the_path():
    grid = build_grid(1.0, 2.0, 16)
    paths = sample_driver(grid, LevyModel.pure_brownian(), 10, seed=2)
    coarse = paths.coarsen(4)
    assert coarse.grid.n_steps == 4
    np.testing.assert_allclose(coarse.brownian_path()[:, -1], paths.brownian_path()[:, -1], atol=1e-12)
    with pytest.raises(GridError):
        paths.coarsen(3)
