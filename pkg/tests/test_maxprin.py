import math

import numpy as np
import pytest

from app.core.errors import ControlBoundsError
from app.services.maxprin import (
    brute_force_optimize,
    check_necessary,
    check_sufficient,
    constant_family,
    gateaux_derivative,
    performance,
    piecewise_family,
    refine_constant,
)
from app.services.presets import build_problem
from app.services.regression import RegressionSpec
from app.services.svie import ControlField, admissible_direction

BOUNDS = (0.0, 1.0)


@pytest.fixture
def lq():
    return build_problem("lq")


def test_performance_of_constant_control(neutral, lq):
    grid, paths, field = neutral
    report = performance(lq.perf, ControlField.constant(0.5), lq.coeffs, field, 0.0, paths, grid)
    assert report.J == pytest.approx(0.25)
    assert report.j_of_z == [pytest.approx(0.25)]
    assert report.standard_errors[0] == pytest.approx(0.0, abs=1e-12)


def test_brute_force_finds_lq_optimum(neutral, lq):
    grid, paths, field = neutral
    search = brute_force_optimize(lq.perf, lq.coeffs, field, 0.0, paths, grid, constant_family(BOUNDS, 11))
    assert search.control.params == (0.5,)
    assert search.report.J == pytest.approx(0.25)
    assert search.runner_up_gap == pytest.approx(0.01)
    u, value = refine_constant(lq.perf, lq.coeffs, field, 0.0, paths, grid, search, BOUNDS)
    assert u == pytest.approx(0.5, abs=1e-3)
    assert value == pytest.approx(0.25, abs=1e-6)


def test_out_of_bounds_candidates_are_skipped(neutral, lq):
    grid, paths, field = neutral
    family = [ControlField.constant(0.5, BOUNDS), ControlField.constant(2.0, BOUNDS)]
    search = brute_force_optimize(lq.perf, lq.coeffs, field, 0.0, paths, grid, family, threads=2)
    assert search.argmax == 0
    assert search.values[1] == -math.inf
    with pytest.raises(ControlBoundsError):
        brute_force_optimize(lq.perf, lq.coeffs, field, 0.0, paths, grid, family[1:])


def test_gateaux_routes_agree(neutral, lq):
    grid, paths, field = neutral
    base = ControlField.constant(0.2)
    direction = admissible_direction(base, ControlField.constant(1.0))
    report = gateaux_derivative(base, direction, lq.perf, lq.coeffs, field, 0.0, paths, grid,
                                hamiltonian_route=True)
    assert report.agree
    assert report.chi_route == pytest.approx(0.6)
    assert report.fd_route == pytest.approx(0.6, abs=1e-8)
    assert report.hamiltonian_route == pytest.approx(0.6, abs=1e-8)


def test_necessary_condition_separates_optimum(neutral, lq):
    grid, paths, field = neutral
    optimum = check_necessary(ControlField.constant(0.5), lq.perf, lq.coeffs, field, 0.0, paths, grid)
    assert optimum.passed
    assert optimum.curvature == pytest.approx(2.0, rel=1e-6)
    assert optimum.tolerance == pytest.approx(0.02, rel=1e-6)
    displaced = check_necessary(ControlField.constant(1.0), lq.perf, lq.coeffs, field, 0.0, paths, grid)
    assert not displaced.passed
    np.testing.assert_allclose(displaced.foc[0], 1.0, atol=1e-8)


def test_necessary_condition_catches_tail_violation(neutral, lq):
    grid, paths, field = neutral
    # optimal except for a small cubic tilt in B, which the RMS over scenarios hides
    tilted = ControlField(lambda ctx: 0.5 + 0.0015 * ctx.brownian ** 3, name="tilted")
    report = check_necessary(tilted, lq.perf, lq.coeffs, field, 0.0, paths, grid,
                             regression=RegressionSpec(degree=3, features=("brownian",)))
    assert max(report.rms_foc[0]) < report.tolerance
    assert report.max_abs_foc > report.tolerance
    assert not report.passed


def test_reduced_hamiltonian_route(neutral, lq):
    grid, paths, field = neutral
    report = check_necessary(ControlField.constant(0.5), lq.perf, lq.coeffs, field, 0.0, paths, grid,
                             hamiltonian="reduced")
    assert report.passed
    assert report.hamiltonian == "reduced"


def test_sufficient_conditions_hold_at_optimum(neutral, lq):
    grid, paths, field = neutral
    report = check_sufficient(ControlField.constant(0.5), lq.perf, lq.coeffs, field, 0.0, paths, grid)
    assert report.passed
    assert report.concavity_flags == {"g_concave": True, "h_concave": True, "maximum_condition": True}
    below = check_sufficient(ControlField.constant(0.1), lq.perf, lq.coeffs, field, 0.0, paths, grid)
    assert not below.concavity_flags["maximum_condition"]


def test_piecewise_family():
    family = piecewise_family(BOUNDS, 1.0)
    assert len(family) == 125
    assert family[-1].params == (1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        piecewise_family(BOUNDS, 1.0, pieces=4)
