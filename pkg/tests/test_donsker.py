import math

import numpy as np
import pytest

from app.core.config import settings
from app.core.errors import ChaosSpecError, FarTailError, HorizonError, MarkSupportError
from app.services import acceptance
from app.services.chaos import jump_exponent, remaining_variance, simulate_signal
from app.services.donsker import (
    DonskerField,
    NeutralField,
    QuadratureSpec,
    conditional_density,
    conditional_derivative_b,
    conditional_derivative_n,
    export_field,
    invert_characteristic_function,
    phi_ratio,
)
from app.services.paths import LevyModel, build_grid, sample_driver
from app.services.presets import build_chaos

UNIT = {"name": "constant", "params": {"value": 1.0}}


def test_quadrature_matches_closed_form(gaussian):
    quad = DonskerField(gaussian.spec, gaussian.levy, gaussian.signal, method="quadrature")
    closed = DonskerField(gaussian.spec, gaussian.levy, gaussian.signal, method="closed_form")
    z = np.linspace(-4.0, 4.0, 33)
    for t in (0.0, 0.25, 0.5 - gaussian.grid.dt):
        np.testing.assert_allclose(quad.density(t, z, grid=True), closed.density(t, z, grid=True), atol=1e-8)
        np.testing.assert_allclose(quad.derivative_b(t, z, grid=True), closed.derivative_b(t, z, grid=True),
                                   atol=1e-7)


def test_unconditional_density_is_law_of_signal(gaussian):
    z = np.linspace(-3.0, 3.0, 13)
    expected = np.exp(-0.5 * z ** 2) / math.sqrt(2.0 * math.pi)
    np.testing.assert_allclose(gaussian.field.unconditional_density(z), expected, rtol=1e-10)


def test_density_integrates_to_one(gaussian):
    t = 0.25
    sd = math.sqrt(remaining_variance(gaussian.spec, t)[0])
    k = gaussian.grid.index_of(t)
    for i in range(5):
        centre = gaussian.signal.values[i, k]
        z = np.linspace(centre - 8.0 * sd, centre + 8.0 * sd, 400)
        mass = np.trapezoid(gaussian.field.density(t, z, grid=True)[i], z)
        assert abs(mass - 1.0) < 1e-3


def test_phi_is_information_drift(gaussian):
    t = 0.25
    k = gaussian.grid.index_of(t)
    z = 0.7
    expected = (z - gaussian.signal.values[:, k]) / (1.0 - t)
    np.testing.assert_allclose(gaussian.field.phi(t, z), expected, rtol=1e-10)
    assert gaussian.field.phi_signal_slope(t) == pytest.approx(-1.0 / 0.75)


def test_field_paths_shapes(gaussian):
    N = gaussian.grid.n_steps
    assert gaussian.field.path(0.0).shape == (400, N + 1)
    assert gaussian.field.phi_path(0.0).shape == (400, N + 1)
    np.testing.assert_allclose(gaussian.field.path(0.0)[:, 0], gaussian.field.unconditional_density([0.0])[0])


def test_horizon_is_enforced():
    grid = build_grid(1.0, 0.5, 8)
    paths = sample_driver(grid, LevyModel.pure_brownian(), 5, seed=2)
    spec = build_chaos(UNIT, None, 0.5)
    field = DonskerField(spec, paths.levy, simulate_signal(spec, paths, grid))
    field.density(0.375, 0.0)
    with pytest.raises(HorizonError):
        field.density(0.5, 0.0)
    with pytest.raises(HorizonError):
        field.density(0.75, 0.0)


def test_far_tail_phi_raises(gaussian):
    with pytest.raises(FarTailError):
        gaussian.field.phi(0.25, 60.0, strict=True)
    relaxed = gaussian.field.phi(0.25, 60.0, strict=False)
    assert np.all(np.isfinite(relaxed))


def test_mark_outside_support(gaussian):
    with pytest.raises(MarkSupportError):
        gaussian.field.derivative_n(0.25, 0.0, zeta=3.0)


def test_closed_form_refused_with_jumps(jump_levy):
    grid = build_grid(0.5, 1.0, 8)
    paths = sample_driver(grid, jump_levy, 20, seed=8)
    spec = build_chaos(UNIT, {"name": "constant", "params": {"value": 0.5}}, 1.0)
    signal = simulate_signal(spec, paths, grid)
    with pytest.raises(ChaosSpecError):
        DonskerField(spec, jump_levy, signal, method="closed_form")


def test_jump_density_integrates_to_one(jump_levy):
    grid = build_grid(0.5, 1.0, 8)
    paths = sample_driver(grid, jump_levy, 20, seed=8)
    spec = build_chaos(UNIT, {"name": "constant", "params": {"value": 0.5}}, 1.0)
    signal = simulate_signal(spec, paths, grid)
    field = DonskerField(spec, jump_levy, signal)
    assert not field.gaussian
    t = 0.25
    k = grid.index_of(t)
    sd = math.sqrt(sum(remaining_variance(spec, t, jump_levy, grid)))
    z = np.linspace(signal.values[:, k].min() - 10.0 * sd, signal.values[:, k].max() + 10.0 * sd, 1201)
    mass = np.trapezoid(field.density(t, z, grid=True), z, axis=1)
    np.testing.assert_allclose(mass, 1.0, atol=2e-3)
    assert np.all(field.density(t, z, grid=True) >= 0.0)


def test_neutral_field():
    grid = build_grid(1.0, 2.0, 4)
    field = NeutralField(grid, None, 3)
    assert field.neutral
    np.testing.assert_array_equal(field.density(0.5, [0.0, 1.0], grid=True), np.ones((3, 2)))
    np.testing.assert_array_equal(field.phi(0.5, 0.0), np.zeros(3))
    np.testing.assert_array_equal(field.path(0.0), np.ones((3, 5)))
    np.testing.assert_array_equal(field.path(0.0, kind="derivative_b"), np.zeros((3, 5)))


def test_export_field_frame(gaussian):
    frame = export_field(gaussian.field, [0.0, 0.25], [-1.0, 0.0, 1.0], [0, 1])
    assert {"scenario", "t", "z", "M", "M_B", "Phi"} <= set(frame.columns)
    assert len(frame) == 2 * 3 * 2


def test_quadrature_spec_cutoff():
    quad = QuadratureSpec(n_nodes=512, envelope=1e-12)
    x, w = quad.nodes(1.0)
    assert x.size == w.size
    assert math.exp(-0.5 * quad.cutoff(1.0) ** 2) == pytest.approx(1e-12, rel=1e-6)


def test_functional_wrappers_agree_with_field(gaussian, jump_levy):
    t, z = 0.25, 0.3
    field = gaussian.field
    density = conditional_density(gaussian.spec, gaussian.levy, gaussian.signal, t, z)
    np.testing.assert_allclose(density, field.density(t, z))
    slope = conditional_derivative_b(gaussian.spec, gaussian.levy, gaussian.signal, t, z)
    np.testing.assert_allclose(slope, field.derivative_b(t, z))
    np.testing.assert_allclose(phi_ratio(gaussian.spec, gaussian.levy, gaussian.signal, t, z), slope / density,
                               rtol=1e-8)

    grid = build_grid(0.5, 1.0, 8)
    paths = sample_driver(grid, jump_levy, 20, seed=8)
    spec = build_chaos(UNIT, {"name": "constant", "params": {"value": 0.5}}, 1.0)
    signal = simulate_signal(spec, paths, grid)
    jump_field = DonskerField(spec, jump_levy, signal)
    np.testing.assert_allclose(conditional_derivative_n(spec, jump_levy, signal, t, 0.2, 1.0),
                               jump_field.derivative_n(t, 0.2, 1.0))


@pytest.fixture
def jump_field(jump_levy):
    grid = build_grid(0.5, 1.0, 8)
    paths = sample_driver(grid, jump_levy, 20, seed=8)
    spec = build_chaos(UNIT, {"name": "constant", "params": {"value": 0.5}}, 1.0)
    signal = simulate_signal(spec, paths, grid)
    return grid, spec, signal, DonskerField(spec, jump_levy, signal)


def test_jump_density_matches_fft_inversion(jump_field, jump_levy):
    grid, spec, signal, field = jump_field
    t, z = 0.25, 0.3
    v_b, _ = remaining_variance(spec, t, jump_levy, grid)

    def cf(x):
        return np.exp(jump_exponent(spec, jump_levy, t, x, grid) - 0.5 * x * x * v_b)

    shifts = z - signal.values[:, grid.index_of(t)]
    expected = invert_characteristic_function(cf, shifts, x_max=200.0, n=2 ** 16)
    np.testing.assert_allclose(field.density(t, z), expected, atol=1e-5)


def test_jump_derivative_is_shift_by_mark(jump_field):
    grid, spec, signal, field = jump_field
    t = 0.25
    z = np.linspace(-2.0, 2.0, 9)
    for zeta in (1.0, -0.5):
        shift = float(spec.psi_at(t, zeta))
        expected = field.density(t, z - shift, grid=True) - field.density(t, z, grid=True)
        np.testing.assert_allclose(field.derivative_n(t, z, zeta, grid=True), expected, atol=1e-12)


def test_imaginary_tolerance_follows_settings(monkeypatch):
    assert QuadratureSpec().imaginary_tol == settings.IMAGINARY_RESIDUE_TOL
    monkeypatch.setattr(settings, "IMAGINARY_RESIDUE_TOL", 1e-3)
    assert QuadratureSpec().imaginary_tol == 1e-3
    assert QuadratureSpec(imaginary_tol=1e-6).imaginary_tol == 1e-6


def test_reproduction_over_several_times():
    result = acceptance.donsker_reproduction(n=2000, times=(0.0, 0.25, 0.5))
    assert result.passed, result.detail
    assert "t in [0.0, 0.25, 0.5]" in result.detail
