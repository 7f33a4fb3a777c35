"""
Named function presets and control-problem models.

Configuration never carries expressions: every function-valued entry is
either ``{"name": ..., "params": {...}}`` or ``{"coefficients": [...]}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from app.core.errors import PresetError
from app.services.adjoint import PerformanceSpec
from app.services.chaos import ChaosSpec
from app.services.portfolio import LogUtility, MarketSpec, PowerUtility
from app.services.svie import CoefficientSet


@dataclass(frozen=True)
class Preset:
    name: str
    build: Callable[..., Callable]
    params: dict[str, float] = field(default_factory=dict)
    description: str = ""

    def __call__(self, params: Mapping[str, float] | None = None) -> Callable:
        params = dict(params or {})
        unknown = set(params) - set(self.params)
        if unknown:
            raise PresetError(f"preset '{self.name}' has no parameters {sorted(unknown)}")
        return self.build(**{**self.params, **params})


def _ones(x):
    return np.ones_like(np.asarray(x, dtype=float))


BETA_PRESETS = {
    "constant": Preset("constant", lambda value: (lambda t: value * _ones(t)), {"value": 1.0},
                       "beta(t) = value"),
    "linear": Preset("linear", lambda intercept, slope: (lambda t: intercept + slope * np.asarray(t, dtype=float)),
                     {"intercept": 1.0, "slope": 0.0}, "beta(t) = intercept + slope * t"),
}

PSI_PRESETS = {
    "zero": Preset("zero", lambda: (lambda t, zeta: 0.0 * np.asarray(t) * np.asarray(zeta)), {}, "psi = 0"),
    "constant": Preset("constant", lambda value: (lambda t, zeta: value + 0.0 * np.asarray(t) * np.asarray(zeta)),
                       {"value": 0.5}, "psi(t, zeta) = value"),
    "scaled_mark": Preset("scaled_mark", lambda scale: (lambda t, zeta: scale * np.asarray(zeta) + 0.0 * np.asarray(t)),
                          {"scale": 0.5}, "psi(t, zeta) = scale * zeta"),
}

KERNEL_PRESETS = {
    "constant": Preset("constant", lambda value: (lambda t, s, z: value + 0.0 * (np.asarray(t) - np.asarray(s))),
                       {"value": 1.0}, "k(t, s, z) = value"),
    "exponential": Preset("exponential",
                          lambda scale, rate: (lambda t, s, z: scale * np.exp(rate * (np.asarray(t) - np.asarray(s)))),
                          {"scale": 0.1, "rate": 1.0}, "k(t, s, z) = scale * exp(rate * (t - s))"),
    "linear": Preset("linear",
                     lambda intercept, slope: (lambda t, s, z: intercept + slope * (np.asarray(t) - np.asarray(s))),
                     {"intercept": 1.0, "slope": 0.0}, "k(t, s, z) = intercept + slope * (t - s)"),
}


def _polynomial(coefficients) -> Callable:
    coefficients = [float(c) for c in coefficients]
    if not coefficients:
        raise PresetError("polynomial needs at least one coefficient")
    return np.polynomial.Polynomial(coefficients)


def build_function(kind: str, spec: Mapping[str, Any]) -> Callable:
    """beta(t), psi(t, zeta) = zeta * poly(t), or kernel(t, s, z) = poly(t - s)."""
    registry = {"beta": BETA_PRESETS, "psi": PSI_PRESETS, "kernel": KERNEL_PRESETS}[kind]
    if spec.get("coefficients") is not None:
        poly = _polynomial(spec["coefficients"])
        if kind == "beta":
            return lambda t: poly(np.asarray(t, dtype=float))
        if kind == "psi":
            return lambda t, zeta: np.asarray(zeta, dtype=float) * poly(np.asarray(t, dtype=float))
        return lambda t, s, z: poly(np.asarray(t, dtype=float) - np.asarray(s, dtype=float))
    name = spec.get("name")
    if name not in registry:
        raise PresetError(f"unknown {kind} preset '{name}'; available: {sorted(registry)}")
    return registry[name](spec.get("params"))


def build_chaos(beta: Mapping[str, Any], psi: Mapping[str, Any] | None, horizon: float) -> ChaosSpec:
    beta_fn = build_function("beta", beta)
    psi_fn = build_function("psi", psi) if psi is not None else None
    label = beta.get("name") or "polynomial"
    return ChaosSpec(beta=beta_fn, horizon=horizon, psi=psi_fn, name=label)


def build_market(b0: Mapping[str, Any], sigma0: Mapping[str, Any], x0: float, horizon: float,
                 utility: str = "log", gamma: float | None = None, c0: float = 1e-3) -> MarketSpec:
    if utility == "log":
        u = LogUtility()
    elif utility == "power":
        if gamma is None:
            raise PresetError("power utility needs market.gamma")
        u = PowerUtility(gamma)
    else:
        raise PresetError(f"unknown utility '{utility}'; available: ['log', 'power']")
    return MarketSpec(b0=build_function("kernel", b0), sigma0=build_function("kernel", sigma0), x0=x0,
                      horizon=horizon, utility=u, c0=c0, name=str(sigma0.get("name") or "polynomial"))


@dataclass(frozen=True)
class ControlProblem:
    coeffs: CoefficientSet
    perf: PerformanceSpec
    name: str
    description: str = ""
    analytic_optimum: float | None = None


def _zero(*args):
    return 0.0


def _lq(x0: float) -> ControlProblem:
    coeffs = CoefficientSet(
        xi=lambda t, z: x0 + 0.0 * np.asarray(t),
        b=lambda t, s, x, u, z: u,
        sigma=_zero,
        partials={"b_x": _zero, "b_u": lambda *a: 1.0, "sigma_x": _zero, "sigma_u": _zero},
        name="lq",
    )
    perf = PerformanceSpec(
        f=lambda t, x, u, z: -np.asarray(u) ** 2,
        g=lambda x, z: x,
        partials={"f_x": _zero, "f_u": lambda t, x, u, z: -2.0 * np.asarray(u), "g_x": lambda x, z: 1.0},
        name="lq",
    )
    return ControlProblem(coeffs, perf, "lq", "dX = u dt, f = -u^2, g = x", analytic_optimum=0.5)


def _log_market(b0: float, sigma0: float, x0: float) -> ControlProblem:
    coeffs = CoefficientSet(
        xi=lambda t, z: x0 + 0.0 * np.asarray(t),
        b=lambda t, s, x, u, z: b0 * u * x,
        sigma=lambda t, s, x, u, z: sigma0 * u * x,
        partials={
            "b_x": lambda t, s, x, u, z: b0 * u,
            "b_u": lambda t, s, x, u, z: b0 * x,
            "sigma_x": lambda t, s, x, u, z: sigma0 * u,
            "sigma_u": lambda t, s, x, u, z: sigma0 * x,
        },
        name="log_market",
    )
    perf = PerformanceSpec(
        f=_zero,
        g=lambda x, z: np.log(x),
        partials={"f_x": _zero, "f_u": _zero, "g_x": lambda x, z: 1.0 / np.asarray(x)},
        name="log",
    )
    return ControlProblem(coeffs, perf, "log_market", "wealth with fraction u, g = ln x",
                          analytic_optimum=b0 / sigma0 ** 2)


def _linear_terminal(mu: float, sigma: float, slope: float, penalty: float) -> ControlProblem:
    coeffs = CoefficientSet(
        xi=lambda t, z: 0.0 * np.asarray(t),
        b=lambda t, s, x, u, z: mu * u,
        sigma=lambda t, s, x, u, z: sigma * u,
        partials={"b_x": _zero, "sigma_x": _zero, "b_u": lambda *a: mu, "sigma_u": lambda *a: sigma},
        name="linear_terminal",
    )
    perf = PerformanceSpec(
        f=lambda t, x, u, z: -penalty * np.asarray(u) ** 2,
        g=lambda x, z: slope * np.asarray(x),
        partials={"f_x": _zero, "f_u": lambda t, x, u, z: -2.0 * penalty * np.asarray(u), "g_x": lambda x, z: slope},
        name="linear_terminal",
    )
    optimum = mu * slope / (2.0 * penalty) if penalty > 0 else None
    return ControlProblem(coeffs, perf, "linear_terminal", "x-free: b = mu u, sigma = s u, g = slope x",
                          analytic_optimum=optimum)


def _volterra_lq(rate: float, sigma: float) -> ControlProblem:
    def decay(t, s):
        return np.exp(-rate * (np.asarray(t) - np.asarray(s)))

    coeffs = CoefficientSet(
        xi=lambda t, z: 1.0 + 0.0 * np.asarray(t),
        b=lambda t, s, x, u, z: decay(t, s) * u,
        sigma=lambda t, s, x, u, z: sigma * decay(t, s) * x,
        partials={
            "b_x": _zero,
            "b_u": lambda t, s, x, u, z: decay(t, s),
            "sigma_x": lambda t, s, x, u, z: sigma * decay(t, s),
            "sigma_u": _zero,
            "b_t": lambda t, s, x, u, z: -rate * decay(t, s) * u,
        },
        name="volterra_lq",
    )
    perf = PerformanceSpec(
        f=lambda t, x, u, z: -np.asarray(u) ** 2,
        g=lambda x, z: x,
        partials={"f_x": _zero, "f_u": lambda t, x, u, z: -2.0 * np.asarray(u), "g_x": lambda x, z: 1.0},
        name="lq",
    )
    return ControlProblem(coeffs, perf, "volterra_lq", "decaying kernel exp(-rate (t - s)), f = -u^2, g = x")


MODEL_PRESETS = {
    "lq": Preset("lq", _lq, {"x0": 0.0}, "dX = u dt, f = -u^2, g = x"),
    "log_market": Preset("log_market", _log_market, {"b0": 0.05, "sigma0": 0.5, "x0": 1.0},
                         "wealth dX = b0 u X dt + sigma0 u X dB, g = ln x"),
    "linear_terminal": Preset("linear_terminal", _linear_terminal,
                              {"mu": 1.0, "sigma": 0.5, "slope": 1.0, "penalty": 0.0},
                              "x-free model with linear terminal reward"),
    "volterra_lq": Preset("volterra_lq", _volterra_lq, {"rate": 1.0, "sigma": 0.2},
                          "LQ model with a time-dependent decaying kernel"),
}


def build_problem(name: str, params: Mapping[str, float] | None = None) -> ControlProblem:
    if name not in MODEL_PRESETS:
        raise PresetError(f"unknown model preset '{name}'; available: {sorted(MODEL_PRESETS)}")
    return MODEL_PRESETS[name](params)


def registry() -> dict[str, list[dict[str, Any]]]:
    """Preset names, default parameters and descriptions, per kind."""
    groups = {"beta": BETA_PRESETS, "psi": PSI_PRESETS, "kernel": KERNEL_PRESETS, "model": MODEL_PRESETS}
    return {
        kind: [{"name": p.name, "params": dict(p.params), "description": p.description} for p in presets.values()]
        for kind, presets in groups.items()
    }
