import json

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from app.core.errors import PresetError
from app.schemas import CheckResult, ExperimentConfig, FunctionSpec, LevyConfig, MarketConfig, RunReport
from app.schemas.examples import SAMPLES
from app.services.presets import build_function, build_problem, registry
from app.utils.exporters import config_hash, read_csv, write_csv, write_json


def test_defaults_are_valid():
    config = ExperimentConfig()
    assert config.kind.value == "donsker"
    assert config.grid.N == 64
    assert config.monte_carlo.seed is None


@pytest.mark.parametrize("kind", sorted(SAMPLES))
def test_samples_validate(kind):
    config = SAMPLES[kind]()
    assert config.kind.value == kind
    assert ExperimentConfig.model_validate(config.model_dump()) == config


def test_function_spec_needs_exactly_one_form():
    with pytest.raises(ValidationError):
        FunctionSpec()
    with pytest.raises(ValidationError):
        FunctionSpec(name="constant", coefficients=[1.0])
    with pytest.raises(ValidationError):
        FunctionSpec(coefficients=[])


def test_levy_marks_must_be_a_distribution():
    with pytest.raises(ValidationError):
        LevyConfig(intensity=1.0, marks=[(1.0, 0.3), (2.0, 0.3)])
    with pytest.raises(ValidationError):
        LevyConfig(intensity=1.0)
    assert LevyConfig(intensity=1.0, marks=[(1.0, 1.0)]).marks == [(1.0, 1.0)]


def test_market_constraints():
    with pytest.raises(ValidationError):
        MarketConfig(utility="power")
    with pytest.raises(ValidationError):
        MarketConfig(gamma=1.5)
    with pytest.raises(ValidationError):
        MarketConfig(bracket=(1.0, 0.5))


def test_sigma0_bounded_away_from_zero():
    with pytest.raises(ValidationError) as info:
        ExperimentConfig(market={"sigma0": {"name": "constant", "params": {"value": 0.0}}})
    assert "market.sigma0" in str(info.value)
    with pytest.raises(ValidationError):
        ExperimentConfig(market={"sigma0": {"coefficients": [1.0, -1.0]}}, grid={"T": 1.0, "T0": 2.0, "N": 8})


def test_unknown_presets_are_reported():
    with pytest.raises(ValidationError):
        ExperimentConfig(chaos={"beta": {"name": "cubic"}})
    with pytest.raises(ValidationError):
        ExperimentConfig(model={"name": "unknown"})
    with pytest.raises(ValidationError):
        ExperimentConfig(market={"b0": {"name": "constant", "params": {"rate": 1.0}}})
    with pytest.raises(ValidationError):
        ExperimentConfig(name="a/b")
    with pytest.raises(ValidationError):
        ExperimentConfig(monte_carlo={"n_scenarios": 11, "antithetic": True})


def test_build_function_forms():
    beta = build_function("beta", {"coefficients": [1.0, 2.0]})
    np.testing.assert_allclose(beta(np.array([0.0, 0.5])), [1.0, 2.0])
    psi = build_function("psi", {"coefficients": [0.5]})
    assert psi(0.3, 2.0) == pytest.approx(1.0)
    kernel = build_function("kernel", {"name": "exponential", "params": {"scale": 1.0, "rate": -1.0}})
    assert kernel(1.0, 0.0, 0.0) == pytest.approx(np.exp(-1.0))
    with pytest.raises(PresetError):
        build_function("beta", {"name": "missing"})


def test_registry_lists_every_kind():
    presets = registry()
    assert set(presets) == {"beta", "psi", "kernel", "model"}
    models = {entry["name"] for entry in presets["model"]}
    assert models == {"lq", "log_market", "linear_terminal", "volterra_lq"}
    with pytest.raises(PresetError):
        build_problem("lq", {"unknown": 1.0})


def test_report_dump_excludes_timings():
    report = RunReport(name="r", kind="donsker", checks=[CheckResult(name="a", passed=True)], timings={"total": 1.0})
    assert report.passed
    assert "timings" not in report.deterministic_dump()
    report.checks.append(CheckResult(name="b", passed=False))
    assert not report.passed


def test_exporters(tmp_path):
    frame = pd.DataFrame({"t": [0.0, 0.5], "M": [1.0, 1.25]})
    digest = config_hash({"b": 1, "a": [1, 2]})
    assert digest == config_hash({"a": [1, 2], "b": 1})
    path = write_csv(frame, tmp_path / "fields" / "m.csv", digest)
    assert path.read_text(encoding="utf-8").splitlines()[0] == f"# config-hash: {digest}"
    pd.testing.assert_frame_equal(read_csv(path), frame, check_dtype=False)
    target = write_json({"b": 1, "a": 2}, tmp_path / "report.json")
    assert list(json.loads(target.read_text(encoding="utf-8"))) == ["a", "b"]
