import json

import pytest

from app.core.config import settings
from app.core.errors import ConfigurationError, JumpModelError
from app.services import pipeline
from app.utils.exporters import read_csv

NEUTRAL_LQ = {
    "grid": {"T": 1.0, "T0": 2.0, "N": 8},
    "chaos": {"insider": False},
    "z_grid": {"nodes": 1},
    "model": {"name": "lq"},
    "control": {"bounds": [0.0, 1.0], "points": 11},
}


def test_donsker_run_writes_artifacts(small_config, tmp_path):
    report = pipeline.run(small_config("donsker"), out=tmp_path)
    run_dir = tmp_path / "test-donsker"
    assert report.passed, [c for c in report.checks if not c.passed]
    assert {c.name for c in report.checks} == {"normalization", "closed_form_agreement"}
    assert (run_dir / "report.json").exists()
    assert (run_dir / "timings.json").exists()
    csv_path = run_dir / report.artifacts["donsker"]
    first = csv_path.read_text(encoding="utf-8").splitlines()[0]
    assert first == f"# config-hash: {report.config_hash}"
    frame = read_csv(csv_path)
    assert list(frame.columns) == ["scenario", "t", "z", "M", "M_B", "Phi"]
    assert frame["scenario"].nunique() == settings.EXPORT_SCENARIOS


def test_reports_are_reproducible(small_config, tmp_path):
    config = small_config("simulate", model={"name": "lq"}, control={"candidate": 0.5})
    pipeline.run(config, out=tmp_path / "a")
    pipeline.run(config, out=tmp_path / "b")
    first = (tmp_path / "a" / "test-simulate" / "report.json").read_bytes()
    second = (tmp_path / "b" / "test-simulate" / "report.json").read_bytes()
    assert first == second
    assert (tmp_path / "a" / "test-simulate" / "fields" / "state.csv").read_bytes() == \
        (tmp_path / "b" / "test-simulate" / "fields" / "state.csv").read_bytes()


def test_seed_and_kind_overrides(small_config):
    config = small_config("donsker")
    del config["monte_carlo"]["seed"]
    prepared = pipeline.prepare_config(config)
    assert prepared.monte_carlo.seed == settings.DEFAULT_SEED
    overridden = pipeline.prepare_config(config, kind="simulate", seed=9, threads=2)
    assert overridden.monte_carlo.seed == 9
    assert overridden.monte_carlo.threads == 2
    assert overridden.kind.value == "simulate"


def test_config_file_round_trip(small_config, tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(small_config("simulate")), encoding="utf-8")
    report = pipeline.run(path, write=False)
    assert report.kind == "simulate"
    assert report.artifacts == {}
    assert report.summary["n_scenarios"] == 64


def test_donsker_needs_insider(small_config):
    with pytest.raises(ConfigurationError):
        pipeline.run(small_config("donsker", chaos={"insider": False}), write=False)


def test_check_run_on_neutral_lq(small_config):
    report = pipeline.run(small_config("check", **NEUTRAL_LQ), write=False)
    assert report.passed, [c for c in report.checks if not c.passed]
    assert report.summary["search"]["params"] == [0.5]
    assert report.summary["refined"]["u"] == pytest.approx(0.5, abs=1e-3)
    assert "oracle_near_analytic_optimum" in {c.name for c in report.checks}


def test_adjoint_run_reports_terminal_condition(small_config):
    report = pipeline.run(small_config("adjoint", model={"name": "lq"}), write=False)
    names = [c.name for c in report.checks]
    assert len(names) == 3
    assert all(name.startswith("terminal_condition") for name in names)
    assert report.passed


def test_portfolio_refuses_jumps(small_config):
    config = small_config("portfolio", levy={"intensity": 1.0, "marks": [[0.5, 1.0]]})
    with pytest.raises(JumpModelError):
        pipeline.run(config, write=False)


def test_z_nodes_default_window(small_config):
    config = pipeline.prepare_config(small_config("donsker", z_grid={"nodes": 5}))
    env = pipeline.build_environment(config)
    nodes = pipeline.z_nodes(env)
    assert nodes[0] == pytest.approx(-4.0)
    assert nodes[-1] == pytest.approx(4.0)
