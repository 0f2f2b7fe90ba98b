import json

import pytest
import yaml

from polyharm_lab.config_loader import ConfigLoader, deep_merge
from polyharm_lab.experiment_config import (
    ConfigError,
    build_experiment_config,
    load_experiment_config,
    parse_radii,
)
from polyharm_lab.harmonic_poly import Poly, lewy_polynomial


@pytest.fixture
def loader(tmp_path, monkeypatch):
    monkeypatch.delenv("POLYHARM_THREADS", raising=False)
    return ConfigLoader(cwd=tmp_path)


def test_deep_merge_keeps_nested_keys():
    base = {"a": {"b": 1, "c": {"d": 2}}, "e": [1]}
    merged = deep_merge(base, {"a": {"c": {"d": 3}}, "e": [2]})
    assert merged == {"a": {"b": 1, "c": {"d": 3}}, "e": [2]}
    assert base["a"]["c"]["d"] == 2


def test_workspace_yaml_overrides_package_defaults(tmp_path, monkeypatch):
    monkeypatch.delenv("POLYHARM_THREADS", raising=False)
    workspace_config = tmp_path / "config"
    workspace_config.mkdir()
    with (workspace_config / "lab.yaml").open("w", encoding="utf-8") as fh:
        yaml.safe_dump({"POLYHARM_THREADS": 2, "commands": {"blowup": {"window": 3.0}}}, fh)

    loader = ConfigLoader(cwd=tmp_path)
    blowup = loader.section("commands")["blowup"]
    assert blowup["window"] == 3.0
    assert blowup["rule_level"] == 16
    assert loader.get("POLYHARM_THREADS") == 2
    assert loader.section("missing") == {}


def test_environment_wins(tmp_path, monkeypatch):
    monkeypatch.setenv("POLYHARM_THREADS", "4")
    assert ConfigLoader(cwd=tmp_path).get("POLYHARM_THREADS") == "4"


def test_dotenv_is_loaded_from_parent(tmp_path, monkeypatch):
    # registered so the value loaded from .env is rolled back afterwards
    monkeypatch.setenv("POLYHARM_LOG_LEVEL", "")
    (tmp_path / ".env").write_text("POLYHARM_LOG_LEVEL=DEBUG\n", encoding="utf-8")
    nested = tmp_path / "runs"
    nested.mkdir()
    assert ConfigLoader(cwd=nested).get("POLYHARM_LOG_LEVEL") == "DEBUG"


def test_parse_radii():
    assert parse_radii([1, 0.5]) == [1.0, 0.5]
    grid = parse_radii({"start": 1.0, "stop": 1e-3, "num": 4})
    assert grid == pytest.approx([1.0, 0.1, 0.01, 0.001])
    for bad in ([], [1.0, -1.0], {"start": 1.0}, "wide"):
        with pytest.raises(ConfigError):
            parse_radii(bad)


def test_defaults_fill_the_command_section(loader):
    cfg = build_experiment_config(
        {"command": "doubling-scan", "polynomial": "x*y + x", "doubling-scan": {"steps": 8}},
        loader=loader,
    )
    assert cfg.polynomial == Poly(3, {(1, 1, 0): 1.0, (1, 0, 0): 1.0})
    assert cfg.param("steps") == 8
    assert cfg.param("tau") == 2.0
    assert cfg.param("r_min") is None
    assert cfg.seed is None
    assert cfg.threads == 1
    assert str(cfg.out) == "reports"
    assert cfg.describe()["polynomial"]["dim"] == 3


def test_section_polynomial_default(loader):
    cfg = build_experiment_config({"command": "lewy-demo"}, loader=loader)
    assert cfg.polynomial == lewy_polynomial()
    assert "polynomial" not in cfg.params


def test_all_schema_problems_are_reported(loader):
    with pytest.raises(ConfigError) as excinfo:
        build_experiment_config(
            {
                "command": "doubling-scan",
                "polynomial": "x",
                "colour": "blue",
                "doubling-scan": {"steps": "8", "width": 1},
                "blowup": {},
                "dim": 1,
            },
            loader=loader,
        )
    diagnostics = excinfo.value.diagnostics
    assert "colour: unknown top-level key" in diagnostics
    assert "doubling-scan.width: unknown parameter" in diagnostics
    assert any(d.startswith("doubling-scan.steps: expected int") for d in diagnostics)
    assert any(d.startswith("blowup:") for d in diagnostics)
    assert any(d.startswith("dim:") for d in diagnostics)


def test_unknown_command(loader):
    with pytest.raises(ConfigError) as excinfo:
        build_experiment_config({"command": "verify-everything"}, loader=loader)
    assert excinfo.value.diagnostics[0].startswith("command:")


def test_stochastic_commands_need_a_seed(loader):
    payload = {"command": "cone-distance", "polynomial": "x"}
    with pytest.raises(ConfigError) as excinfo:
        build_experiment_config(payload, loader=loader)
    assert any("seed: required" in d for d in excinfo.value.diagnostics)

    assert build_experiment_config(payload, seed=5, loader=loader).seed == 5
    assert build_experiment_config(dict(payload, seed=1), seed=9, loader=loader).seed == 9
    with pytest.raises(ConfigError):
        build_experiment_config(dict(payload, seed=-1), loader=loader)


def test_polynomial_is_required(loader):
    with pytest.raises(ConfigError) as excinfo:
        build_experiment_config(
            {"command": "doubling-scan", "doubling-scan": {"count": 0}}, loader=loader
        )
    assert "polynomial: required for command doubling-scan" in excinfo.value.diagnostics


def test_threads_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv("POLYHARM_THREADS", "3")
    loader = ConfigLoader(cwd=tmp_path)
    payload = {"command": "lewy-demo"}
    assert build_experiment_config(payload, loader=loader).threads == 3
    assert build_experiment_config(dict(payload, threads=2), loader=loader).threads == 2
    assert build_experiment_config(dict(payload, threads=2), threads=6, loader=loader).threads == 6
    with pytest.raises(ConfigError):
        build_experiment_config(payload, threads=0, loader=loader)


def test_polynomial_file_relative_to_config(tmp_path, loader):
    (tmp_path / "p.json").write_text(
        json.dumps({"dim": 3, "terms": [{"alpha": [1, 0, 0], "c": 2.0}]}), encoding="utf-8"
    )
    config = tmp_path / "run.json"
    config.write_text(
        json.dumps({"command": "doubling-scan", "polynomial": {"file": "p.json"}}),
        encoding="utf-8",
    )
    cfg = load_experiment_config(config, out=tmp_path / "out", loader=loader)
    assert cfg.polynomial == Poly(3, {(1, 0, 0): 2.0})
    assert cfg.source == config
    assert cfg.out == tmp_path / "out"


def test_polynomial_problems_become_diagnostics(tmp_path, loader):
    with pytest.raises(ConfigError) as excinfo:
        build_experiment_config(
            {"command": "doubling-scan", "polynomial": {"file": "absent.json"}},
            source=tmp_path / "run.json",
            loader=loader,
        )
    assert excinfo.value.diagnostics[0].startswith("polynomial.file: cannot read")

    with pytest.raises(ConfigError) as excinfo:
        build_experiment_config(
            {"command": "doubling-scan", "polynomial": "x +* y"}, loader=loader
        )
    assert excinfo.value.diagnostics[0].startswith("polynomial:")

    with pytest.raises(ConfigError):
        build_experiment_config(
            {"command": "doubling-scan", "dim": 2, "polynomial": "x*y*z"}, loader=loader
        )


def test_unreadable_and_malformed_files(tmp_path, loader):
    with pytest.raises(OSError):
        load_experiment_config(tmp_path / "missing.json", loader=loader)
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_experiment_config(broken, loader=loader)
    listed = tmp_path / "list.json"
    listed.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_experiment_config(listed, loader=loader)


def test_long_command_names_resolve_to_their_commands(loader):
    ball = build_experiment_config(
        {"command": "verify-lemma-4-2", "seed": 0, "verify-lemma-4-2": {"count": 2}},
        loader=loader,
    )
    assert ball.command == "verify-ball-mass"
    assert ball.param("count") == 2
    assert ball.param("rule_level") == 48

    bounds = build_experiment_config(
        {"command": "verify-section-3", "seed": 1, "verify-sphere-bounds": {"pairs": 10}},
        loader=loader,
    )
    assert bounds.command == "verify-sphere-bounds"
    assert bounds.param("pairs") == 10
    assert bounds.describe()["command"] == "verify-sphere-bounds"

    with pytest.raises(ConfigError) as excinfo:
        build_experiment_config(
            {
                "command": "verify-ball-mass",
                "seed": 0,
                "verify-lemma-4-2": {},
                "verify-ball-mass": {},
            },
            loader=loader,
        )
    assert any("duplicates" in d for d in excinfo.value.diagnostics)

    with pytest.raises(ConfigError) as excinfo:
        build_experiment_config(
            {"command": "doubling-scan", "polynomial": "x", "verify-section-3": {}}, loader=loader
        )
    assert "verify-section-3: section does not belong to command doubling-scan" in (
        excinfo.value.diagnostics
    )


def test_batteries_run_without_a_polynomial_but_need_a_seed(loader):
    cfg = build_experiment_config(
        {"command": "doubling-scan", "seed": 3, "doubling-scan": {"count": 4}}, loader=loader
    )
    assert cfg.polynomial is None
    assert cfg.param("count") == 4
    assert cfg.param("min_pass_rate") == 0.95

    with pytest.raises(ConfigError) as excinfo:
        build_experiment_config(
            {"command": "doubling-scan", "doubling-scan": {"count": 4}}, loader=loader
        )
    assert "seed: required for a random doubling-scan battery" in excinfo.value.diagnostics

    cone = build_experiment_config(
        {"command": "cone-distance", "seed": 0, "cone-distance": {"count": 12}}, loader=loader
    )
    assert cone.param("max_degree") == 3
