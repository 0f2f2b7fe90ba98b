import json

from polyharm_lab import reports
from polyharm_lab.config_loader import ConfigLoader
from polyharm_lab.experiment_config import build_experiment_config
from polyharm_lab.experiments import run_experiment, summary_lines, write_reports


def make_config(tmp_path, monkeypatch, payload, **overrides):
    monkeypatch.delenv("POLYHARM_THREADS", raising=False)
    return build_experiment_config(
        payload, out=tmp_path / "out", loader=ConfigLoader(cwd=tmp_path), **overrides
    )


def test_verify_ball_mass_on_random_planar_harmonics(tmp_path, monkeypatch):
    cfg = make_config(
        tmp_path,
        monkeypatch,
        {
            "command": "verify-ball-mass",
            "dim": 2,
            "seed": 0,
            "verify-ball-mass": {"count": 3, "max_degree": 3, "radii": [0.5, 1.0], "rule_level": 16},
        },
    )
    result = run_experiment(cfg)
    assert result.ok
    assert result.summary["cases"] == 3
    assert len(result.tables["masses"].rows) == 6


def test_verify_sphere_bounds_in_the_plane(tmp_path, monkeypatch):
    cfg = make_config(
        tmp_path,
        monkeypatch,
        {
            "command": "verify-sphere-bounds",
            "dim": 2,
            "seed": 1,
            "verify-sphere-bounds": {
                "max_degree": 2,
                "polys_per_degree": 1,
                "pairs": 200,
                "derivative_points": 10,
                "rule_level": 32,
            },
        },
    )
    result = run_experiment(cfg)
    assert result.ok
    assert result.summary["total_violations"] == 0
    assert set(result.summary["trials"]) == {
        "big-piece",
        "coefficient-bound",
        "derivative-bound",
        "lipschitz",
        "reverse-holder",
    }


def test_doubling_scan_classifies_degrees(tmp_path, monkeypatch):
    cfg = make_config(
        tmp_path,
        monkeypatch,
        {"command": "doubling-scan", "dim": 2, "polynomial": "x*y + x"},
    )
    result = run_experiment(cfg)
    assert result.ok
    assert (result.summary["j"], result.summary["d"]) == (1, 2)
    assert result.summary["status"] == "ok"
    assert len(result.tables["scan"].rows) == 24


def test_plain_doubling_scan_uses_given_radii(tmp_path, monkeypatch):
    cfg = make_config(
        tmp_path,
        monkeypatch,
        {
            "command": "doubling-scan",
            "dim": 2,
            "polynomial": "x^2 - y^2",
            "doubling-scan": {"classify": False, "steps": 6, "r_min": 0.1, "r_max": 10.0},
        },
    )
    result = run_experiment(cfg)
    assert result.ok
    assert "status" not in result.summary
    assert result.tables["scan"].rows[0][0] == 0.1
    assert abs(result.summary["exponent_at_infinity"] - 2.0) < 1e-8


def test_fr_metric_checks_pass_on_a_planar_line(tmp_path, monkeypatch):
    cfg = make_config(
        tmp_path,
        monkeypatch,
        {"command": "fr-metric", "dim": 2, "seed": 3, "polynomial": "x", "fr-metric": {"rule_level": 48}},
    )
    result = run_experiment(cfg)
    assert result.summary["failed"] == []
    assert result.ok
    names = {row[0] for row in result.tables["checks"].rows}
    assert names == {
        "symmetry",
        "triangle",
        "zero-measure",
        "monotone",
        "composition",
        "particle-vs-quadrature",
    }


def test_lewy_demo_with_dump(tmp_path, monkeypatch):
    cfg = make_config(
        tmp_path,
        monkeypatch,
        {
            "command": "lewy-demo",
            "polynomial": "x",
            "lewy-demo": {"max_grid_level": 5, "dump": True},
        },
    )
    result = run_experiment(cfg)
    assert result.ok
    assert result.summary["nodal_components"] == 2
    assert result.summary["laplacian_is_zero"]
    assert (tmp_path / "out" / "nodal_grid.csv").exists()
    assert (tmp_path / "out" / "nodal_grid.obj").exists()


def test_reports_are_reproducible_apart_from_the_timestamp(tmp_path, monkeypatch):
    cfg = make_config(
        tmp_path,
        monkeypatch,
        {"command": "doubling-scan", "dim": 2, "polynomial": "x*y + x", "doubling-scan": {"steps": 8}},
    )
    first = write_reports(run_experiment(cfg), cfg, timestamp="2026-01-01T00:00:00+00:00")
    json_path, csv_path = first
    assert json_path.name == "doubling-scan.json"
    assert csv_path.name == "doubling-scan_scan.csv"
    payload = json.loads(json_path.read_text(encoding="utf-8"))
    assert payload["config"]["command"] == "doubling-scan"
    assert list(payload) == sorted(payload)

    before = json_path.read_text(encoding="utf-8")
    csv_before = csv_path.read_text(encoding="utf-8").splitlines()[1:]
    write_reports(run_experiment(cfg), cfg)
    assert json_path.read_text(encoding="utf-8") == before
    assert csv_path.read_text(encoding="utf-8").splitlines()[1:] == csv_before

    metadata, columns, rows = reports.read_csv(csv_path)
    assert columns == ["r", "ratio", "local_exponent"]
    assert metadata["command"] == "doubling-scan"
    assert len(rows) == 8


def test_summary_lines_format_floats(tmp_path, monkeypatch):
    cfg = make_config(
        tmp_path,
        monkeypatch,
        {"command": "doubling-scan", "dim": 2, "polynomial": "x", "doubling-scan": {"steps": 4}},
    )
    lines = summary_lines(run_experiment(cfg))
    assert any(line.startswith("exponent_at_zero: ") for line in lines)
    assert all(": " in line for line in lines)


def test_lewy_demo_accepts_other_odd_degree_harmonics(tmp_path, monkeypatch):
    cfg = make_config(
        tmp_path,
        monkeypatch,
        {"command": "lewy-demo", "polynomial": "x*y*z", "lewy-demo": {"steps": 8}},
    )
    result = run_experiment(cfg)
    assert result.summary["nodal_components"] == 8
    assert result.summary["expected_components"] is None
    assert result.summary["antipodal_parity"]
    assert result.ok


def test_lewy_demo_even_degree_and_explicit_count(tmp_path, monkeypatch):
    zonal = make_config(
        tmp_path,
        monkeypatch,
        {"command": "lewy-demo", "polynomial": "x^2 + y^2 - 2*z^2", "lewy-demo": {"steps": 8}},
    )
    result = run_experiment(zonal)
    assert result.summary["nodal_components"] == 3
    assert result.ok

    wrong = make_config(
        tmp_path,
        monkeypatch,
        {
            "command": "lewy-demo",
            "polynomial": "x*y*z",
            "lewy-demo": {"steps": 8, "expected_components": 2},
        },
    )
    result = run_experiment(wrong)
    assert result.summary["expected_components"] == 2
    assert not result.ok


def test_cone_distance_of_a_planar_line(tmp_path, monkeypatch):
    cfg = make_config(
        tmp_path,
        monkeypatch,
        {
            "command": "cone-distance",
            "dim": 2,
            "seed": 0,
            "polynomial": "x",
            "cone-distance": {"radii": [1.0], "restarts": 1, "maxiter": 20, "rule_level": 32},
        },
    )
    result = run_experiment(cfg)
    assert result.ok
    assert result.summary["witness_radius"] is None
    assert result.summary["k"] == 1
    assert len(result.tables["distances"].rows) == 1
    paths = write_reports(result, cfg)
    assert [p.name for p in paths] == ["cone-distance.json", "cone-distance_distances.csv"]


def test_cone_distance_battery_finds_wrong_degree_witnesses(tmp_path, monkeypatch):
    cfg = make_config(
        tmp_path,
        monkeypatch,
        {
            "command": "cone-distance",
            "dim": 2,
            "seed": 5,
            "cone-distance": {
                "count": 2,
                "max_degree": 2,
                "radii": [1.0],
                "restarts": 2,
                "maxiter": 40,
                "rule_level": 64,
            },
        },
    )
    result = run_experiment(cfg)
    rows = result.tables["battery"].rows
    assert len(rows) == 2
    assert all(row[2] != row[3] for row in rows)
    assert result.summary["cases"] == 2
    assert result.summary["witnesses"] == 2
    assert result.summary["pass_rate"] == 1.0
    assert result.ok


def test_doubling_battery_on_random_mixed_polynomials(tmp_path, monkeypatch):
    cfg = make_config(
        tmp_path,
        monkeypatch,
        {
            "command": "doubling-scan",
            "dim": 2,
            "seed": 2,
            "doubling-scan": {
                "count": 3,
                "max_degree": 3,
                "sandwich_radii": 2,
                "min_pass_rate": 0.5,
            },
        },
    )
    result = run_experiment(cfg)
    rows = result.tables["battery"].rows
    assert len(rows) == 3
    assert all(1 <= row[1] < row[2] <= 3 for row in rows)
    assert result.summary["sandwich_checks"] == 12
    assert result.summary["sandwich_failures"] == 0
    assert result.summary["pass_rate"] >= 0.5
    assert result.ok


def test_blowup_handler_gates_on_both_trends(tmp_path, monkeypatch):
    cfg = make_config(
        tmp_path,
        monkeypatch,
        {
            "command": "blowup",
            "seed": 0,
            "polynomial": "x*y + x",
            "blowup": {"radii": [0.1, 0.01], "rule_level": 12, "zero_rule_level": 16},
        },
    )
    result = run_experiment(cfg)
    assert result.summary["limit_degree"] == 1
    assert result.summary["monotone_last_decade"]
    assert result.summary["hausdorff_decreasing"]
    assert result.ok
    assert len(result.tables["blowup"].rows) == 2

    strict = make_config(
        tmp_path,
        monkeypatch,
        {
            "command": "blowup",
            "seed": 0,
            "polynomial": "x*y + x",
            "blowup": {
                "radii": [0.1, 0.01],
                "rule_level": 12,
                "zero_rule_level": 16,
                "max_final_distance": 0.0,
            },
        },
    )
    assert not run_experiment(strict).ok
