import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from app.core.exceptions import ScenarioError
from app.models import catalog
from app.services.scenario_runner import (
    CSV_FLOAT_FORMAT,
    EXIT_ABORT,
    EXIT_CONFIG,
    EXIT_OK,
    apply_override,
    load_scenario,
    parse_override,
    point_cloud,
    run_scenario,
)

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def _planes_scenario(c: float, **extra) -> dict:
    document = {
        "schema": 1,
        "name": "planes",
        "manifold": {"id": "flat", "params": {"dim": 4}},
        "family": {
            "members": [
                {"submanifold": {"id": "affine_lagrangian", "params": {"c": c, "resolution": 3, "label": "upper"}}, "weight": 0.5},
                {"submanifold": {"id": "affine_lagrangian", "params": {"c": -c, "resolution": 3, "label": "lower"}}, "weight": 0.5},
            ]
        },
    }
    document.update(extra)
    return document


def _write(tmp_path: Path, document: dict, name: str = "scenario.json") -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(document))
    return path


def test_parse_override():
    assert parse_override("solver.flow_steps=64") == ("solver.flow_steps", 64)
    assert parse_override("name=plain text") == ("name", "plain text")
    assert parse_override("isotropic=false") == ("isotropic", False)
    with pytest.raises(ScenarioError):
        parse_override("no_value")


def test_apply_override_walks_lists_and_creates_keys():
    document = {"family": {"members": [{"weight": 0.5}, {"weight": 0.5}]}, "name": "x"}
    apply_override(document, "family.members.1.weight", 0.25)
    apply_override(document, "solver.flow_steps", 8)
    assert document["family"]["members"][1]["weight"] == 0.25
    assert document["solver"] == {"flow_steps": 8}
    with pytest.raises(ScenarioError):
        apply_override(document, "family.members.5.weight", 0.1)
    with pytest.raises(ScenarioError):
        apply_override(document, "family.members.first.weight", 0.1)
    with pytest.raises(ScenarioError):
        apply_override(document, "name.inner", 1)


def test_bundled_scenarios_load():
    for path in sorted(SCENARIOS.glob("*.json")):
        scenario = load_scenario(path)
        assert scenario.name == path.stem


def test_malformed_json_names_the_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "schema": 1,\n  "name": \n}')
    with pytest.raises(ScenarioError, match="line"):
        load_scenario(path)


def test_weights_must_sum_to_one(tmp_path):
    document = _planes_scenario(1e-3)
    document["family"]["members"][0]["weight"] = 0.7
    with pytest.raises(ScenarioError, match="sum"):
        load_scenario(_write(tmp_path, document))


def test_unknown_solver_settings_are_rejected(tmp_path):
    with pytest.raises(ScenarioError, match="flow_stepz"):
        load_scenario(_write(tmp_path, _planes_scenario(1e-3, solver={"flow_stepz": 3})))


def test_overrides_are_applied_before_validation(tmp_path):
    path = _write(tmp_path, _planes_scenario(1e-3))
    scenario = load_scenario(path, ["solver.flow_steps=16", "isotropic=false"])
    assert scenario.solver == {"flow_steps": 16}
    assert scenario.isotropic is False
    with pytest.raises(ScenarioError):
        load_scenario(path, ["family.members.0.weight=0.9"])


def test_config_error_still_writes_a_report(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{ not json")
    output = tmp_path / "out"
    outcome = run_scenario(path, output=output)
    assert outcome.exit_code == EXIT_CONFIG
    report = json.loads((output / "report.json").read_text())
    assert report["exit_code"] == EXIT_CONFIG
    assert report["error"]["kind"] == "ScenarioError"


def test_unknown_manifold_is_a_config_error(tmp_path, settings):
    document = _planes_scenario(1e-3)
    document["manifold"] = {"id": "klein_bottle"}
    outcome = run_scenario(_write(tmp_path, document), output=tmp_path / "out", base_settings=settings)
    assert outcome.exit_code == EXIT_CONFIG
    assert "klein_bottle" in outcome.report.error.message


def test_reference_index_past_the_family_is_a_config_error(tmp_path, settings):
    document = _planes_scenario(1e-3, isotropic=False, solver={"reference_index": 4})
    outcome = run_scenario(_write(tmp_path, document), output=tmp_path / "out", base_settings=settings)
    assert outcome.exit_code == EXIT_CONFIG
    assert outcome.report.error.kind == "ConfigError"
    assert "reference index 4" in outcome.report.error.message


def test_point_cloud_survives_csv(tmp_path):
    sub = catalog.perturbed_torus(1.0, 1.3, 0.05, 0.02, resolution=5)
    frame = point_cloud(sub)
    assert list(frame.columns) == ["s0", "s1", "x0", "x1", "x2", "x3"]
    path = tmp_path / "cloud.csv"
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    back = pd.read_csv(path, float_precision="round_trip")
    assert np.array_equal(back.to_numpy(), frame.to_numpy())


def test_average_only_run_is_deterministic(tmp_path, settings):
    path = _write(tmp_path, _planes_scenario(1e-3, isotropic=False))
    first = run_scenario(path, output=tmp_path / "a", base_settings=settings)
    second = run_scenario(path, output=tmp_path / "b", base_settings=settings)
    assert first.exit_code == second.exit_code == EXIT_OK
    assert (tmp_path / "a" / "N.csv").read_bytes() == (tmp_path / "b" / "N.csv").read_bytes()
    assert not (tmp_path / "a" / "L.csv").exists()
    assert first.report.epsilon_measured == pytest.approx(2e-3, rel=1e-6)


@pytest.mark.slow
def test_identity_scenario(tmp_path, fast_settings):
    output = tmp_path / "identity"
    outcome = run_scenario(SCENARIOS / "identity.json", output=output, base_settings=fast_settings)
    assert outcome.exit_code == EXIT_OK
    assert outcome.report.error is None
    member = pd.read_csv(output / "members_0.csv", float_precision="round_trip")
    L = pd.read_csv(output / "L.csv", float_precision="round_trip")
    assert np.allclose(L.to_numpy(), member.to_numpy(), atol=1e-10)
    assert json.loads((output / "report.json").read_text())["status"] in ("PASS", "INCONCLUSIVE")


@pytest.mark.slow
def test_containment_failure_aborts_the_flow(tmp_path, fast_settings):
    # eps = 1.5e-5 lies past the containment crossing
    path = _write(tmp_path, _planes_scenario(7.5e-6))
    outcome = run_scenario(path, output=tmp_path / "out", base_settings=fast_settings)
    assert outcome.exit_code == EXIT_ABORT
    assert outcome.report.error.kind == "LeftTube"
    assert outcome.report.error.constant == "842eps<R_eps_L_eps"
    assert (tmp_path / "out" / "N.csv").exists()


def test_constants_command_reports_containment(monkeypatch, capsys):
    import run_scenario as cli

    monkeypatch.setattr(sys, "argv", ["run_scenario.py", "constants", "1/70000"])
    assert cli.main() == EXIT_OK
    assert "Containment 842 eps < R(eps, L_eps): FAIL" in capsys.readouterr().out
    monkeypatch.setattr(sys, "argv", ["run_scenario.py", "constants", "1e-5"])
    assert cli.main() == EXIT_OK
    assert "Containment 842 eps < R(eps, L_eps): PASS" in capsys.readouterr().out


def test_constants_command_needs_an_epsilon(monkeypatch):
    import run_scenario as cli

    monkeypatch.setattr(sys, "argv", ["run_scenario.py", "constants"])
    assert cli.main() == EXIT_CONFIG


def _torus_pair(first: str, second: str) -> dict:
    members = {
        "bumpy": {"r1": 1.0, "r2": 1.3, "a1": 0.02, "a2": 0.01, "resolution": 5, "label": "bumpy"},
        "round": {"r1": 1.0, "r2": 1.3, "resolution": 5, "label": "round"},
    }
    return {
        "schema": 1,
        "name": "torus_pair",
        "manifold": {"id": "flat", "params": {"dim": 4}},
        "family": {
            "members": [
                {"submanifold": {"id": "perturbed_torus", "params": members[label]}, "weight": 0.5}
                for label in (first, second)
            ]
        },
        "solver": {"flow_steps": 1, "allow_containment_override": True},
    }


@pytest.mark.slow
def test_member_order_does_not_change_the_run(tmp_path, fast_settings):
    runs = []
    for order in (("bumpy", "round"), ("round", "bumpy")):
        path = _write(tmp_path, _torus_pair(*order), name=f"{order[0]}.json")
        output = tmp_path / order[0]
        outcome = run_scenario(path, output=output, base_settings=fast_settings)
        assert outcome.report.error is None
        runs.append((output, outcome.report.model_dump(exclude={"timings"})))
    (first_dir, first), (second_dir, second) = runs
    assert first == second
    assert first["flow"]["max_displacement"] > 0.0
    for name in ("N.csv", "L.csv", "members_0.csv", "members_1.csv"):
        assert (first_dir / name).read_bytes() == (second_dir / name).read_bytes()


@pytest.mark.slow
def test_moment_torus_scenario(tmp_path, fast_settings):
    outcome = run_scenario(SCENARIOS / "moment_torus.json", output=tmp_path / "out", base_settings=fast_settings)
    assert outcome.exit_code == EXIT_OK
    assert outcome.report.error is None
    (record,) = outcome.report.verifiers
    assert record.name == "moment_map_spread"
    assert record.trials == 1
    assert record.status == "PASS"
    assert not record.failures


@pytest.mark.slow
def test_sphere_product_scenario(tmp_path, fast_settings):
    outcome = run_scenario(SCENARIOS / "sphere_product.json", output=tmp_path / "out", base_settings=fast_settings)
    assert outcome.exit_code == EXIT_OK
    assert outcome.report.error is None
    records = {record.name: record for record in outcome.report.verifiers}
    assert set(records) == {"exactness", "form_bounds"}
    assert records["exactness"].trials == 100
    assert not records["exactness"].failures
    assert outcome.report.flow is not None
