"""Tests for scenario configuration, the runner and the command line."""

import json
import shutil
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from hvquant.cli import EXIT_FAILED, EXIT_OK, EXIT_USAGE, main
from hvquant.exceptions import ConfigError
from hvquant.models import HamiltonianSpec, ScenarioKind
from hvquant.quantizer import (
    EmParticle,
    LinearDrift,
    MeasureAngularZ,
    MeasurePosition,
    PdmQuadratic,
    Sum,
)
from hvquant.runner import (
    MANIFEST,
    SENTINEL,
    build_hamiltonian,
    canonical_form,
    evaluate_checks,
    load_config,
    parse_config,
    run,
    run_file,
    with_seed,
)
from hvquant.utils import file_sha256

SCENARIO_DIR = Path(__file__).parent.parent / "scenarios"

LAMBDA_SCENARIO = SCENARIO_DIR / "lambda-statistics.json"


# ============================================================================
# Configuration
# ============================================================================


def test_parse_fills_defaults():
    cfg = parse_config('{"kind": "hv-lambda"}')
    assert cfg.kind is ScenarioKind.HV_LAMBDA
    assert cfg.hbar == 1.0
    assert cfg.seed == 0
    assert cfg.checks == {}


def test_parse_reports_every_problem():
    with pytest.raises(ConfigError) as info:
        parse_config('{"kind": "hv-lambda", "bogus": 1, "seed": "x"}')
    assert len(info.value.errors) == 2
    assert any("bogus" in line for line in info.value.errors)
    assert any("seed" in line for line in info.value.errors)


def test_parse_rejects_bad_json():
    with pytest.raises(ConfigError) as info:
        parse_config('{"kind": ')
    assert "line 1" in info.value.errors[0]


def test_missing_sections_rejected():
    with pytest.raises(ConfigError) as info:
        parse_config('{"kind": "evolve-quantum"}')
    assert "missing section" in str(info.value)


def test_canonical_form_round_trips():
    cfg = load_config(SCENARIO_DIR / "free-dispersion.json")
    text = canonical_form(cfg)
    again = parse_config(text)
    assert again == cfg
    assert canonical_form(again) == text


@pytest.mark.parametrize(
    ("spec", "expected"),
    [
        ({"kind": "em-particle", "potential": [0.0, 0.0, 0.5]}, EmParticle),
        ({"kind": "pdm-quadratic", "b": [0.5]}, PdmQuadratic),
        ({"kind": "linear-drift", "b": [0.0, 1.0]}, LinearDrift),
        ({"kind": "measure-position", "g": 2.0}, MeasurePosition),
        ({"kind": "measure-angular-z", "g": 2.0, "pointer_axis": 2}, MeasureAngularZ),
        (
            {
                "kind": "sum",
                "terms": [
                    {"coefficient": 1.0, "hamiltonian": {"kind": "em-particle"}},
                    {"coefficient": 0.5, "hamiltonian": {"kind": "linear-drift", "b": [1.0]}},
                ],
            },
            Sum,
        ),
    ],
)
def test_build_hamiltonian(spec, expected):
    assert isinstance(build_hamiltonian(HamiltonianSpec.model_validate(spec)), expected)


def test_b_profile_required():
    with pytest.raises(ValueError):
        HamiltonianSpec.model_validate({"kind": "linear-drift"})


@pytest.mark.parametrize("path", sorted(SCENARIO_DIR.glob("*.json")), ids=lambda p: p.stem)
def test_bundled_scenarios_parse(path):
    cfg = load_config(path)
    assert cfg.checks


def test_with_seed_reseeds_measurement():
    cfg = with_seed(load_config(SCENARIO_DIR / "born-momentum.json"), 99)
    assert cfg.seed == 99
    assert cfg.measurement.seed == 99


# ============================================================================
# Checks and runs
# ============================================================================


def test_evaluate_checks_directions():
    results = evaluate_checks(
        {"norm_drift": 1e-8, "separation_ratio": 8.0, "absent": 1.0},
        {"norm_drift": 1e-9, "separation_ratio": 5.0},
    )
    by_name = {r.name: r for r in results}
    assert by_name["norm_drift"].passed
    assert not by_name["separation_ratio"].passed
    assert not by_name["absent"].passed
    assert by_name["absent"].value is None


def test_lower_bound_metric_passes_at_threshold():
    (result,) = evaluate_checks({"antithetic_order": 1.8}, {"antithetic_order": 1.8})
    assert result.passed


def test_run_writes_manifest_and_removes_sentinel(tmp_path):
    manifest = run_file(LAMBDA_SCENARIO, tmp_path)
    out = tmp_path / "lambda-statistics"
    assert manifest.status == "pass"
    assert (out / MANIFEST).exists()
    assert not (out / SENTINEL).exists()

    written = json.loads((out / MANIFEST).read_text())
    assert written["status"] == "pass"
    assert written["config"]["seed"] == 2024
    (entry,) = written["files"]
    assert entry["path"] == "lambdas.csv"
    assert entry["sha256"] == file_sha256(out / "lambdas.csv")


def test_runs_are_byte_reproducible(tmp_path):
    a = run_file(LAMBDA_SCENARIO, tmp_path / "a")
    b = run_file(LAMBDA_SCENARIO, tmp_path / "b")
    assert [f.sha256 for f in a.files] == [f.sha256 for f in b.files]
    assert a.metrics == b.metrics


def test_failed_threshold_gives_fail_status(tmp_path):
    cfg = parse_config(
        '{"kind": "hv-lambda", "seed": 3, "hv": {"draws": 100}, '
        '"checks": {"magnitude_error": -1.0}}'
    )
    manifest = run(cfg, tmp_path)
    assert manifest.status == "fail"
    assert not manifest.checks[0].passed


def test_unresolvable_pointer_gives_error_status(tmp_path):
    payload = json.loads((SCENARIO_DIR / "born-momentum.json").read_text())
    payload["measurement"]["pointer"]["width"] = 2.0
    manifest = run(parse_config(json.dumps(payload)), tmp_path)
    assert manifest.status == "error"
    assert "UnresolvableOutcomesError" in manifest.error
    assert manifest.checks == []
    assert (tmp_path / MANIFEST).exists()
    assert not (tmp_path / SENTINEL).exists()


def test_momentum_measurement_reports_classical_contrast(tmp_path):
    payload = json.loads((SCENARIO_DIR / "born-momentum.json").read_text())
    payload["measurement"]["n_trajectories"] = 500
    payload["checks"] = {}
    manifest = run(parse_config(json.dumps(payload)), tmp_path)
    assert manifest.status == "pass"
    assert manifest.metrics["momentum_contrast"] > 1e-3
    assert "momentum_contrast_grad_S" in manifest.metrics
    assert "classicality_rho" not in manifest.metrics


def test_pilot_wave_guides_to_the_final_step(tmp_path):
    payload = json.loads((SCENARIO_DIR / "equivariance.json").read_text())
    payload["time"] = {"dt": 1e-3, "steps": 70, "output_every": 30}
    payload["pilot"] = {"particles": 500, "substeps": 4, "coarsen": 8}
    payload["checks"] = {}
    manifest = run(parse_config(json.dumps(payload)), tmp_path)
    assert manifest.status == "pass"
    table = pd.read_csv(tmp_path / "equivariance.csv")
    assert np.allclose(table["t"], [0.0, 0.03, 0.06, 0.07])
    assert manifest.metrics["equivariance_scaling"] > 0.0


# ============================================================================
# Command line
# ============================================================================


def test_cli_runs_matching_subcommand(tmp_path):
    code = main(["hv", "--config", str(LAMBDA_SCENARIO), "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert (tmp_path / MANIFEST).exists()


def test_cli_rejects_kind_mismatch(tmp_path):
    code = main(["measure", "--config", str(LAMBDA_SCENARIO), "--out", str(tmp_path)])
    assert code == EXIT_USAGE


def test_cli_rejects_invalid_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"kind": "hv-lambda", "extra": true}')
    assert main(["hv", "--config", str(bad)]) == EXIT_USAGE


def test_cli_check_runs_directory(tmp_path):
    scenarios = tmp_path / "scenarios"
    scenarios.mkdir()
    shutil.copy(LAMBDA_SCENARIO, scenarios)
    code = main(["check", "--scenarios", str(scenarios), "--out", str(tmp_path / "out")])
    assert code == EXIT_OK
    assert (tmp_path / "out" / "lambda-statistics" / MANIFEST).exists()


def test_cli_check_reports_failure(tmp_path):
    scenarios = tmp_path / "scenarios"
    scenarios.mkdir()
    payload = json.loads(LAMBDA_SCENARIO.read_text())
    payload["checks"] = {"magnitude_error": -1.0}
    (scenarios / "strict.json").write_text(json.dumps(payload))
    code = main(["check", "--scenarios", str(scenarios), "--out", str(tmp_path / "out")])
    assert code == EXIT_FAILED


def test_cli_check_needs_scenarios(tmp_path):
    assert main(["check", "--scenarios", str(tmp_path)]) == EXIT_USAGE


@pytest.mark.slow
@pytest.mark.parametrize("path", sorted(SCENARIO_DIR.glob("*.json")), ids=lambda p: p.stem)
def test_bundled_scenario_passes(path, tmp_path):
    manifest = run_file(path, tmp_path)
    failed = [c.name for c in manifest.checks if not c.passed]
    assert manifest.status == "pass", manifest.error or failed


def test_cli_jobs_belongs_to_check_only():
    with pytest.raises(SystemExit) as excinfo:
        main(["hv", "--config", str(LAMBDA_SCENARIO), "--jobs", "4"])
    assert excinfo.value.code == EXIT_USAGE
