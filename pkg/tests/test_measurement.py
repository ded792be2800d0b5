"""Tests for impulsive pointer measurements."""

import json
import math

import numpy as np
import pytest
from pydantic import ValidationError

from hvquant.exceptions import UnresolvableOutcomesError, UsageError
from hvquant.fields import integrate
from hvquant.measurement import (
    OutcomeHistogram,
    classify,
    linear_observable_oracle,
    pointer_density,
    pointer_separation_check,
    prepare_state,
    quantum_vs_classical_position,
    repeated_pointer_measurement,
    run_measurement,
)
from hvquant.models import MeasurementConfig
from hvquant.quantizer import norm_squared


def _measurement(scenario_dir, name: str, **overrides) -> MeasurementConfig:
    raw = json.loads((scenario_dir / f"{name}.json").read_text())["measurement"]
    raw.update(overrides)
    return MeasurementConfig.model_validate(raw)


def test_separation_ratio(scenario_dir):
    cfg = _measurement(scenario_dir, "born-momentum")
    assert pointer_separation_check(cfg) == pytest.approx(20.0)


def test_single_outcome_is_always_separated(scenario_dir):
    cfg = _measurement(
        scenario_dir, "born-momentum", system=[{"amplitude": 1.0, "eigenvalue": 1.0}]
    )
    assert pointer_separation_check(cfg) == math.inf


def test_overlapping_pointer_is_rejected(scenario_dir):
    cfg = _measurement(scenario_dir, "born-momentum")
    wide = cfg.model_copy(update={"pointer": cfg.pointer.model_copy(update={"width": 2.0})})
    with pytest.raises(UnresolvableOutcomesError):
        run_measurement(wide)


def test_system_weights_must_sum_to_one(scenario_dir):
    with pytest.raises(ValidationError):
        _measurement(
            scenario_dir,
            "born-momentum",
            system=[{"amplitude": 0.5, "eigenvalue": -1.0}, {"amplitude": 0.5, "eigenvalue": 1.0}],
        )


def test_chain_only_for_position(scenario_dir):
    chain = [{"g": 1.0, "duration": 1.0, "pointer": {"width": 0.3, "axis": {"n": 16, "lower": -1, "upper": 1}}}]
    with pytest.raises(ValidationError):
        _measurement(scenario_dir, "born-momentum", chain=chain)


def test_histogram_statistics():
    hist = OutcomeHistogram(
        eigenvalues=np.array([-1.0, 1.0]),
        expected=np.array([0.3, 0.7]),
        counts=np.array([30, 70]),
        unresolved=10,
    )
    assert hist.total == 110
    assert hist.unresolved_fraction == pytest.approx(10 / 110)
    assert np.allclose(hist.probabilities, [0.3, 0.7])
    assert hist.born_deviation() == pytest.approx(0.0, abs=1e-12)
    assert hist.within_born_bound()
    frame = hist.to_frame()
    assert list(frame.columns) == ["outcome", "count", "frequency", "expected", "standard_error"]
    assert frame["count"].tolist() == [30, 70]


def test_classify_assigns_supports():
    finals = np.array([-10.0, -9.6, 10.0, 0.0, 10.4])
    counts, unresolved = classify(finals, np.array([-10.0, 10.0]), np.array([1.0, 1.0]))
    assert counts.tolist() == [2, 2]
    assert unresolved == 1


def test_prepared_state_is_normalized(scenario_dir):
    prepared = prepare_state(_measurement(scenario_dir, "born-momentum"))
    assert prepared.grid.shape == (128, 256)
    assert norm_squared(prepared.psi) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(prepared.weights, [0.3, 0.7])
    assert integrate(pointer_density(prepared.psi)) == pytest.approx(1.0, abs=1e-10)


def test_position_measurement_is_classical(scenario_dir):
    gaps = quantum_vs_classical_position(_measurement(scenario_dir, "position-classicality"))
    assert gaps["rho"] < 1e-10


def test_momentum_measurement_departs_from_classical_transport(scenario_dir):
    contrast = quantum_vs_classical_position(_measurement(scenario_dir, "born-momentum"))
    assert math.isfinite(contrast["rho"])
    assert math.isfinite(contrast["grad_S"])
    assert contrast["rho"] > 1e-3


@pytest.mark.parametrize("name", ["born-angular", "linear-observable"])
def test_classicality_needs_position_or_momentum(scenario_dir, name):
    with pytest.raises(UsageError):
        quantum_vs_classical_position(_measurement(scenario_dir, name))


def test_chained_pointers_read_each_other(scenario_dir):
    cfg = _measurement(scenario_dir, "position-classicality", n_trajectories=2000)
    chain = repeated_pointer_measurement(cfg)
    assert chain.stages == 2
    assert chain.readouts.shape == (2000, 2)
    assert np.all(chain.agreement() < 1e-8)


def test_chain_rejects_too_many_stages(scenario_dir):
    cfg = _measurement(scenario_dir, "position-classicality", n_trajectories=10)
    with pytest.raises(UsageError):
        repeated_pointer_measurement(cfg, stages=3)


def test_per_mode_propagation_matches_dense_exponential(scenario_dir):
    assert linear_observable_oracle(_measurement(scenario_dir, "linear-observable")) < 1e-6


@pytest.mark.slow
@pytest.mark.parametrize("name", ["born-momentum", "born-angular"])
def test_born_statistics(scenario_dir, name):
    result = run_measurement(_measurement(scenario_dir, name))
    assert result.separation_ratio >= 8.0
    assert result.histogram.born_deviation() < 0.02
    assert result.histogram.unresolved_fraction < 0.01
    assert result.observable_drift < 1e-8
