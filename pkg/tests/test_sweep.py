import math

import numpy as np
import pytest

from apdsync.config import Config, load_config, parse_config, scenario_document
from apdsync.errors import AggregationError, ConfigError
from apdsync.moments import physicality_violations, sigma_series
from apdsync.result_logger import write_grid_csv
from apdsync.sweep import (GridCell, Provenance, _run_cell, aggregate, build_drive, grid_indices, label_counts,
                           regime_observable, run_scenario, run_sweep, simulate_scenario, sweep_detuning,
                           sweep_mismatch)

AXES = (("Delta_Gamma", (0.0, 0.2)), ("Delta_G", (0.0, 0.1, 0.2)))


def failed_cell(index, values=(0.0, 0.0)):
    return GridCell(index, values, None, "failed: test")


def mismatch_spec(document, gammas=(0.0, 0.2), gs=(0.0, 0.1)):
    document["sweep"] = {"axes": {"Delta_Gamma": list(gammas), "Delta_G": list(gs)}}
    return parse_config(document)


def short_detuning_spec(config_dir, values):
    doc = Config(str(config_dir / "fig4_scan.yml")).config
    doc["run"]["t_end"] = 4.0e-9
    doc["analysis"]["t0"] = 1.0e-9
    doc["sweep"]["axes"]["Delta_c_over_Omega_c"] = list(values)
    return parse_config(doc)


def test_grid_indices_are_row_major():
    assert grid_indices(AXES) == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]


def test_aggregate_is_independent_of_completion_order():
    cells = [failed_cell(i) for i in grid_indices(AXES)]
    forward = aggregate(cells, AXES)
    backward = aggregate(list(reversed(cells)), AXES)
    assert forward == backward
    assert forward.shape == (2, 3)
    assert forward.cell(1, 2).index == (1, 2)
    assert [c.index for c in forward.cells] == grid_indices(AXES)


def test_aggregate_rejects_missing_duplicate_and_stray_cells():
    cells = [failed_cell(i) for i in grid_indices(AXES)]
    with pytest.raises(AggregationError, match="missing"):
        aggregate(cells[:-1], AXES)
    with pytest.raises(AggregationError, match="duplicate"):
        aggregate(cells + [failed_cell((0, 0))], AXES)
    with pytest.raises(AggregationError, match="outside"):
        aggregate(cells + [failed_cell((2, 0))], AXES)


def test_aggregate_single_cell():
    axes = (("Delta_Gamma", (0.1,)), ("Delta_G", (0.0,)))
    grid = aggregate([failed_cell((0, 0), (0.1, 0.0))], axes, provenance=Provenance("abc"))
    assert len(grid) == 1
    assert grid.cell(0, 0).values == (0.1, 0.0)
    assert grid.provenance.config_hash == "abc"


def test_synthetic_scenario_synchronizes(synthetic_document):
    controller, moments, report = run_scenario(parse_config(synthetic_document))
    assert controller is None
    assert moments.t_end == pytest.approx(2.0e-7)
    assert abs(report.E_avg) < 1e-9
    assert report.t_sync is not None and report.t_sync < 5.0e-8
    assert report.status == "ok"
    assert report.final_sigmas[0].sigma_x == pytest.approx(report.final_sigmas[1].sigma_x, rel=1e-9)


def test_scenario_outcome_carries_errors_and_portrait(synthetic_document):
    outcome = simulate_scenario(parse_config(synthetic_document))
    assert outcome.errors.e_nb[0] == pytest.approx(-9.0)
    assert outcome.portrait is not None and outcome.portrait.shape[1] == 3
    assert outcome.drive.kind == "sinusoid"


def test_regime_observables(synthetic_document):
    cfg = parse_config(synthetic_document)
    outcome = simulate_scenario(cfg)
    t = np.linspace(0.0, cfg.run.t_end, 5)
    sigma = regime_observable("sigma1_x", None, outcome.moments, outcome.drive)(t)
    assert sigma[0] == pytest.approx(np.sqrt(1.5), rel=1e-12)
    np.testing.assert_allclose(regime_observable("s1", None, outcome.moments, outcome.drive)(t),
                               outcome.drive(t)[:, 0])
    with pytest.raises(ConfigError):
        regime_observable("abs_alpha_c_sq", None, outcome.moments, outcome.drive)


def test_mismatch_grid_on_shared_synthetic_drive(synthetic_document):
    spec = mismatch_spec(synthetic_document)
    grid = sweep_mismatch(spec)
    assert grid.kind == "mismatch"
    assert grid.shape == (2, 2)
    assert all(c.status == "ok" for c in grid.cells)
    assert abs(grid.cell(0, 0).report.E_avg) <= 1e-9
    assert abs(grid.cell(1, 1).report.E_avg) > abs(grid.cell(0, 0).report.E_avg)
    assert grid.provenance.drive_digest == build_drive(spec.base)[1].digest()
    assert grid.provenance.config_hash == spec.config_hash()
    assert sum(label_counts(grid).values()) == 4


def test_parallel_and_serial_grids_write_identical_bytes(synthetic_document, tmp_path):
    spec = mismatch_spec(synthetic_document)
    serial = write_grid_csv(run_sweep(spec, workers=1), tmp_path / "serial.csv")
    parallel = write_grid_csv(run_sweep(spec, workers=2), tmp_path / "parallel.csv")
    assert serial.read_bytes() == parallel.read_bytes()


def test_empty_axis_gives_empty_grid(synthetic_document):
    grid = sweep_mismatch(mismatch_spec(synthetic_document, gammas=()))
    assert len(grid) == 0
    assert grid.shape == (0, 2)


def test_sweep_functions_check_their_axes(synthetic_document, config_dir):
    spec = mismatch_spec(synthetic_document)
    with pytest.raises(ConfigError):
        sweep_detuning(spec)
    with pytest.raises(ConfigError):
        sweep_mismatch(load_config(config_dir / "fig4_scan.yml"))


def test_failed_cell_is_recorded_not_raised():
    cell = _run_cell(((1, 0), (0.5, 0.0), {}, None))
    assert cell.report is None
    assert cell.index == (1, 0)
    assert cell.status.startswith("failed: ")


def test_single_detuning_cell_matches_direct_run(config_dir):
    spec = short_detuning_spec(config_dir, [-0.95])
    grid = sweep_detuning(spec)
    assert grid.kind == "detuning"
    cell = grid.cell(0)
    assert cell.values == (-0.95,)

    _, _, report = run_scenario(parse_config(scenario_document(spec.base, Delta_c_over_Omega_c=-0.95)))
    assert cell.report.E_avg == report.E_avg
    assert str(cell.report.regime) == str(report.regime)
    assert cell.portrait is not None


def enhanced_coupling_spec(document):
    """Constant drive, g equal to Omega at the mean drive: Omega' = 2 Omega for oscillator 1."""
    document["oscillators"] = {name: {"Omega": 0.01, "Gamma": 0.15, "g": 0.01, "T": 0.002}
                               for name in ("osc1", "osc2")}
    document["drive"] = {"kind": "constant", "value": 5.0, "coupling": "enhanced"}
    document["run"]["t_end"] = 1.5e-7
    document["analysis"]["t0"] = 5.0e-8
    document["sweep"] = {"axes": {"Delta_Gamma": [0.0, 0.4], "Delta_G": [0.0, 0.1]}}
    return parse_config(document)


def steady_sigma_x(omega_prime, T=0.002):
    n = 1.0 / math.expm1(1.054571817e-34 * omega_prime / (1.380649e-23 * T))
    return math.sqrt(0.5 + n)


def test_coupling_mismatch_shifts_the_thermal_floor(synthetic_document):
    grid = sweep_mismatch(enhanced_coupling_spec(synthetic_document))
    omega = 2 * math.pi * 1e7
    sigma1, sigma2 = steady_sigma_x(2.0 * omega), steady_sigma_x(1.9 * omega)
    expected = (sigma2 - sigma1) / sigma1
    assert 0.015 <= expected <= 0.045

    assert all(c.status == "ok" for c in grid.cells)
    assert abs(grid.cell(0, 0).report.E_avg) <= 1e-9
    assert abs(grid.cell(0, 1).report.E_avg) == pytest.approx(expected, rel=1e-6)
    # damping alone only changes how fast each oscillator reaches the same floor
    assert abs(grid.cell(1, 0).report.E_avg) < 1e-6


def test_enhanced_coupling_divides_the_drive_by_its_mean(synthetic_document):
    synthetic_document["drive"] = {"kind": "constant", "value": 200.0}
    _, bare = build_drive(parse_config(synthetic_document))
    synthetic_document["drive"]["coupling"] = "enhanced"
    _, enhanced = build_drive(parse_config(synthetic_document))
    t = np.linspace(0.0, 2.0e-7, 11)
    np.testing.assert_array_equal(bare(t), np.full((11, 2), 200.0))
    np.testing.assert_allclose(enhanced(t), np.ones((11, 2)), rtol=1e-12)
    assert enhanced.digest() != bare.digest()


@pytest.mark.slow
@pytest.mark.parametrize("name", ["fig5a", "fig5b", "fig5c", "fig5d"])
def test_convergence_runs_synchronize_within_ten_damping_times(config_dir, name):
    cfg = load_config(config_dir / f"{name}.yml")
    outcome = simulate_scenario(cfg)
    report = outcome.report
    assert report.status == "ok"
    assert abs(report.E_avg) < 1e-9
    assert report.t_sync is not None and report.t_sync <= 10.0 / cfg.osc1.Gamma

    assert physicality_violations(outcome.moments.states) == []
    sigmas = sigma_series(outcome.moments.states)
    np.testing.assert_array_equal(sigmas["sigma1_x"], sigmas["sigma1_p"])
    np.testing.assert_array_equal(sigmas["sigma2_x"], sigmas["sigma2_p"])
    assert np.all(sigmas["sigma1_x"] * sigmas["sigma1_p"] >= 0.5 - 1e-12)


@pytest.mark.slow
@pytest.mark.parametrize("name,label", [("fig4a", "period-1"), ("fig4b", "period-2"),
                                        ("fig4c", "period-4"), ("fig4d", "chaotic")])
def test_orbit_runs_classify_by_detuning(config_dir, name, label):
    regime = simulate_scenario(load_config(config_dir / f"{name}.yml")).report.regime
    assert str(regime) == label
    if label == "chaotic":
        assert regime.lyapunov_estimate > 0
    else:
        assert regime.lyapunov_estimate is None


@pytest.mark.slow
def test_mismatch_figure_grid(config_dir, tmp_path):
    spec = load_config(config_dir / "fig6.yml")
    grid = run_sweep(spec, workers=2)
    assert grid.shape == (5, 5)
    assert all(c.status == "ok" for c in grid.cells)

    # rows are Delta_Gamma, columns Delta_G
    e_avg = np.array([abs(c.report.E_avg) for c in grid.cells]).reshape(grid.shape)
    assert e_avg[0, 0] <= 1e-9
    assert e_avg[4, 0] < 0.01
    assert 0.015 <= e_avg[0, 4] <= 0.045
    assert np.all(np.diff(e_avg[0]) >= 0)
    assert np.ptp(e_avg[0]) > 3.0 * np.ptp(e_avg[:, 0])

    parallel = write_grid_csv(grid, tmp_path / "parallel.csv")
    serial = write_grid_csv(run_sweep(spec, workers=1), tmp_path / "serial.csv")
    assert serial.read_bytes() == parallel.read_bytes()


@pytest.mark.slow
def test_population_error_follows_closed_form_under_chaotic_drive(config_dir):
    doc = Config(str(config_dir / "fig4d.yml")).config
    gamma = 2 * np.pi * 0.1e9
    doc["run"]["t_end"] = 10.0 / gamma
    doc["analysis"]["t0"] = 1.0e-9
    outcome = simulate_scenario(parse_config(doc))
    expected = -9.0 * np.exp(-gamma * outcome.errors.times)
    np.testing.assert_allclose(outcome.errors.e_nb, expected, rtol=1e-6)
