import math

import pytest
import yaml

from apdsync.config import (GHZ_TO_RAD_S, Config, ScenarioConfig, SweepSpec, emit_document, ghz_to_rad_s,
                            load_config, parse_config, scenario_document, with_overrides)
from apdsync.errors import ConfigError


def test_caption_document_converts_to_rad_per_second(config_dir):
    cfg = load_config(config_dir / "fig4a.yml")
    assert isinstance(cfg, ScenarioConfig)
    assert cfg.controller.Omega_c == 2 * math.pi * 1e9
    assert cfg.controller.eps_c == pytest.approx(418.0 * cfg.controller.Omega_c, rel=1e-15)
    assert cfg.controller.Delta_c == pytest.approx(-0.4 * cfg.controller.Omega_c, rel=1e-15)
    assert cfg.osc1.Omega == ghz_to_rad_s(0.01)
    assert cfg.osc1.T == 0.002
    assert cfg.sigma1_x0 == pytest.approx(math.sqrt(1.5))


def test_defaults_follow_reference_period(config_dir):
    cfg = load_config(config_dir / "fig4a.yml")
    period = 1e-9
    assert cfg.reference_period == pytest.approx(period, rel=1e-12)
    assert cfg.run.integrator.method == "adaptive"
    assert cfg.run.integrator.dt == pytest.approx(1e-3 * period)
    assert cfg.run.embedding.tau == 0.3e-9
    assert cfg.run.embedding.resample_dt == pytest.approx(0.3e-10)
    assert cfg.run.output_dt == cfg.run.embedding.resample_dt
    # auto t0 is the later of 10/Gamma and 50 controller periods
    assert cfg.analysis.t0 == pytest.approx(max(10.0 / ghz_to_rad_s(0.1), 50.0 * period))
    assert cfg.analysis.sync_threshold == 1e-3
    assert cfg.analysis.regime_observable == "re_beta_c"
    assert cfg.analysis.lyapunov == "auto"


def test_synthetic_scenario_has_no_controller(synthetic_document):
    cfg = parse_config(synthetic_document)
    assert cfg.controller is None
    assert cfg.drive == {"kind": "sinusoid", "coupling": "bare", "offset": 200.0, "amplitude": 100.0,
                         "frequency": 0.003 * GHZ_TO_RAD_S}
    assert cfg.analysis.regime_observable == "sigma1_x"
    assert cfg.reference_period == pytest.approx(1e-7, rel=1e-12)


def test_yaml_text_is_accepted(synthetic_document):
    assert parse_config(yaml.safe_dump(synthetic_document)) == parse_config(synthetic_document)


def test_invalid_yaml_is_a_config_error():
    with pytest.raises(ConfigError):
        parse_config("units: [GHz_over_2pi")


def test_empty_document_lists_every_missing_field():
    with pytest.raises(ConfigError) as info:
        parse_config({})
    problems = info.value.problems
    assert any("unit marker" in p for p in problems)
    assert "missing field 'controller.Omega_c'" in problems
    assert "missing field 'oscillators.osc2.T'" in problems
    assert "missing field 'initial.sigma1_x'" in problems
    assert "missing field 'run.t_end'" in problems


def test_unknown_keys_are_rejected(synthetic_document):
    synthetic_document["colour"] = "blue"
    synthetic_document["oscillators"]["osc1"]["mass"] = 1.0
    with pytest.raises(ConfigError) as info:
        parse_config(synthetic_document)
    assert "unknown key '<root>.colour'" in info.value.problems
    assert "unknown key 'oscillators.osc1.mass'" in info.value.problems


def test_unit_marker_is_mandatory(synthetic_document):
    del synthetic_document["units"]
    with pytest.raises(ConfigError, match="unit marker"):
        parse_config(synthetic_document)
    synthetic_document["units"] = "rad/s"
    with pytest.raises(ConfigError, match="unit marker"):
        parse_config(synthetic_document)


def test_non_numeric_and_missing_drive_fields(synthetic_document):
    synthetic_document["initial"]["sigma2_x"] = "large"
    del synthetic_document["drive"]["amplitude"]
    with pytest.raises(ConfigError) as info:
        parse_config(synthetic_document)
    assert any("initial.sigma2_x" in p and "finite number" in p for p in info.value.problems)
    assert "missing field 'drive.amplitude'" in info.value.problems


def test_t0_must_precede_t_end(synthetic_document):
    synthetic_document["analysis"]["t0"] = 3.0e-7
    with pytest.raises(ConfigError, match="t0"):
        parse_config(synthetic_document)


def test_controller_observable_needs_controller(synthetic_document):
    synthetic_document["analysis"]["regime_observable"] = "re_beta_c"
    with pytest.raises(ConfigError, match="controller"):
        parse_config(synthetic_document)


def test_mismatch_beyond_one_is_rejected(synthetic_document):
    synthetic_document["sweep"] = {"axes": {"Delta_Gamma": [0.0, 1.2], "Delta_G": [0.0]}}
    with pytest.raises(ConfigError) as info:
        parse_config(synthetic_document)
    assert any("Delta_Gamma" in p and "Gamma_2" in p for p in info.value.problems)


def test_single_mismatch_axis_is_completed_with_zero(synthetic_document):
    synthetic_document["sweep"] = {"axes": {"Delta_G": [0.0, 0.05]}}
    spec = parse_config(synthetic_document)
    assert isinstance(spec, SweepSpec)
    assert spec.kind == "mismatch"
    assert spec.axes == (("Delta_Gamma", (0.0,)), ("Delta_G", (0.0, 0.05)))


def test_detuning_axis_cannot_be_combined(config_dir):
    doc = Config(str(config_dir / "fig4_scan.yml")).config
    doc["sweep"]["axes"]["Delta_G"] = [0.0]
    with pytest.raises(ConfigError, match="one-axis"):
        parse_config(doc)


def test_detuning_axis_needs_controller(synthetic_document):
    synthetic_document["sweep"] = {"axes": {"Delta_c_over_Omega_c": [-0.5]}}
    with pytest.raises(ConfigError, match="controller drive"):
        parse_config(synthetic_document)


def test_shipped_configs_load(config_dir):
    paths = sorted(config_dir.glob("*.yml"))
    assert len(paths) == 10
    for path in paths:
        load_config(path)

    scan = load_config(config_dir / "fig4_scan.yml")
    assert scan.kind == "detuning"
    assert scan.axes == (("Delta_c_over_Omega_c", (-0.4, -0.6, -0.85, -0.95)),)

    grid = load_config(config_dir / "fig6.yml")
    assert grid.kind == "mismatch"
    assert grid.axis_names == ("Delta_Gamma", "Delta_G")
    assert [len(v) for _, v in grid.axes] == [5, 5]
    assert grid.base.controller.Delta_c == -GHZ_TO_RAD_S


def test_emitted_document_parses_back_equal(config_dir, synthetic_document):
    for cfg in (load_config(config_dir / "fig4c.yml"), load_config(config_dir / "fig6.yml"),
                parse_config(synthetic_document)):
        again = parse_config(emit_document(cfg))
        assert again == cfg
        assert again.config_hash() == cfg.config_hash()


def test_config_hash_tracks_content(synthetic_document):
    a = parse_config(synthetic_document)
    b = parse_config(synthetic_document)
    synthetic_document["run"]["t_end"] = 3.0e-7
    c = parse_config(synthetic_document)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()


def test_scenario_document_applies_cell_overrides(config_dir):
    spec = load_config(config_dir / "fig6.yml")
    cell = parse_config(scenario_document(spec.base, Delta_Gamma=0.2, Delta_G=0.1))
    assert isinstance(cell, ScenarioConfig)
    assert cell.osc2.Gamma == pytest.approx(spec.base.osc1.Gamma * 0.8, rel=1e-15)
    assert cell.osc2.g == pytest.approx(spec.base.osc1.g * 0.9, rel=1e-15)
    assert cell.osc2.Omega == spec.base.osc1.Omega

    scan = load_config(config_dir / "fig4_scan.yml")
    cell = parse_config(scenario_document(scan.base, Delta_c_over_Omega_c=-0.6))
    assert cell.controller.Delta_c == pytest.approx(-0.6 * cell.controller.Omega_c, rel=1e-15)


def test_with_overrides(synthetic_document, config_dir):
    cfg = with_overrides(parse_config(synthetic_document), t_end=1.0e-7, fixed_dt=1.0e-10)
    assert cfg.run.t_end == 1.0e-7
    assert cfg.run.integrator.method == "fixed"
    assert cfg.run.integrator.dt == 1.0e-10

    spec = with_overrides(load_config(config_dir / "fig6.yml"), t_end=1.0e-7)
    assert isinstance(spec, SweepSpec)
    assert spec.base.run.t_end == 1.0e-7


def test_dotted_lookup():
    cfg = Config(data={"run": {"integrator": {"rtol": 1e-9}}})
    assert cfg.get("run.integrator.rtol") == 1e-9
    assert cfg.get("run.embedding.tau", 0.3) == 0.3


def test_drive_coupling_mode(synthetic_document, config_dir):
    assert parse_config(synthetic_document).drive["coupling"] == "bare"
    assert load_config(config_dir / "fig6.yml").base.drive["coupling"] == "enhanced"
    synthetic_document["drive"]["coupling"] = "dressed"
    with pytest.raises(ConfigError, match="drive.coupling"):
        parse_config(synthetic_document)


def test_dotted_lookup_tolerates_null_sections():
    assert Config(data={"drive": None}).get("drive.kind", "controller") == "controller"


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "absent.yml")
