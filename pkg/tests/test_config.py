import math
import os

import numpy as np
import pytest
import yaml
from pydantic import ValidationError

from src.config import config
from src.config.experiment import (
    PROTOCOLS,
    ExperimentConfig,
    GridSpec,
    expand_grid,
    load_experiment,
    resolve_includes,
)
from src.errors import ConfigurationError

EXPERIMENTS = os.path.join(config.PROJECT_ROOT, "experiments")


def _write(path, data):
    path.write_text(yaml.safe_dump(data, allow_unicode=True), encoding="utf-8")
    return path


def test_units_are_converted():
    experiment = ExperimentConfig.model_validate({
        "protocol": "dtc",
        "geometry": {"spacing_A": 1.54, "field_G": 600, "tilt_deg": 90, "distance_nm": 1.2},
        "dtc": {"tau_us": 125, "theta_pi": 1.03, "rabi_frequency_kHz": 37.14},
    })
    assert experiment.geometry.spacing == pytest.approx(0.154)
    assert experiment.geometry.field == pytest.approx(0.06)
    assert experiment.geometry.tilt == pytest.approx(math.pi / 2)
    assert experiment.dtc.tau == pytest.approx(125e-6)
    assert experiment.dtc.theta == pytest.approx(1.03 * math.pi)
    # 角频率按 2π·Hz 换算
    assert experiment.dtc.rabi_frequency == pytest.approx(2 * math.pi * 37.14e3)


def test_frequency_axis_stays_in_hertz():
    experiment = ExperimentConfig.model_validate({
        "protocol": "axy_spectrum",
        "axy": {"frequencies_kHz": {"start": 600, "stop": 690, "num": 4}},
    })
    np.testing.assert_allclose(expand_grid(experiment.axy.frequencies), [600e3, 630e3, 660e3, 690e3])


def test_unsuffixed_quantities_are_rejected():
    with pytest.raises(ValidationError, match="unit suffix"):
        ExperimentConfig.model_validate({"protocol": "dtc", "geometry": {"spacing": 0.154}})


def test_unknown_suffix_is_rejected():
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate({"protocol": "dtc", "geometry": {"spacing_furlong": 1.0}})


def test_duplicate_quantity_is_rejected():
    with pytest.raises(ValidationError, match="more than once"):
        ExperimentConfig.model_validate({"protocol": "dtc", "geometry": {"spacing_nm": 0.154, "spacing_A": 1.54}})


@pytest.mark.parametrize("data, message", [
    ({"protocol": "axy_spectrum"}, "axy"),
    ({"protocol": "validate"}, "validate"),
    ({"protocol": "ramsey"}, "times"),
    ({"protocol": "wahuha"}, "tau"),
])
def test_protocol_blocks_are_required(data, message):
    with pytest.raises(ValidationError, match=message):
        ExperimentConfig.model_validate(data)


def test_unknown_protocol_and_engine():
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate({"protocol": "cpmg"})
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate({"protocol": "dtc", "engine": "gpu"})


def test_grid_forms():
    np.testing.assert_array_equal(expand_grid(None), [])
    np.testing.assert_array_equal(expand_grid(3.0), [3.0])
    np.testing.assert_array_equal(expand_grid([1.0, 2.0]), [1.0, 2.0])
    np.testing.assert_allclose(expand_grid(GridSpec(start=0.0, stop=1.0, num=3)), [0.0, 0.5, 1.0])


def test_includes_merge_depth_first(tmp_path):
    _write(tmp_path / "base.yaml", {"seed": 1, "geometry": {"nx": 2, "spacing_nm": 0.2}})
    _write(tmp_path / "mid.yaml", {"include": "base.yaml", "geometry": {"nx": 3}})
    path = _write(tmp_path / "run.yaml", {"include": ["mid.yaml"], "protocol": "dtc", "seed": 5})
    merged = resolve_includes(path)
    assert merged == {"seed": 5, "geometry": {"nx": 3, "spacing_nm": 0.2}, "protocol": "dtc"}
    experiment, raw = load_experiment(path)
    assert experiment.geometry.nx == 3
    assert experiment.geometry.spacing == pytest.approx(0.2)
    assert raw == merged


def test_include_cycle_is_detected(tmp_path):
    _write(tmp_path / "a.yaml", {"include": ["b.yaml"], "protocol": "dtc"})
    _write(tmp_path / "b.yaml", {"include": ["a.yaml"]})
    with pytest.raises(ConfigurationError, match="cycle"):
        resolve_includes(tmp_path / "a.yaml")


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigurationError):
        load_experiment(tmp_path / "absent.yaml")
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ConfigurationError, match="mapping"):
        resolve_includes(tmp_path / "list.yaml")


@pytest.mark.parametrize("name", sorted(f for f in os.listdir(EXPERIMENTS) if f != "base.yaml"))
def test_bundled_experiments_validate(name):
    experiment, _ = load_experiment(os.path.join(EXPERIMENTS, name))
    assert experiment.protocol in PROTOCOLS
    assert experiment.run_name


def test_run_name_defaults_to_protocol():
    assert ExperimentConfig.model_validate({"protocol": "dtc"}).run_name == "dtc"
    named = ExperimentConfig.model_validate({"protocol": "dtc", "output": {"name": "plateau"}})
    assert named.run_name == "plateau"


def test_config_sections_and_environment(monkeypatch, tmp_path):
    path = _write(tmp_path / "config.yaml", {"engine": {"taylor_order": 6}, "cache": {"directory": "$LAYERSIM_TEST_CACHE"}})
    monkeypatch.setenv("LAYERSIM_CONFIG", str(path))
    monkeypatch.setenv("LAYERSIM_TEST_CACHE", str(tmp_path / "cache"))
    monkeypatch.setenv("LAYERSIM_WORKERS", "3")
    try:
        config.load_config(reload=True)
        assert config.get_config_section(["engine", "taylor_order"]) == 6
        # 未覆盖的键保留默认值
        assert config.get_config_section(["engine", "stability_bound"]) == 0.1
        assert config.get_config_section(["engine", "missing"]) is None
        assert config.cache_directory() == str(tmp_path / "cache")
        assert config.worker_count() == 3
    finally:
        monkeypatch.undo()
        config.load_config(reload=True)
