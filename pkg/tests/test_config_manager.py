"""
設定管理のテスト
"""

import json

import numpy as np
import pytest
import yaml

from app.models.experiment import ExperimentConfig, ExperimentMode
from app.utils.config_manager import ConfigError, ConfigManager
from app.utils.image_io import GrayImage, save_image


def _write(path, data):
    path.write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")
    return path


def test_shipped_configs_are_valid(project_dir):
    assert ConfigManager(str(project_dir / "config" / "config.yaml")).validate() == []


def test_missing_file_uses_defaults(tmp_path):
    config = ConfigManager(str(tmp_path / "nope.yaml"))
    assert config.get("experiment.sr") == 0.7
    assert config.validate() == []
    assert config.build_experiment_config().experiment.mode is ExperimentMode.SYNTHETIC


def test_dot_notation(tmp_path):
    config = ConfigManager(str(_write(tmp_path / "c.yaml", {"solver": {"eta0": 0.01}})))
    assert config.get("solver.eta0") == 0.01
    assert config.get("solver.missing", "x") == "x"

    config.set("experiment.output_dir", "/tmp/out")
    config.set("solver.groups", 8)
    cfg = config.build_experiment_config()
    assert cfg.experiment.output_dir == "/tmp/out"
    assert cfg.solver.groups == 8
    assert cfg.solver.eta0 == 0.01


def test_manifest_supplies_config(tmp_path):
    resolved = ExperimentConfig.model_validate({"experiment": {"seed": 99}}).model_dump(mode="json")
    manifest = {
        "run_id": "synthetic_60x60_r3_synthetic_g32_restart",
        "image": "synthetic_60x60_r3",
        "config": resolved,
        "solver": resolved["solver"],
        "seed": 5,
        "mask_shape": [60, 60],
        "mask": [[0, 0], [0, 1]],
        "software_version": "1.0.0",
        "metrics": {"psnr_db": "inf"},
    }
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(manifest), encoding="utf-8")

    config = ConfigManager(str(path))
    assert config.manifest is not None
    assert config.validate() == []
    assert config.build_experiment_config().experiment.seed == 99
    assert config.expected_masks() == {"synthetic_60x60_r3": [[0, 0], [0, 1]]}


def test_broken_json_reported(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text("{\"config\": ", encoding="utf-8")
    diagnostics = ConfigManager(str(path)).validate()
    assert len(diagnostics) == 1 and "JSON" in diagnostics[0]


def test_console_only_logging(tmp_path):
    config = ConfigManager(str(_write(tmp_path / "c.yaml", {"logging": {"log_dir": None}})))
    assert config.validate() == []
    assert config.build_experiment_config().logging.log_dir is None


def test_synthetic_mode_skips_image_checks(tmp_path):
    data = {"experiment": {"mode": "synthetic", "images": [str(tmp_path / "gone.pgm")]}}
    assert ConfigManager(str(_write(tmp_path / "c.yaml", data))).validate() == []


def test_empty_solver_section_means_defaults(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("experiment:\n  mode: synthetic\nsolver:\n", encoding="utf-8")
    cfg = ConfigManager(str(path)).build_experiment_config()
    assert cfg.solver.eta0 == 1e-3


def test_rho_out_of_range_names_field(tmp_path):
    config = ConfigManager(str(_write(tmp_path / "c.yaml", {"solver": {"rho2": 1.5}})))
    diagnostics = config.validate()
    assert len(diagnostics) == 1
    assert "rho2" in diagnostics[0]

    with pytest.raises(ConfigError) as excinfo:
        config.build_experiment_config()
    assert excinfo.value.diagnostics == diagnostics


def test_unknown_key_rejected(tmp_path):
    config = ConfigManager(str(_write(tmp_path / "c.yaml", {"solver": {"etaa0": 1.0}})))
    diagnostics = config.validate()
    assert len(diagnostics) == 1 and "etaa0" in diagnostics[0]


def test_group_count_exceeding_columns(tmp_path):
    image = save_image(GrayImage(np.zeros((2, 512))), tmp_path / "wide.pgm")
    data = {
        "experiment": {"mode": "inpaint", "images": [str(image)]},
        "solver": {"groups": 1000},
    }
    diagnostics = ConfigManager(str(_write(tmp_path / "c.yaml", data))).validate()
    assert len(diagnostics) == 1
    assert diagnostics[0].startswith("solver.groups")


def test_ablation_group_counts_checked(tmp_path):
    data = {"experiment": {"mode": "ablate_groups", "groups": [4, 80, 100]}}
    diagnostics = ConfigManager(str(_write(tmp_path / "c.yaml", data))).validate()
    assert len(diagnostics) == 2
    assert all(d.startswith("experiment.groups") for d in diagnostics)


def test_missing_image_reported(tmp_path):
    data = {"experiment": {"mode": "inpaint", "images": [str(tmp_path / "gone.pgm")]}}
    diagnostics = ConfigManager(str(_write(tmp_path / "c.yaml", data))).validate()
    assert len(diagnostics) == 1 and "file not found" in diagnostics[0]


def test_inpaint_needs_images(tmp_path):
    data = {"experiment": {"mode": "inpaint"}}
    diagnostics = ConfigManager(str(_write(tmp_path / "c.yaml", data))).validate()
    assert any("experiment.images" in d for d in diagnostics)


def test_yaml_syntax_error(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("solver: [unclosed\n", encoding="utf-8")
    diagnostics = ConfigManager(str(path)).validate()
    assert len(diagnostics) == 1 and "YAML" in diagnostics[0]


def test_group_counts():
    cfg = ExperimentConfig.model_validate({"experiment": {"groups": [1, 2, 4]}})
    assert cfg.group_counts() == [1, 2, 4]
    assert ExperimentConfig().group_counts() == [32]
