"""Training configuration: validation, files, banner."""

import pytest

from quanv3d.config import (
    ConfigError,
    TrainConfig,
    apply_overrides,
    format_config,
    load_config_file,
)


class TestNormalization:
    def test_defaults_are_valid(self):
        cfg = TrainConfig().normalized()
        assert cfg.kernel_sizes == (2, 2)
        assert cfg.grid_dims == (32, 32, 32)

    def test_single_kernel_fans_out(self):
        cfg = TrainConfig(num_filters=6, kernel_sizes=(3,)).normalized()
        assert cfg.kernel_sizes == (3,) * 6

    def test_kernel_count_mismatch(self):
        with pytest.raises(ConfigError, match="kernel sizes"):
            TrainConfig(num_filters=4, kernel_sizes=(2, 3)).normalized()

    def test_unsupported_filter_count(self):
        with pytest.raises(ConfigError, match="num_filters"):
            TrainConfig(num_filters=3).normalized()

    def test_unsupported_kernel_size(self):
        with pytest.raises(ConfigError, match="kernel size"):
            TrainConfig(kernel_sizes=(5,)).normalized()

    def test_negative_lambda(self):
        with pytest.raises(ConfigError, match="rf_lambda"):
            TrainConfig(rf_lambda=-0.1).normalized()

    def test_grid_smaller_than_kernel(self):
        with pytest.raises(ConfigError, match="smaller than"):
            TrainConfig(kernel_sizes=(4,), grid_dims=(3, 8, 8)).normalized()

    def test_scalar_grid_dims_cubed(self):
        cfg = TrainConfig(grid_dims=16).normalized()
        assert cfg.grid_dims == (16, 16, 16)


class TestConfigFile:
    def test_parse_and_apply(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(
            "# comment line\n"
            "num_filters = 4\n"
            "kernel_sizes = 2,3,4,2\n"
            "rf_lambda = 0.05  # inline comment\n"
            "grid_dims = 16\n"
        )
        overrides = load_config_file(path)
        cfg = apply_overrides(TrainConfig(), overrides).normalized()
        assert cfg.num_filters == 4
        assert cfg.kernel_sizes == (2, 3, 4, 2)
        assert cfg.rf_lambda == 0.05
        assert cfg.grid_dims == (16, 16, 16)

    def test_unknown_key_reports_line(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("nope = 3\n")
        with pytest.raises(ConfigError, match="run.cfg:1"):
            load_config_file(path)

    def test_bad_value_reports_line(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("epochs = many\n")
        with pytest.raises(ConfigError, match="run.cfg:1"):
            load_config_file(path)

    def test_flags_override_file(self):
        """Precedence: defaults < file < explicit flags."""
        from_file = {"epochs": 5, "seed": 3}
        cfg = apply_overrides(TrainConfig(), from_file)
        cfg = apply_overrides(cfg, {"epochs": 9})
        assert cfg.epochs == 9 and cfg.seed == 3


class TestSerialization:
    def test_json_roundtrip_exact(self):
        cfg = TrainConfig(num_filters=4, kernel_sizes=(2, 3, 4, 2),
                          rf_lambda=0.017, seed=12345).normalized()
        back = TrainConfig.from_json(cfg.to_json())
        assert back == cfg

    def test_banner_lists_every_field_sorted(self):
        banner = format_config(TrainConfig().normalized())
        lines = banner.splitlines()
        assert lines[0] == "# effective-config"
        keys = [ln.split("=")[0].strip("# ").strip() for ln in lines[1:]]
        assert keys == sorted(keys)
        assert any("rf_lambda = 0.1" in ln for ln in lines)
        assert any("kernel_sizes = 2,2" in ln for ln in lines)
