"""
Unit Tests for Configuration

Tests settings, presets and experiment config merging.
"""

import json

import pytest


class TestSettings:
    """Tests for Settings configuration."""

    def test_default_settings(self):
        """Test default settings values."""
        from src.config import Settings

        settings = Settings()

        assert settings.app_name == "ContrastGuard"
        assert settings.seed == 0
        assert settings.enable_tracing is False

    def test_is_production(self):
        """Test is_production property."""
        from src.config import Settings

        assert Settings(app_env="development").is_production is False
        assert Settings(app_env="production").is_production is True

    def test_env_prefix(self, monkeypatch):
        """Test CONTRASTGUARD_ environment variables are read."""
        from src.config import Settings

        monkeypatch.setenv("CONTRASTGUARD_WORKERS", "7")
        monkeypatch.setenv("CONTRASTGUARD_LOG_LEVEL", "DEBUG")

        settings = Settings()
        assert settings.workers == 7
        assert settings.log_level == "DEBUG"

    def test_config_hash_is_stable(self):
        """Test config_hash ignores construction order."""
        from src.config import config_hash
        from src.services.contrastive import LossConfig

        a = LossConfig(temperature=0.5, reduction="sum")
        b = LossConfig(reduction="sum", temperature=0.5)

        assert config_hash(a) == config_hash(b)
        assert config_hash(a) != config_hash(LossConfig(temperature=0.2))


class TestPresets:
    """Tests for the YAML preset loader."""

    @pytest.mark.parametrize("name", ["ci", "desk", "full"])
    def test_presets_validate(self, name):
        """Test every preset builds a valid ExperimentConfig."""
        from src.evaluation.config import build_config

        cfg = build_config(name)
        assert cfg.preset == name

    def test_desk_defaults(self):
        """Test the desk preset matches the desk-scale schedule."""
        from src.evaluation.config import build_config

        cfg = build_config("desk")

        assert cfg.train.phase_a_epochs == 50
        assert cfg.train.phase_b_epochs == 20
        assert cfg.detect.n_samples == 1000
        assert cfg.detect.batch == 64
        assert cfg.recover.data_budget == 512

    def test_unknown_preset(self):
        """Test unknown preset names are rejected."""
        from src.templates import PresetLoadError, get_preset

        with pytest.raises(PresetLoadError):
            get_preset("huge")

    def test_get_preset_returns_copy(self):
        """Test callers cannot mutate the cache."""
        from src.templates import get_preset

        first = get_preset("ci")
        first["model"]["channels"] = [1, 1]

        assert get_preset("ci")["model"]["channels"] == [4, 8]


class TestExperimentConfig:
    """Tests for merging presets, documents and overrides."""

    def test_deep_merge(self):
        """Test nested mappings merge and scalars replace."""
        from src.evaluation.config import deep_merge

        merged = deep_merge({"a": {"b": 1, "c": 2}, "d": [1]}, {"a": {"c": 3}, "d": [2]})

        assert merged == {"a": {"b": 1, "c": 3}, "d": [2]}

    def test_overrides_win(self, tmp_path):
        """Test keyword overrides beat the document, which beats the preset."""
        from src.evaluation.config import build_config

        cfg = build_config(
            "ci",
            {"seed": 5, "train": {"batch": 12}},
            seed=9,
            output_dir=tmp_path,
        )

        assert cfg.seed == 9
        assert cfg.train.batch == 12
        assert cfg.train.phase_a_epochs == 1
        assert cfg.output_dir == tmp_path

    def test_invalid_document(self):
        """Test invalid nested values raise ConfigurationError."""
        from src.evaluation.config import ConfigurationError, build_config

        with pytest.raises(ConfigurationError):
            build_config("ci", {"model": {"embedding_dim": 0}})

    def test_duplicate_run_names(self):
        """Test attack run names must be unique."""
        from src.evaluation.config import ConfigurationError, build_config

        runs = [{"name": "x", "kind": "gda"}, {"name": "x", "kind": "pbs"}]
        with pytest.raises(ConfigurationError):
            build_config("ci", {"attacks": {"runs": runs}})

    def test_load_config_document(self, tmp_path):
        """Test JSON documents load and non-objects are rejected."""
        from src.evaluation.config import ConfigurationError, load_config_document

        good = tmp_path / "good.json"
        good.write_text(json.dumps({"seed": 3}))
        bad = tmp_path / "bad.json"
        bad.write_text("[1, 2]")

        assert load_config_document(good) == {"seed": 3}
        with pytest.raises(ConfigurationError):
            load_config_document(bad)
