"""配置分层测试."""

import os
from pathlib import Path
from unittest.mock import patch

import pytest
import yaml
from lcg.config import ExperimentConfig
from lcg.config import _convert_value
from lcg.config import config_hash
from lcg.config import env_overrides
from lcg.config import load_config
from lcg.config import load_packaged_defaults
from lcg.core.exceptions import ConfigurationError
from lcg.core.types import ClassifierKind
from lcg.core.types import SamplerKind


@pytest.fixture
def user_config(tmp_path):
    """写入用户配置文件并返回其路径."""

    def _write(data, name="config.yaml"):
        path = tmp_path / name
        path.write_text(yaml.safe_dump(data))
        return str(path)

    return _write


class TestPackagedDefaults:
    """包内自带的默认配置."""

    def test_defaults_have_no_seed(self):
        defaults, experiments = load_packaged_defaults()
        assert defaults["seed"] is None
        assert defaults["schedule"] == {"T": 100, "b_start": 0.001, "b_end": 0.2}
        assert "quadrants-compose" in experiments

    def test_merged_defaults_need_a_seed(self):
        merged = load_config(environ={})
        with pytest.raises(ConfigurationError) as exc_info:
            ExperimentConfig.from_mapping(merged)
        assert exc_info.value.missing_keys == ["seed"]


class TestLayering:
    """预设, 用户配置, 环境变量与命令行的优先级."""

    def test_preset_by_name(self):
        merged = load_config(preset="quadrants-negate", environ={})
        terms = merged["guidance"]["terms"]
        assert terms[1] == {"attribute": "B", "polarity": "negate", "scale": 4.0}

    def test_preset_by_index_and_fragment(self):
        assert load_config(preset="3", environ={})["world"]["preset"] == "axes8d"
        assert load_config(preset="correlated", environ={})["world"]["preset"] == "correlated8d"

    def test_unknown_preset(self):
        with pytest.raises(ConfigurationError):
            load_config(preset="no-such-experiment", environ={})

    def test_user_document_beats_preset(self, user_config):
        path = user_config({"seed": 1, "world": {"preset": "quadrants2d", "n": 5}})
        merged = load_config(config_path=path, preset="axes-sequential", environ={})
        assert merged["world"] == {"preset": "quadrants2d", "n": 5}
        assert merged["denoiser"]["hidden"] == [128, 128]
        assert merged["denoiser"]["steps"] == 20000

    def test_environment_beats_user_document(self, user_config):
        path = user_config({"seed": 1, "sampling": {"n": 7}})
        environ = {"LCG_SEED": "9", "LCG_SAMPLING__N": "10", "LCG_SCHEDULE__T": "50", "OTHER": "x"}
        merged = load_config(config_path=path, environ=environ)
        assert merged["seed"] == 9
        assert merged["sampling"]["n"] == 10
        assert merged["schedule"]["T"] == 50
        assert "other" not in merged

    def test_cli_beats_environment(self):
        merged = load_config(cli_overrides={"seed": 4, "sampling": {"sampler": "ddim"}}, environ={"LCG_SEED": "9"})
        assert merged["seed"] == 4
        assert merged["sampling"]["sampler"] == "ddim"
        assert merged["sampling"]["n"] == 2000

    def test_config_file_from_environment(self, user_config):
        path = user_config({"seed": 12})
        with patch.dict(os.environ, {"LCG_CONFIG_FILE": path}):
            assert load_config(environ={})["seed"] == 12

    def test_user_presets_are_available(self, user_config):
        path = user_config(
            {"experiments": {"tiny": {"description": "small", "settings": {"world": {"n": 3}}}}}
        )
        merged = load_config(config_path=path, preset="tiny", environ={})
        assert merged["world"]["n"] == 3
        assert "experiments" not in merged

    def test_guidance_sampler_moves_to_sampling(self, user_config):
        path = user_config({"guidance": {"terms": ["A"], "sampler": "ddim", "t_start": 20}})
        merged = load_config(config_path=path, environ={})
        assert merged["sampling"]["sampler"] == "ddim"
        assert merged["sampling"]["t_start"] == 20
        assert "sampler" not in merged["guidance"]


class TestDocuments:
    """读取配置文件."""

    def test_json_document(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text('{"seed": 5, "out": "runs/x"}')
        assert load_config(config_path=str(path), environ={})["out"] == "runs/x"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError) as exc_info:
            load_config(config_path=str(tmp_path / "absent.yaml"), environ={})
        assert "not found" in str(exc_info.value)

    def test_malformed_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("seed: [1, 2\n")
        with pytest.raises(ConfigurationError):
            load_config(config_path=str(path), environ={})

    def test_document_must_be_a_mapping(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigurationError):
            load_config(config_path=str(path), environ={})


class TestEnvironment:
    """LCG_* 环境变量."""

    def test_nested_keys(self):
        overrides = env_overrides(
            {"LCG_DENOISER__LR": "0.01", "LCG_EDIT__LINEAR": "true", "LCG_CONFIG_FILE": "x.yaml"}
        )
        assert overrides == {"denoiser": {"lr": 0.01}, "edit": {"linear": True}}

    def test_convert_value(self):
        assert _convert_value("true") is True
        assert _convert_value("No") is False
        assert _convert_value("null") is None
        assert _convert_value("3") == 3
        assert _convert_value("0.5") == 0.5
        assert _convert_value("ddim") == "ddim"


class TestExperimentConfig:
    """合并后配置的校验."""

    def test_typed_sections(self):
        merged = load_config(cli_overrides={"seed": 1, "out": "runs/t"}, environ={})
        config = ExperimentConfig.from_mapping(merged)
        assert config.seed == 1
        assert config.out == Path("runs/t")
        assert config.sampling.sampler is SamplerKind.DDPM
        assert config.edit.sampler is SamplerKind.DDIM
        assert config.classifiers.kind is ClassifierKind.LINEAR
        assert config.schedule.T == 100

    def test_string_values_are_coerced(self):
        config = ExperimentConfig.from_mapping(
            {"seed": "2", "out": "o", "sampling": {"n": "10", "sampler": "ddim"}, "schedule": {"b_end": "0.1"}}
        )
        assert config.seed == 2
        assert config.sampling.n == 10
        assert config.sampling.sampler is SamplerKind.DDIM
        assert config.schedule.b_end == 0.1

    def test_missing_out(self):
        with pytest.raises(ConfigurationError) as exc_info:
            ExperimentConfig.from_mapping({"seed": 1})
        assert exc_info.value.missing_keys == ["out"]

    def test_negative_seed(self):
        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_mapping({"seed": -1, "out": "o"})

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigurationError) as exc_info:
            ExperimentConfig.from_mapping({"seed": 1, "out": "o", "wrold": {}})
        assert "wrold" in str(exc_info.value)

    def test_unknown_section_key(self):
        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_mapping({"seed": 1, "out": "o", "sampling": {"steps": 3}})

    def test_bad_values(self):
        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_mapping({"seed": 1, "out": "o", "sampling": {"sampler": "euler"}})
        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_mapping({"seed": 1, "out": "o", "world": {"n": "many"}})

    def test_hash_follows_content(self):
        a = config_hash({"seed": 1, "world": {"n": 3}})
        assert a == config_hash({"world": {"n": 3}, "seed": 1})
        assert a != config_hash({"seed": 2, "world": {"n": 3}})
        config = ExperimentConfig.from_mapping({"seed": 1, "out": "o"})
        assert config.hash == config_hash({"seed": 1, "out": "o"})
