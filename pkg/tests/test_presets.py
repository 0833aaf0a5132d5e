"""实验预设测试."""

import pytest
from lcg.config import load_packaged_defaults
from lcg.core.exceptions import ConfigurationError
from lcg.presets import ExperimentManager


@pytest.fixture
def manager():
    return ExperimentManager(
        {
            "quadrants-compose": {"description": "compose", "settings": {"world": {"preset": "quadrants2d"}}},
            "axes-sequential": {"description": "sequential", "settings": {"world": {"preset": "axes8d"}}},
        }
    )


class TestListing:
    """预设列表."""

    def test_get_list(self, manager):
        listing = manager.get_list()
        assert [p["index"] for p in listing] == ["1", "2"]
        assert listing[1] == {
            "index": "2",
            "name": "axes-sequential",
            "description": "sequential",
            "world": "axes8d",
        }

    def test_settings_are_copied(self, manager):
        settings = manager.settings("quadrants-compose")
        settings["world"] = None
        assert manager.settings("quadrants-compose")["world"] == {"preset": "quadrants2d"}


class TestResolve:
    """按名称, 序号与片段查找."""

    def test_exact(self, manager):
        assert manager.resolve("axes-sequential") == "axes-sequential"

    def test_index(self, manager):
        assert manager.resolve("1") == "quadrants-compose"

    def test_fragment(self, manager):
        assert manager.resolve("AXES") == "axes-sequential"

    def test_index_out_of_range(self, manager):
        with pytest.raises(ConfigurationError) as exc_info:
            manager.resolve("3")
        assert "Valid range: 1-2" in str(exc_info.value)

    def test_unknown(self, manager):
        with pytest.raises(ConfigurationError) as exc_info:
            manager.resolve("spiral")
        assert "quadrants-compose" in str(exc_info.value)


class TestValidate:
    """预设校验."""

    def test_packaged_presets_are_valid(self):
        _, experiments = load_packaged_defaults()
        assert ExperimentManager(experiments).validate() == []

    def test_empty_registry(self):
        assert ExperimentManager({}).validate() == ["No experiment presets configured"]

    def test_problems_are_reported(self):
        errors = ExperimentManager(
            {
                "no-description": {"settings": {}},
                "bad-world": {"description": "x", "settings": {"world": {"preset": "spiral3d"}}},
                "seeded": {"description": "x", "settings": {"seed": 4}},
                "scalar": 3,
            }
        ).validate()
        assert "Preset 'no-description' missing required field: description" in errors
        assert "Preset 'bad-world' references unknown world 'spiral3d'" in errors
        assert "Preset 'seeded' must not fix the seed" in errors
        assert "Preset 'scalar' must be a mapping" in errors
