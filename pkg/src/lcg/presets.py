"""Named experiment presets."""

import logging
from typing import Any
from typing import Dict
from typing import List
from typing import Mapping

from .core.exceptions import ConfigurationError
from .core.types import ExperimentInfo
from .core.types import WorldPreset

logger = logging.getLogger(__name__)

REQUIRED_FIELDS = ("description", "settings")


class ExperimentManager:
    """Experiment preset registry."""

    def __init__(self, experiments: Mapping[str, Any]):
        self.experiments: Dict[str, Any] = dict(experiments)

    def get_list(self) -> List[ExperimentInfo]:
        """All presets with their 1-based index, in declaration order."""
        presets: List[ExperimentInfo] = []
        for i, (name, entry) in enumerate(self.experiments.items()):
            world = (entry.get("settings", {}).get("world") or {}).get("preset")
            presets.append(
                {
                    "index": str(i + 1),
                    "name": name,
                    "description": entry.get("description", ""),
                    "world": world,
                }
            )
        logger.debug(f"Found {len(presets)} experiment presets")
        return presets

    def settings(self, name: str) -> Dict[str, Any]:
        resolved = self.resolve(name)
        return dict(self.experiments[resolved].get("settings", {}))

    def resolve(self, preset: str) -> str:
        """Resolve a preset by exact name, 1-based index, then substring.

        Args:
            preset: Preset name, index, or a fragment of a name

        Returns:
            The preset name

        Raises:
            ConfigurationError: Nothing matches, or the index is out of range
        """
        if preset in self.experiments:
            return preset

        names = list(self.experiments)
        try:
            index = int(preset) - 1
        except ValueError:
            for name in names:
                if preset.lower() in name.lower():
                    logger.debug(f"Fuzzy matched preset '{preset}' to '{name}'")
                    return name
            available = ", ".join(names) or "none"
            raise ConfigurationError(
                f"Unknown experiment preset '{preset}'. Available presets: {available}"
            ) from None

        if 0 <= index < len(names):
            logger.debug(f"Resolved preset #{preset} to '{names[index]}'")
            return names[index]
        raise ConfigurationError(f"Invalid preset index: {preset}. Valid range: 1-{len(names)}")

    def validate(self) -> List[str]:
        """Check every preset; an empty list means all are usable."""
        errors = []
        if not self.experiments:
            return ["No experiment presets configured"]
        presets = {p.value for p in WorldPreset}
        for name, entry in self.experiments.items():
            if not isinstance(entry, Mapping):
                errors.append(f"Preset '{name}' must be a mapping")
                continue
            for required in REQUIRED_FIELDS:
                if required not in entry:
                    errors.append(f"Preset '{name}' missing required field: {required}")
            world = (entry.get("settings", {}).get("world") or {}).get("preset")
            if world is not None and world not in presets:
                errors.append(f"Preset '{name}' references unknown world '{world}'")
            if "seed" in entry.get("settings", {}):
                errors.append(f"Preset '{name}' must not fix the seed")
        return errors
