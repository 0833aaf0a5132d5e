"""Configuration management for experiment runs.

Layers, later ones winning: packaged defaults, a named experiment
preset, the user config document, LCG_* environment variables, and CLI
flags.
"""

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import Any
from typing import Dict
from typing import List
from typing import Mapping
from typing import Optional
from typing import Tuple

import yaml

from .core.exceptions import ConfigurationError
from .core.types import Activation
from .core.types import ClassifierKind
from .core.types import SamplerKind
from .presets import ExperimentManager

logger = logging.getLogger(__name__)

ENV_PREFIX = "LCG_"
ENV_CONFIG_FILE = "LCG_CONFIG_FILE"
DEFAULTS_FILE = Path(__file__).parent / "defaults.yaml"


def _read_document(path: Path) -> Dict[str, Any]:
    """Parse a YAML or JSON document (JSON is a YAML subset)."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ConfigurationError(f"Cannot read config file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Malformed config file {path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"Config file {path} must hold a mapping, got {type(data).__name__}")
    return data


def load_packaged_defaults() -> Tuple[Dict[str, Any], Dict[str, Any]]:
    """Packaged `defaults:` block and `experiments:` presets."""
    data = _read_document(DEFAULTS_FILE)
    return dict(data.get("defaults", {})), dict(data.get("experiments", {}))


def load_user_document(config_path: Optional[str] = None) -> Dict[str, Any]:
    """User config from --config, else from LCG_CONFIG_FILE; empty when neither is set."""
    path = config_path or os.environ.get(ENV_CONFIG_FILE)
    if not path:
        return {}
    if not Path(path).exists():
        raise ConfigurationError(f"Config file not found: {path}")
    document = _read_document(Path(path))
    logger.info(f"Loaded config document {path}")
    return document


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    """Turn LCG_SECTION__KEY=value variables into a nested mapping."""
    environ = os.environ if environ is None else environ
    env_config: Dict[str, Any] = {}
    for key, value in environ.items():
        if not key.startswith(ENV_PREFIX) or key == ENV_CONFIG_FILE:
            continue
        parts = key[len(ENV_PREFIX):].lower().split("__")
        current = env_config
        for part in parts[:-1]:
            current = current.setdefault(part, {})
        # Schedule length is the one upper-case key.
        leaf = "T" if parts[-1] == "t" else parts[-1]
        current[leaf] = _convert_value(value)
    return env_config


def load_config(
    config_path: Optional[str] = None,
    preset: Optional[str] = None,
    cli_overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> Dict[str, Any]:
    """Merge every configuration layer into one mapping.

    Args:
        config_path: Optional path to a JSON or YAML config document
        preset: Optional experiment preset name or 1-based index
        cli_overrides: Nested mapping of values given as CLI flags
        environ: Environment to read LCG_* overrides from (default os.environ)

    Returns:
        The merged configuration mapping

    Raises:
        ConfigurationError: Unreadable document or unknown preset
    """
    defaults, experiments = load_packaged_defaults()
    user = load_user_document(config_path)
    experiments.update(user.pop("experiments", {}) or {})

    config: Dict[str, Any] = {}
    _deep_merge(config, defaults)
    if preset:
        manager = ExperimentManager(experiments)
        name = manager.resolve(preset)
        logger.info(f"Using experiment preset '{name}'")
        _deep_merge(config, manager.settings(name))
    _deep_merge(config, user)
    _deep_merge(config, env_overrides(environ))
    _hoist_guidance_sampling(config)
    if cli_overrides:
        _deep_merge(config, dict(cli_overrides))
    return config


def _hoist_guidance_sampling(config: Dict[str, Any]) -> None:
    # A guidance document may name its sampler and t_start.
    guidance = config.get("guidance") or {}
    sampling = config.setdefault("sampling", {})
    for key in ("sampler", "t_start"):
        if key in guidance:
            sampling[key] = guidance.pop(key)


def config_hash(config: Mapping[str, Any]) -> str:
    """Stable digest of a merged configuration."""
    payload = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _convert_value(value: str) -> Any:
    """Try to convert a string value to an appropriate type.

    Args:
        value: The string value to convert

    Returns:
        The converted value
    """
    if value.lower() in ("true", "yes"):
        return True
    if value.lower() in ("false", "no"):
        return False
    if value.lower() in ("null", "none"):
        return None
    try:
        return int(value)
    except ValueError:
        try:
            return float(value)
        except ValueError:
            return value


def _deep_merge(target: Dict[str, Any], source: Mapping[str, Any]) -> None:
    """Deep merge two dictionaries.

    Args:
        target: The target dictionary to merge into
        source: The source dictionary to merge from
    """
    for key, value in source.items():
        if key in target and isinstance(target[key], dict) and isinstance(value, Mapping):
            _deep_merge(target[key], value)
        elif isinstance(value, Mapping):
            target[key] = {}
            _deep_merge(target[key], value)
        else:
            target[key] = value


# ---------------------------------------------------------------------------
# Typed view
# ---------------------------------------------------------------------------


@dataclass
class WorldSettings:
    preset: Optional[str] = "quadrants2d"
    inline: Optional[Dict[str, Any]] = None
    n: int = 10000


@dataclass
class ScheduleSettings:
    T: int = 100
    b_start: float = 1e-3
    b_end: float = 0.2


@dataclass
class DenoiserSettings:
    hidden: List[int] = field(default_factory=lambda: [64, 64])
    activation: Activation = Activation.TANH
    steps: int = 20000
    batch: int = 256
    lr: float = 1e-3
    log_every: int = 1000


@dataclass
class ClassifierSettings:
    kind: ClassifierKind = ClassifierKind.LINEAR
    attributes: List[str] = field(default_factory=list)
    epochs: int = 30
    lr: float = 0.05
    l2: float = 1e-4
    hidden: List[int] = field(default_factory=lambda: [32])
    batch: int = 256


@dataclass
class SamplingSettings:
    sampler: SamplerKind = SamplerKind.DDPM
    eta: float = 0.0
    n: int = 2000
    t_start: int = 50


@dataclass
class EditSettingsConfig:
    n: int = 500
    sampler: SamplerKind = SamplerKind.DDIM
    linear: bool = False
    sequential: bool = False
    sequence: List[Any] = field(default_factory=list)


@dataclass
class EvalSettingsConfig:
    n: int = 2000
    alpha: float = 4.0
    gamma: float = 1.0
    linear: bool = True
    edit_order: List[str] = field(default_factory=list)
    random_condition: bool = False
    path_comparison: bool = False


@dataclass
class ElboCheckSettings:
    samples: int = 10
    mc: int = 4


_SECTIONS = {
    "world": WorldSettings,
    "schedule": ScheduleSettings,
    "denoiser": DenoiserSettings,
    "classifiers": ClassifierSettings,
    "sampling": SamplingSettings,
    "edit": EditSettingsConfig,
    "eval": EvalSettingsConfig,
    "elbo_check": ElboCheckSettings,
}


def _section(cls: Any, name: str, raw: Any) -> Any:
    if raw is None:
        return cls()
    if not isinstance(raw, Mapping):
        raise ConfigurationError(f"Section '{name}' must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigurationError(f"Unknown keys in section '{name}': {unknown}")
    values = {}
    for key, value in raw.items():
        kind = known[key].type
        try:
            if isinstance(kind, type) and issubclass(kind, str) and kind is not str:
                value = kind(value)
            elif kind in (int, "int"):
                value = int(value)
            elif kind in (float, "float"):
                value = float(value)
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"Bad value for {name}.{key}: {value!r} ({e})") from e
        values[key] = value
    return cls(**values)


@dataclass
class ExperimentConfig:
    """Validated experiment configuration."""

    seed: int
    out: Path
    world: WorldSettings = field(default_factory=WorldSettings)
    schedule: ScheduleSettings = field(default_factory=ScheduleSettings)
    denoiser: DenoiserSettings = field(default_factory=DenoiserSettings)
    classifiers: ClassifierSettings = field(default_factory=ClassifierSettings)
    guidance: Dict[str, Any] = field(default_factory=dict)
    sampling: SamplingSettings = field(default_factory=SamplingSettings)
    edit: EditSettingsConfig = field(default_factory=EditSettingsConfig)
    eval: EvalSettingsConfig = field(default_factory=EvalSettingsConfig)
    elbo_check: ElboCheckSettings = field(default_factory=ElboCheckSettings)
    raw: Dict[str, Any] = field(default_factory=dict, repr=False)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        """Validate a merged configuration mapping.

        Raises:
            ConfigurationError: Missing seed, unknown keys or bad values
        """
        missing = [key for key in ("seed", "out") if data.get(key) is None]
        if missing:
            raise ConfigurationError(
                "Required settings are missing (seeds are never taken from the clock)",
                missing_keys=missing,
            )
        try:
            seed = int(data["seed"])
        except (TypeError, ValueError):
            raise ConfigurationError(f"seed must be an integer, got {data['seed']!r}") from None
        if seed < 0:
            raise ConfigurationError(f"seed must be non-negative, got {seed}")
        allowed = set(_SECTIONS) | {"seed", "out", "guidance"}
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ConfigurationError(f"Unknown top-level keys: {unknown}")
        sections = {name: _section(kind, name, data.get(name)) for name, kind in _SECTIONS.items()}
        guidance = data.get("guidance") or {}
        if not isinstance(guidance, Mapping):
            raise ConfigurationError("Section 'guidance' must be a mapping")
        return cls(
            seed=seed,
            out=Path(str(data["out"])),
            guidance=dict(guidance),
            raw=dict(data),
            **sections,
        )

    @property
    def hash(self) -> str:
        return config_hash(self.raw)
