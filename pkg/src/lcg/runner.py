"""Run lifecycle: output directory, per-stage generators and the manifest."""

import logging
import platform
import time
from contextlib import contextmanager
from dataclasses import dataclass
from dataclasses import field
from importlib import metadata
from pathlib import Path
from typing import Dict
from typing import Iterator
from typing import List

import numpy as np

from .config import ExperimentConfig
from .core.artifacts import RunManifest
from .core.artifacts import load_manifest
from .core.artifacts import save_manifest
from .core.exceptions import DataError
from .core.numkernel import make_rng
from .core.types import Rng

logger = logging.getLogger(__name__)

STAGES = ("world", "train", "sample", "eval")


def _versions() -> Dict[str, str]:
    versions = {"python": platform.python_version(), "numpy": np.__version__}
    for package in ("lcg", "scipy", "matplotlib", "pyyaml"):
        try:
            versions[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            versions[package] = "unknown"
    return versions


@dataclass
class RunContext:
    """State shared by the stages of one command."""

    config: ExperimentConfig
    command: str
    manifest: RunManifest
    written: List[Path] = field(default_factory=list)

    @property
    def out(self) -> Path:
        return self.config.out

    def rng(self, stage: str, *qualifiers: str) -> Rng:
        """Generator for a named stage substream of the root seed."""
        stream = ":".join((stage,) + qualifiers)
        self.manifest.stage_seeds[stream] = {"seed": self.config.seed, "stream": stream}
        return make_rng(self.config.seed, stream)

    def path(self, name: str) -> Path:
        return self.out / name

    def require(self, name: str, produced_by: str) -> Path:
        """Path of an existing artifact.

        Raises:
            DataError: The artifact is missing
        """
        target = self.path(name)
        if not target.exists():
            raise DataError(f"{target} not found; run `lcg {produced_by}` first")
        return target

    def record(self, *paths: Path) -> None:
        for path in paths:
            self.manifest.record(path, self.command, self.out)
            self.written.append(Path(path))
            logger.info(f"Wrote {path}")


@contextmanager
def run_context(config: ExperimentConfig, command: str) -> Iterator[RunContext]:
    """Open a run in config.out and save the merged manifest on success.

    Yields:
        The run context
    """
    try:
        config.out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"Cannot create output directory {config.out}: {e}") from e
    manifest = load_manifest(config.out)
    if manifest.config_hash and manifest.config_hash != config.hash:
        logger.warning(f"{config.out} holds artifacts from a different configuration")
    manifest.config_hash = config.hash
    manifest.versions = _versions()
    context = RunContext(config=config, command=command, manifest=manifest)
    logger.info(f"Starting '{command}' in {config.out} (seed {config.seed})")
    started = time.perf_counter()
    yield context
    manifest.wall_clock[command] = round(time.perf_counter() - started, 3)
    save_manifest(config.out, manifest)
    logger.info(f"Finished '{command}': {len(context.written)} artifacts")
