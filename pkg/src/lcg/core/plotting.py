"""SVG figures: latent scatter by oracle label and classifier correlation heatmap."""

import logging
from pathlib import Path
from typing import Optional
from typing import Sequence
from typing import Tuple
from typing import Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .exceptions import DataError  # noqa: E402
from .world import WorldSpec  # noqa: E402
from .world import oracle_label  # noqa: E402

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# Fixed salt and no date keep repeated renders byte-identical.
plt.rcParams["svg.hashsalt"] = "lcg"
_SVG_METADATA = {"Date": None}


def _label_codes(world: WorldSpec, latents: np.ndarray) -> np.ndarray:
    labels = oracle_label(world, latents)
    return labels @ (2 ** np.arange(labels.shape[1]))


def scatter_svg(
    path: PathLike,
    world: WorldSpec,
    latents: np.ndarray,
    axes: Tuple[int, int] = (0, 1),
    title: Optional[str] = None,
) -> int:
    """Scatter two latent coordinates, one marker per sample, colored by label pattern.

    Returns:
        Number of markers drawn

    Raises:
        DataError: No samples, or the latent space has fewer than two axes
    """
    latents = np.atleast_2d(np.asarray(latents, dtype=np.float64))
    if latents.shape[0] == 0 or latents.size == 0:
        raise DataError("Nothing to plot: no samples")
    if world.dim < 2:
        raise DataError("Scatter plots need at least two latent dimensions")
    i, j = axes
    codes = _label_codes(world, latents)
    fig, ax = plt.subplots(figsize=(5, 5), facecolor="w")
    try:
        points = ax.scatter(latents[:, i], latents[:, j], c=codes, s=6, cmap="viridis",
                            vmin=0, vmax=max(1, 2 ** len(world.attributes) - 1))
        ax.set_xlabel(f"z_{i + 1}")
        ax.set_ylabel(f"z_{j + 1}")
        ax.set_aspect("equal", adjustable="datalim")
        ax.set_title(title or f"{world.name}: {latents.shape[0]} samples")
        fig.savefig(path, format="svg", metadata=_SVG_METADATA)
        drawn = int(points.get_offsets().shape[0])
    finally:
        plt.close(fig)
    logger.info(f"Wrote scatter plot of {drawn} samples to {path}")
    return drawn


def heatmap_svg(path: PathLike, labels: Sequence[str], matrix: np.ndarray, title: str = "Classifier correlation") -> None:
    """Annotated heatmap of a square matrix on [-1, 1]."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (len(labels), len(labels)):
        raise DataError(f"Heatmap needs a {len(labels)}x{len(labels)} matrix, got {matrix.shape}")
    size = 1.2 + 0.8 * len(labels)
    fig, ax = plt.subplots(figsize=(size, size), facecolor="w")
    try:
        image = ax.imshow(matrix, cmap="RdBu_r", vmin=-1.0, vmax=1.0)
        ax.set_xticks(range(len(labels)), labels=list(labels))
        ax.set_yticks(range(len(labels)), labels=list(labels))
        for r in range(len(labels)):
            for c in range(len(labels)):
                ax.text(c, r, f"{matrix[r, c]:.2f}", ha="center", va="center", fontsize=8)
        fig.colorbar(image, ax=ax, fraction=0.046)
        ax.set_title(title)
        fig.savefig(path, format="svg", metadata=_SVG_METADATA)
    finally:
        plt.close(fig)
    logger.info(f"Wrote heatmap to {path}")
