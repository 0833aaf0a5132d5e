"""Shared type definitions for the latent guidance engine."""

from enum import Enum
from typing import Dict
from typing import List
from typing import Optional

import numpy as np
from typing_extensions import TypedDict

# Latent vectors travel as float64 arrays, either (d,) or a batch (n, d).
Vec = np.ndarray
Rng = np.random.Generator


class Activation(str, Enum):
    """Hidden-layer activation enum."""

    IDENTITY = "identity"
    TANH = "tanh"
    RELU = "relu"


class ClassifierKind(str, Enum):
    """Latent classifier kind enum."""

    LINEAR = "linear"
    MLP = "mlp"


class Polarity(str, Enum):
    """Guidance term polarity enum."""

    ASSERT = "assert"
    NEGATE = "negate"


class SamplerKind(str, Enum):
    """Reverse sampler enum."""

    DDPM = "ddpm"
    DDIM = "ddim"


class WorldPreset(str, Enum):
    """Synthetic world preset enum."""

    QUADRANTS_2D = "quadrants2d"
    AXES_8D = "axes8d"
    CORRELATED_8D = "correlated8d"


class TrainTarget(str, Enum):
    """Training command target enum."""

    DIFFUSION = "diffusion"
    CLASSIFIER = "classifier"
    CLASSIFIERS = "classifiers"


class ClassifierReport(TypedDict):
    """Classifier training summary."""

    attribute: str
    kind: str
    train_accuracy: float
    validation_accuracy: float
    epochs: int
    final_loss: float


class IdentityReport(TypedDict):
    """Source-to-output distance summary."""

    mean: float
    per_sample: List[float]
    quantiles: Dict[str, float]


class ManifestEntry(TypedDict):
    """One artifact written by a command."""

    path: str
    command: str
    sha256: str


class ExperimentInfo(TypedDict):
    """Named experiment preset listing."""

    index: str
    name: str
    description: str
    world: Optional[str]
