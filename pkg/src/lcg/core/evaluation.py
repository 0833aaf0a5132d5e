"""Latent-space metrics: oracle accuracy, latent Fréchet distance, identity.

Also the disentanglement analyses: per-edit accuracy deltas and the
compositional-versus-sequential path comparison.
"""

import logging
from dataclasses import dataclass
from dataclasses import field
from typing import Any
from typing import Dict
from typing import List
from typing import Mapping
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np
from scipy import linalg

from .diffusion import Denoiser
from .diffusion import NoiseSchedule
from .exceptions import EvaluationError
from .guidance import Classifiers
from .guidance import GuidanceSpec
from .guidance import GuidanceTerm
from .guidance import ScaleSchedule
from .guidance import SourceTerm
from .guidance import guided_sample
from .guidance import linear_solution
from .guidance import manipulate
from .guidance import sequential_edit
from .types import IdentityReport
from .types import Polarity
from .types import Rng
from .types import SamplerKind
from .world import WorldSpec
from .world import oracle_conditional_moments
from .world import oracle_label
from .world import sample_dataset
from .world import sample_targets

logger = logging.getLogger(__name__)

_PSD_TOLERANCE = 1e-8


@dataclass
class EvalReport:
    """ACC per attribute, latent FID and identity distance of one run."""

    acc: Dict[str, float]
    latent_fid: Optional[float] = None
    identity: Optional[IdentityReport] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name, value in self.acc.items():
            if not 0.0 <= value <= 1.0:
                raise EvaluationError(f"ACC for '{name}' outside [0, 1]: {value}")
        if self.latent_fid is not None and self.latent_fid < 0:
            raise EvaluationError(f"Negative latent FID {self.latent_fid}")

    def rows(self) -> List[Tuple[str, str, float]]:
        """(metric, attribute, value) rows in a stable order."""
        out = [("acc", name, float(self.acc[name])) for name in sorted(self.acc)]
        if self.latent_fid is not None:
            out.append(("latent_fid", "", float(self.latent_fid)))
        if self.identity is not None:
            out.append(("identity_mean", "", float(self.identity["mean"])))
            for q in sorted(self.identity["quantiles"]):
                out.append((f"identity_{q}", "", float(self.identity["quantiles"][q])))
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {
            "acc": dict(sorted(self.acc.items())),
            "latent_fid": self.latent_fid,
            "identity": self.identity,
            "metadata": self.metadata,
        }


def acc(world: WorldSpec, samples: np.ndarray, targets: Mapping[str, int]) -> Dict[str, float]:
    """Fraction of samples whose oracle label matches each target.

    Raises:
        EvaluationError: No samples
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[0] == 0 or samples.size == 0:
        raise EvaluationError("ACC needs at least one sample")
    if not targets:
        return {}
    labels = oracle_label(world, samples)
    names = world.attribute_names
    return {
        name: float(np.mean(labels[:, names.index(name)] == int(target)))
        for name, target in targets.items()
    }


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    sym = 0.5 * (matrix + matrix.T)
    values, vectors = linalg.eigh(sym)
    scale = max(1.0, float(np.max(np.abs(values)))) if values.size else 1.0
    if values.size and values.min() < -_PSD_TOLERANCE * scale:
        raise EvaluationError(f"Covariance is not positive semi-definite (min eigenvalue {values.min():.3e})")
    return (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T


def frechet_distance(mu1: np.ndarray, cov1: np.ndarray, mu2: np.ndarray, cov2: np.ndarray) -> float:
    """‖μ1 - μ2‖² + Tr(Σ1 + Σ2 - 2 (Σ1 Σ2)^{1/2}).

    The trace of (Σ1 Σ2)^{1/2} is taken as that of the symmetric
    (√Σ1 Σ2 √Σ1)^{1/2}, both roots by clamped eigendecomposition.
    """
    mu1, mu2 = np.atleast_1d(mu1).astype(np.float64), np.atleast_1d(mu2).astype(np.float64)
    cov1, cov2 = np.atleast_2d(cov1).astype(np.float64), np.atleast_2d(cov2).astype(np.float64)
    if mu1.shape != mu2.shape or cov1.shape != cov2.shape:
        raise EvaluationError("Fréchet distance needs moments of equal dimension")
    root1 = _psd_sqrt(cov1)
    cross = _psd_sqrt(root1 @ cov2 @ root1)
    diff = mu1 - mu2
    value = float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * np.trace(cross))
    return max(value, 0.0)


def latent_fid(samples: np.ndarray, ref_mean: np.ndarray, ref_cov: np.ndarray) -> float:
    """Fréchet distance between the Gaussian fit of samples and reference moments.

    Raises:
        EvaluationError: Fewer than d + 1 samples
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] < samples.shape[1] + 1:
        raise EvaluationError(f"latent FID needs at least d + 1 samples, got shape {samples.shape}")
    mean = samples.mean(axis=0)
    cov = np.atleast_2d(np.cov(samples, rowvar=False))
    return frechet_distance(mean, cov, ref_mean, ref_cov)


def identity_distance(sources: np.ndarray, outputs: np.ndarray) -> IdentityReport:
    """Per-pair Euclidean distances with mean and quantiles.

    Raises:
        EvaluationError: Unaligned or empty inputs
    """
    sources = np.atleast_2d(np.asarray(sources, dtype=np.float64))
    outputs = np.atleast_2d(np.asarray(outputs, dtype=np.float64))
    if sources.shape != outputs.shape:
        raise EvaluationError(f"Source/output shapes differ: {sources.shape} vs {outputs.shape}")
    if sources.shape[0] == 0:
        raise EvaluationError("identity distance needs at least one pair")
    distances = np.linalg.norm(outputs - sources, axis=1)
    return {
        "mean": float(distances.mean()),
        "per_sample": distances.tolist(),
        "quantiles": {
            "q05": float(np.quantile(distances, 0.05)),
            "q50": float(np.quantile(distances, 0.5)),
            "q95": float(np.quantile(distances, 0.95)),
        },
    }


def reference_moments(world: WorldSpec, targets: Mapping[str, int]) -> Tuple[np.ndarray, np.ndarray]:
    return oracle_conditional_moments(world, targets)


def evaluate_samples(
    world: WorldSpec,
    samples: np.ndarray,
    targets: Mapping[str, int],
    sources: Optional[np.ndarray] = None,
    metadata: Optional[Dict[str, Any]] = None,
) -> EvalReport:
    """ACC, latent FID against the exact conditional moments and, for edits, identity."""
    mean, cov = reference_moments(world, targets)
    fid = latent_fid(samples, mean, cov) if len(samples) > world.dim else None
    identity = identity_distance(sources, samples) if sources is not None else None
    return EvalReport(
        acc=acc(world, samples, targets),
        latent_fid=fid,
        identity=identity,
        metadata=dict(metadata or {}),
    )


@dataclass
class EditSettings:
    """How the analyses edit latents."""

    alpha: float = 4.0
    gamma: float = 1.0
    t_start: int = 50
    sampler: SamplerKind = SamplerKind.DDIM
    linear: bool = False


def _single_edit_specs(attribute: str, settings: EditSettings) -> Dict[int, GuidanceSpec]:
    source = SourceTerm(latent=np.zeros(0), gamma=ScaleSchedule.constant(settings.gamma))
    return {
        target: GuidanceSpec(
            terms=(
                GuidanceTerm(
                    attribute=attribute,
                    polarity=Polarity.ASSERT if target else Polarity.NEGATE,
                    scale=ScaleSchedule.constant(settings.alpha),
                ),
            ),
            source=source,
        )
        for target in (0, 1)
    }


def _edit_batch(
    spec: GuidanceSpec,
    latents: np.ndarray,
    net: Optional[Denoiser],
    classifiers: Classifiers,
    s: Optional[NoiseSchedule],
    rng: Rng,
    settings: EditSettings,
) -> np.ndarray:
    if len(latents) == 0:
        return latents
    if settings.linear:
        source = SourceTerm(latent=latents, gamma=spec.source.gamma, variance=spec.source.variance)
        return linear_solution(spec.terms, source, classifiers)
    if s is None:
        raise EvaluationError("Diffusion edits need a noise schedule")
    return manipulate(spec, net, classifiers, s, latents, settings.t_start, rng, settings.sampler)


def edit_toward_targets(
    attribute: str,
    targets: np.ndarray,
    latents: np.ndarray,
    net: Optional[Denoiser],
    classifiers: Classifiers,
    s: Optional[NoiseSchedule],
    rng: Rng,
    settings: EditSettings,
) -> np.ndarray:
    """Edit each latent toward its own target label for one attribute."""
    specs = _single_edit_specs(attribute, settings)
    out = latents.copy()
    for target, spec in specs.items():
        mask = targets == target
        out[mask] = _edit_batch(spec, latents[mask], net, classifiers, s, rng, settings)
    return out


def _per_sample_acc(world: WorldSpec, latents: np.ndarray, targets: np.ndarray) -> np.ndarray:
    return np.mean(oracle_label(world, latents) == targets, axis=0)


@dataclass
class DisentanglementReport:
    """ACC deltas: rows are edits, columns attributes; the edited cell is NaN."""

    attributes: List[str]
    edits: List[str]
    deltas: np.ndarray
    targeted_acc: List[float]
    targeted_gain: List[float]


def disentanglement_report(
    world: WorldSpec,
    classifiers: Classifiers,
    edit_order: Sequence[str],
    n: int,
    rng: Rng,
    settings: EditSettings,
    net: Optional[Denoiser] = None,
    s: Optional[NoiseSchedule] = None,
) -> DisentanglementReport:
    """Sequentially edit world samples toward random targets, one attribute at a time.

    Each row records how the oracle ACC of every other attribute moved
    during that edit.

    Raises:
        EvaluationError: Fewer than two attributes in the world
    """
    names = world.attribute_names
    if len(names) < 2:
        raise EvaluationError("Disentanglement needs at least two attributes")
    latents = sample_dataset(world, n, rng).latents
    targets = sample_targets(world, n, rng)
    deltas = np.full((len(edit_order), len(names)), np.nan)
    targeted_acc, targeted_gain = [], []
    for row, attribute in enumerate(edit_order):
        col = names.index(attribute)
        before = _per_sample_acc(world, latents, targets)
        latents = edit_toward_targets(attribute, targets[:, col], latents, net, classifiers, s, rng, settings)
        after = _per_sample_acc(world, latents, targets)
        change = after - before
        deltas[row] = change
        deltas[row, col] = np.nan
        targeted_acc.append(float(after[col]))
        targeted_gain.append(float(change[col]))
        logger.info(f"Edit {row + 1} ({attribute}): targeted ACC {after[col]:.3f}")
    return DisentanglementReport(
        attributes=list(names),
        edits=[f"edit-{i + 1}:{a}" for i, a in enumerate(edit_order)],
        deltas=deltas,
        targeted_acc=targeted_acc,
        targeted_gain=targeted_gain,
    )


def random_condition_acc(
    world: WorldSpec,
    net: Denoiser,
    classifiers: Classifiers,
    s: NoiseSchedule,
    n: int,
    rng: Rng,
    scale: float = 4.0,
    sampler: SamplerKind = SamplerKind.DDPM,
) -> Dict[str, float]:
    """ACC of guided generation under uniformly sampled target conditions.

    Samples sharing a target condition are generated as one batch.
    """
    targets = sample_targets(world, n, rng)
    names = world.attribute_names
    hits = np.zeros(len(names))
    groups, inverse = np.unique(targets, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    for g, condition in enumerate(groups):
        count = int(np.sum(inverse == g))
        spec = GuidanceSpec(
            terms=tuple(
                GuidanceTerm(
                    attribute=name,
                    polarity=Polarity.ASSERT if label else Polarity.NEGATE,
                    scale=ScaleSchedule.constant(scale),
                )
                for name, label in zip(names, condition)
            )
        )
        samples = guided_sample(spec, net, classifiers, s, count, sampler, rng)
        hits += np.sum(oracle_label(world, samples) == condition, axis=0)
    return {name: float(h / n) for name, h in zip(names, hits)}


@dataclass
class PathComparison:
    """One-shot compositional edit versus a chain of single-attribute edits."""

    compositional: EvalReport
    sequential: EvalReport


def path_comparison(
    world: WorldSpec,
    net: Denoiser,
    classifiers: Classifiers,
    s: NoiseSchedule,
    sources: np.ndarray,
    targets: Mapping[str, int],
    rng: Rng,
    settings: EditSettings,
) -> PathComparison:
    """Edit the same sources toward the same targets directly and sequentially."""
    source = SourceTerm(latent=np.zeros(0), gamma=ScaleSchedule.constant(settings.gamma))

    def term(name: str, label: int) -> GuidanceTerm:
        return GuidanceTerm(
            attribute=name,
            polarity=Polarity.ASSERT if label else Polarity.NEGATE,
            scale=ScaleSchedule.constant(settings.alpha),
        )

    joint = GuidanceSpec(terms=tuple(term(n, v) for n, v in targets.items()), source=source)
    direct = manipulate(joint, net, classifiers, s, sources, settings.t_start, rng, settings.sampler)
    chain = [GuidanceSpec(terms=(term(n, v),), source=source) for n, v in targets.items()]
    stepwise = sequential_edit(chain, net, classifiers, s, sources, settings.t_start, rng, settings.sampler)[-1]
    return PathComparison(
        compositional=evaluate_samples(world, direct, targets, sources, {"path": "compositional"}),
        sequential=evaluate_samples(world, stepwise, targets, sources, {"path": "sequential"}),
    )
