"""Compositional classifier guidance.

Scores compose additively: the unconditional score, α-weighted
gradients of asserted attributes, β-weighted negated gradients of
negated attributes, and a Gaussian pull γ (ẑ - z) / σ_src² toward a
source latent. Sampling, manipulation and sequential editing run these
scores through the diffusion samplers; the linear closed form covers the
non-informative-prior, linear-classifier case.
"""

import dataclasses
import logging
from dataclasses import dataclass
from typing import Any
from typing import Dict
from typing import List
from typing import Mapping
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np

from .classifiers import LatentClassifier
from .classifiers import grad_log_prob
from .classifiers import weight_direction
from .diffusion import Denoiser
from .diffusion import NoiseSchedule
from .diffusion import forward_sample
from .diffusion import reverse_chain
from .diffusion import score_from_noise
from .exceptions import ClassifierKindError
from .exceptions import ClassifierNotFoundError
from .exceptions import DimensionMismatchError
from .exceptions import GuidanceSpecError
from .exceptions import NumericError
from .types import ClassifierKind
from .types import Polarity
from .types import Rng
from .types import SamplerKind
from .types import Vec

logger = logging.getLogger(__name__)

Classifiers = Mapping[str, LatentClassifier]


@dataclass(frozen=True)
class ScaleSchedule:
    """Per-timestep scale: `start` at t = T, `end` at t = 0, linear between.

    A schedule without `end` is constant.
    """

    start: float
    end: Optional[float] = None

    def __post_init__(self) -> None:
        for value in (self.start, self.end):
            if value is not None and (not np.isfinite(value) or value < 0):
                raise GuidanceSpecError(f"Scales must be finite and non-negative, got {value}")

    @classmethod
    def constant(cls, value: float) -> "ScaleSchedule":
        return cls(start=float(value))

    @property
    def final(self) -> float:
        """Scale at t = 0."""
        return self.start if self.end is None else self.end

    def at(self, t: int, T: int) -> float:
        if self.end is None:
            return self.start
        return self.end + (self.start - self.end) * t / T

    def to_value(self) -> Any:
        return self.start if self.end is None else {"start": self.start, "end": self.end}

    @classmethod
    def from_value(cls, value: Any) -> "ScaleSchedule":
        if isinstance(value, Mapping):
            return cls(start=float(value["start"]), end=float(value["end"]))
        return cls.constant(float(value))


@dataclass(frozen=True)
class GuidanceTerm:
    """One attribute condition: assert (α_t) or negate (β_t)."""

    attribute: str
    polarity: Polarity = Polarity.ASSERT
    scale: ScaleSchedule = ScaleSchedule(1.0)

    @property
    def sign(self) -> float:
        return 1.0 if Polarity(self.polarity) is Polarity.ASSERT else -1.0

    @property
    def target(self) -> int:
        """Label this term asks for."""
        return 1 if self.sign > 0 else 0


@dataclass(frozen=True)
class SourceTerm:
    """Gaussian source likelihood p(ẑ | z) with strength γ_t."""

    latent: np.ndarray
    gamma: ScaleSchedule = ScaleSchedule(1.0)
    variance: float = 1.0

    def __post_init__(self) -> None:
        if self.variance <= 0:
            raise GuidanceSpecError(f"Source variance must be positive, got {self.variance}")


@dataclass(frozen=True)
class GuidanceSpec:
    """Composition request: attribute terms, optional source, prior flag."""

    terms: Tuple[GuidanceTerm, ...] = ()
    source: Optional[SourceTerm] = None
    use_unconditional_score: bool = True

    def __post_init__(self) -> None:
        names = [term.attribute for term in self.terms]
        if len(set(names)) != len(names):
            raise GuidanceSpecError(f"Attribute names in a spec must be distinct: {names}")
        if not self.use_unconditional_score and not self.terms and self.source is None:
            raise GuidanceSpecError("A spec without the unconditional score needs terms or a source")

    @property
    def targets(self) -> Dict[str, int]:
        return {term.attribute: term.target for term in self.terms}

    @property
    def is_unconditional(self) -> bool:
        """True when every attribute scale is identically zero."""
        return all(t.scale.start == 0 and t.scale.final == 0 for t in self.terms)

    def with_source_latent(self, latent: Vec) -> "GuidanceSpec":
        if self.source is None:
            raise GuidanceSpecError("Spec has no source term to re-anchor")
        source = dataclasses.replace(self.source, latent=np.asarray(latent, dtype=np.float64))
        return dataclasses.replace(self, source=source)


def _require_classifier(classifiers: Classifiers, attribute: str) -> LatentClassifier:
    if attribute not in classifiers:
        raise ClassifierNotFoundError(attribute, sorted(classifiers))
    return classifiers[attribute]


def _attribute_score(spec: GuidanceSpec, classifiers: Classifiers, z_t: np.ndarray, t: int, T: int) -> np.ndarray:
    score = np.zeros_like(z_t)
    for term in spec.terms:
        classifier = _require_classifier(classifiers, term.attribute)
        scale = term.scale.at(t, T)
        if scale:
            score = score + term.sign * scale * grad_log_prob(classifier, z_t, 1)
    return score


def guidance_score(
    spec: GuidanceSpec,
    classifiers: Classifiers,
    s: NoiseSchedule,
    z_t: Vec,
    t: int,
    include_source: bool = True,
) -> Vec:
    """Composed score without the unconditional term."""
    z_t = np.asarray(z_t, dtype=np.float64)
    score = _attribute_score(spec, classifiers, z_t, t, s.T)
    if include_source and spec.source is not None:
        gamma = spec.source.gamma.at(t, s.T)
        score = score + gamma * (spec.source.latent - z_t) / spec.source.variance
    return score


def compose_score(
    spec: GuidanceSpec,
    net: Optional[Denoiser],
    classifiers: Classifiers,
    s: NoiseSchedule,
    z_t: Vec,
    t: int,
) -> Vec:
    """Full composed score at (z_t, t).

    [uncond score] + Σ α ∇log p(y=1) - Σ β ∇log p(y=1) + γ (ẑ - z_t) / σ_src²

    Raises:
        ClassifierNotFoundError: A term names an attribute without classifier
    """
    s.check_timestep(t)
    z_t = np.asarray(z_t, dtype=np.float64)
    score = guidance_score(spec, classifiers, s, z_t, t)
    if spec.use_unconditional_score:
        if net is None:
            raise GuidanceSpecError("The unconditional score needs a denoiser")
        score = score_from_noise(s, net.predict(z_t, t), t) + score
    return score


def _source_pull(spec: GuidanceSpec, s: NoiseSchedule):
    """Implicit source step z <- (z + κ ẑ) / (1 + κ), κ = σ̃_t² γ_t / σ_src²."""
    source = spec.source
    if source is None:
        return None

    def pull(z: np.ndarray, t: int) -> np.ndarray:
        kappa = s.posterior_variances[t] * source.gamma.at(t, s.T) / source.variance
        if kappa == 0.0:
            return z
        return (z + kappa * source.latent) / (1.0 + kappa)

    return pull


def _chain_parts(spec: GuidanceSpec, net: Optional[Denoiser], classifiers: Classifiers, s: NoiseSchedule):
    for term in spec.terms:
        _require_classifier(classifiers, term.attribute)
    prior = net if spec.use_unconditional_score else None
    if spec.use_unconditional_score and net is None:
        raise GuidanceSpecError("The unconditional score needs a denoiser")

    def guidance_fn(z: np.ndarray, t: int) -> np.ndarray:
        return guidance_score(spec, classifiers, s, z, t, include_source=False)

    return prior, (guidance_fn if spec.terms else None), _source_pull(spec, s)


def guided_sample(
    spec: GuidanceSpec,
    net: Optional[Denoiser],
    classifiers: Classifiers,
    s: NoiseSchedule,
    n: int,
    sampler: SamplerKind,
    rng: Rng,
    eta: float = 0.0,
    dim: Optional[int] = None,
) -> np.ndarray:
    """Generate n latents under the composed score.

    The sampler's own noise prediction carries the unconditional score,
    so only the guidance part enters as the extra score.
    """
    prior, guidance_fn, pull = _chain_parts(spec, net, classifiers, s)
    d = dim if dim is not None else (net.latent_dim if net is not None else None)
    if d is None:
        raise GuidanceSpecError("guided_sample needs a denoiser or an explicit dimension")
    if n == 0:
        return np.zeros((0, d))
    z_T = rng.standard_normal((n, d))
    logger.debug(f"Guided sampling of {n} latents with targets {spec.targets}")
    return reverse_chain(s, prior, z_T, s.T, sampler, rng, guidance_fn, eta, post_step=pull)


def manipulate(
    spec: GuidanceSpec,
    net: Optional[Denoiser],
    classifiers: Classifiers,
    s: NoiseSchedule,
    source_latent: Vec,
    t_start: int,
    rng: Rng,
    sampler: SamplerKind = SamplerKind.DDIM,
    eta: float = 0.0,
) -> np.ndarray:
    """Edit ẑ: corrupt it to t_start, then run guided reverse steps to t = 0.

    Args:
        spec: Spec carrying a source term (its γ schedule and variance)
        source_latent: ẑ, one latent or a batch edited independently

    Raises:
        GuidanceSpecError: The spec has no source term
    """
    if spec.source is None:
        raise GuidanceSpecError("manipulate needs a spec with a source term")
    s.check_timestep(t_start)
    hat = np.asarray(source_latent, dtype=np.float64)
    anchored = spec.with_source_latent(hat)
    prior, guidance_fn, pull = _chain_parts(anchored, net, classifiers, s)
    z_start, _ = forward_sample(s, hat, t_start, rng)
    return reverse_chain(s, prior, z_start, t_start, sampler, rng, guidance_fn, eta, post_step=pull)


def sequential_edit(
    edits: Sequence[GuidanceSpec],
    net: Optional[Denoiser],
    classifiers: Classifiers,
    s: NoiseSchedule,
    source_latent: Vec,
    t_start: int,
    rng: Rng,
    sampler: SamplerKind = SamplerKind.DDIM,
    eta: float = 0.0,
) -> List[np.ndarray]:
    """Apply edits one after another, each anchored on the previous output."""
    if not edits:
        raise GuidanceSpecError("sequential_edit needs at least one edit")
    current = np.asarray(source_latent, dtype=np.float64)
    outputs = []
    for i, edit in enumerate(edits):
        current = manipulate(edit, net, classifiers, s, current, t_start, rng, sampler, eta)
        logger.debug(f"Sequential edit {i + 1}/{len(edits)} applied ({edit.targets})")
        outputs.append(current)
    return outputs


def _linear_directions(terms: Sequence[GuidanceTerm], classifiers: Classifiers) -> List[Tuple[float, np.ndarray]]:
    out = []
    for term in terms:
        classifier = _require_classifier(classifiers, term.attribute)
        if classifier.kind is not ClassifierKind.LINEAR:
            raise ClassifierKindError(term.attribute, "linear arithmetic")
        out.append((term.sign * term.scale.final, weight_direction(classifier)))
    return out


def linear_solution(terms: Sequence[GuidanceTerm], source: SourceTerm, classifiers: Classifiers) -> Vec:
    """Closed-form edit ẑ + (Σ α_0 w - Σ β_0 w) / γ_0.

    Raises:
        ClassifierKindError: A referenced classifier is not linear
        GuidanceSpecError: γ_0 is zero
    """
    gamma = source.gamma.final
    if gamma == 0:
        raise GuidanceSpecError("linear_solution needs a positive final source scale γ_0")
    hat = np.asarray(source.latent, dtype=np.float64)
    shift = np.zeros(hat.shape[-1])
    for coef, w in _linear_directions(terms, classifiers):
        if w.size != shift.size:
            raise DimensionMismatchError("classifier weight", shift.size, w.size)
        shift = shift + coef * w
    return hat + shift * (source.variance / gamma)


def fixed_point_trace(
    terms: Sequence[GuidanceTerm],
    source: SourceTerm,
    classifiers: Classifiers,
    z_init: Vec,
    step: float,
    iters: int,
    bound: float = 1e8,
    saturating: bool = False,
) -> Tuple[Vec, np.ndarray]:
    """Gradient ascent on the composed objective under a flat prior.

    z <- z + step (Σ ± scale w - γ_0 (z - ẑ) / σ_src²). With
    saturating=True the true sigmoid gradients replace the constant w.

    Returns:
        Final iterate and the norm of every update (the residual history)

    Raises:
        GuidanceSpecError: Unstable step (step γ_0 >= 2)
        NumericError: The iterate left the bound
    """
    gamma = source.gamma.final / source.variance
    if step <= 0 or step * gamma >= 2.0:
        raise GuidanceSpecError(f"Unstable step {step} for γ_0={gamma} (need 0 < step·γ_0 < 2)")
    hat = np.asarray(source.latent, dtype=np.float64)
    directions = _linear_directions(terms, classifiers)
    drive = np.zeros_like(hat)
    for coef, w in directions:
        drive = drive + coef * w

    z = np.array(z_init, dtype=np.float64)
    residuals = np.empty(iters)
    for i in range(iters):
        if saturating:
            drive = np.zeros_like(hat)
            for term in terms:
                drive = drive + term.sign * term.scale.final * grad_log_prob(
                    classifiers[term.attribute], z, 1
                )
        update = step * (drive - gamma * (z - hat))
        z = z + update
        residuals[i] = float(np.linalg.norm(update))
        if not np.all(np.isfinite(z)) or np.linalg.norm(z) > bound:
            raise NumericError("fixed_point_flow", f"iterate diverged after {i + 1} steps")
    return z, residuals


def fixed_point_flow(
    terms: Sequence[GuidanceTerm],
    source: SourceTerm,
    classifiers: Classifiers,
    z_init: Vec,
    step: float,
    iters: int,
    bound: float = 1e8,
) -> Vec:
    """Final iterate of the linearized flow; its fixed point is linear_solution."""
    return fixed_point_trace(terms, source, classifiers, z_init, step, iters, bound)[0]


# ---------------------------------------------------------------------------
# Spec files
# ---------------------------------------------------------------------------


def spec_from_mapping(data: Mapping[str, Any], source_latent: Optional[Vec] = None) -> GuidanceSpec:
    """Build a spec from its JSON/YAML form.

    Terms are {"attribute", "polarity", "scale"} where scale is a number or
    {"start", "end"}; the shorthand "-B" negates attribute B. A "source"
    block holds "gamma" and optionally an inline "latent". A top-level
    "scale" sets the scale of shorthand terms (default 1).
    """
    default_scale = ScaleSchedule.from_value(data.get("scale", 1.0))
    terms = []
    for raw in data.get("terms", []):
        if isinstance(raw, str):
            polarity = Polarity.NEGATE if raw.startswith("-") else Polarity.ASSERT
            terms.append(GuidanceTerm(attribute=raw.lstrip("+-"), polarity=polarity, scale=default_scale))
            continue
        try:
            polarity = Polarity(raw.get("polarity", "assert"))
        except ValueError:
            raise GuidanceSpecError(f"Unknown polarity '{raw.get('polarity')}'") from None
        terms.append(
            GuidanceTerm(
                attribute=str(raw["attribute"]),
                polarity=polarity,
                scale=ScaleSchedule.from_value(raw["scale"]) if "scale" in raw else default_scale,
            )
        )
    source = None
    raw_source = data.get("source")
    if raw_source is not None:
        latent = raw_source.get("latent", source_latent)
        source = SourceTerm(
            latent=np.asarray(latent if latent is not None else [], dtype=np.float64),
            gamma=ScaleSchedule.from_value(raw_source.get("gamma", 1.0)),
            variance=float(raw_source.get("variance", 1.0)),
        )
    return GuidanceSpec(
        terms=tuple(terms),
        source=source,
        use_unconditional_score=bool(data.get("use_unconditional_score", True)),
    )


def spec_to_mapping(spec: GuidanceSpec) -> Dict[str, Any]:
    out: Dict[str, Any] = {
        "terms": [
            {"attribute": t.attribute, "polarity": Polarity(t.polarity).value, "scale": t.scale.to_value()}
            for t in spec.terms
        ],
        "use_unconditional_score": spec.use_unconditional_score,
    }
    if spec.source is not None:
        out["source"] = {
            "gamma": spec.source.gamma.to_value(),
            "variance": spec.source.variance,
        }
    return out
