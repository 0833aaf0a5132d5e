"""Synthetic attributed latent worlds.

A world is an isotropic Gaussian mixture together with half-space
attributes (label 1 iff u.z + c > 0). It stands in for the latent space
of a pretrained generator and supplies exact oracles: the labeler and
the moments of the mixture restricted to an attribute condition.
"""

import logging
from dataclasses import dataclass
from typing import Dict
from typing import List
from typing import Mapping
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np
from scipy import stats

from .exceptions import ConditionError
from .exceptions import DataError
from .exceptions import DimensionMismatchError
from .exceptions import LcgError
from .types import Rng
from .types import Vec
from .types import WorldPreset

logger = logging.getLogger(__name__)

MIN_LABEL_PROBABILITY = 0.05
_ORTHOGONALITY_TOL = 1e-12
# Outer quadrature for two-dimensional constraint groups.
_OUTER_POINTS = 8001
_OUTER_RADIUS = 9.0


@dataclass(frozen=True)
class MixtureComponent:
    """Isotropic Gaussian mixture component."""

    mean: Tuple[float, ...]
    stddev: float
    weight: float = 1.0


@dataclass(frozen=True)
class Attribute:
    """Half-space attribute: label 1 iff normal . z + offset > 0."""

    name: str
    normal: Tuple[float, ...]
    offset: float = 0.0


@dataclass(frozen=True)
class WorldSpec:
    """Mixture plus labeling half-spaces."""

    dim: int
    components: Tuple[MixtureComponent, ...]
    attributes: Tuple[Attribute, ...]
    name: str = "custom"

    def __post_init__(self) -> None:
        if not self.components:
            raise LcgError("A world needs at least one mixture component")
        for comp in self.components:
            if len(comp.mean) != self.dim:
                raise DimensionMismatchError("component mean", self.dim, len(comp.mean))
            if comp.stddev <= 0 or comp.weight <= 0:
                raise LcgError("Component stddev and weight must be positive")
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise LcgError(f"Attribute names must be distinct: {names}")
        for attr in self.attributes:
            if len(attr.normal) != self.dim:
                raise DimensionMismatchError(f"normal of '{attr.name}'", self.dim, len(attr.normal))
            if not np.any(np.asarray(attr.normal)):
                raise LcgError(f"Attribute '{attr.name}' has a zero normal")
        for attr in self.attributes:
            p = attribute_probability(self, attr.name)
            if min(p, 1.0 - p) < MIN_LABEL_PROBABILITY:
                raise LcgError(
                    f"Attribute '{attr.name}' is nearly constant (P(label=1)={p:.4f})"
                )

    @property
    def attribute_names(self) -> List[str]:
        return [a.name for a in self.attributes]

    @property
    def normals(self) -> np.ndarray:
        """(k, d) matrix of attribute normals."""
        return np.array([a.normal for a in self.attributes], dtype=np.float64).reshape(
            len(self.attributes), self.dim
        )

    @property
    def offsets(self) -> np.ndarray:
        return np.array([a.offset for a in self.attributes], dtype=np.float64)

    @property
    def weights(self) -> np.ndarray:
        w = np.array([c.weight for c in self.components], dtype=np.float64)
        return w / w.sum()

    def attribute(self, name: str) -> Attribute:
        for attr in self.attributes:
            if attr.name == name:
                return attr
        raise LcgError(f"Unknown attribute '{name}'. Available attributes: {self.attribute_names}")

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "dim": self.dim,
            "components": [
                {"mean": list(c.mean), "stddev": c.stddev, "weight": c.weight}
                for c in self.components
            ],
            "attributes": [
                {"name": a.name, "normal": list(a.normal), "offset": a.offset}
                for a in self.attributes
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "WorldSpec":
        try:
            return cls(
                dim=int(data["dim"]),
                components=tuple(
                    MixtureComponent(
                        mean=tuple(float(v) for v in c["mean"]),
                        stddev=float(c["stddev"]),
                        weight=float(c.get("weight", 1.0)),
                    )
                    for c in data["components"]
                ),
                attributes=tuple(
                    Attribute(
                        name=str(a["name"]),
                        normal=tuple(float(v) for v in a["normal"]),
                        offset=float(a.get("offset", 0.0)),
                    )
                    for a in data["attributes"]
                ),
                name=str(data.get("name", "custom")),
            )
        except (KeyError, TypeError) as e:
            raise LcgError(f"Malformed world description: {e}") from e


@dataclass
class AttributedDataset:
    """Latent points with exact half-space labels."""

    latents: np.ndarray
    labels: np.ndarray
    world: WorldSpec
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        self.latents = np.asarray(self.latents, dtype=np.float64).reshape(-1, self.world.dim)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(
            -1, len(self.world.attributes)
        )
        if self.latents.shape[0] != self.labels.shape[0]:
            raise DataError(
                f"{self.latents.shape[0]} latents but {self.labels.shape[0]} label rows"
            )

    def __len__(self) -> int:
        return int(self.latents.shape[0])

    @property
    def dim(self) -> int:
        return self.world.dim

    def column(self, attribute: str) -> np.ndarray:
        """Labels of one attribute."""
        names = self.world.attribute_names
        if attribute not in names:
            raise DataError(f"Dataset has no attribute '{attribute}'. Available: {names}")
        return self.labels[:, names.index(attribute)]


def _preset_axes(dim: int, axes: int, normals: Sequence[Sequence[float]], name: str) -> WorldSpec:
    components = []
    for corner in range(2**axes):
        mean = [0.0] * dim
        for axis in range(axes):
            mean[axis] = 2.0 if (corner >> axis) & 1 else -2.0
        components.append(MixtureComponent(mean=tuple(mean), stddev=0.5))
    labels = ["A", "B", "C", "D"][: len(normals)]
    attributes = tuple(
        Attribute(name=label, normal=tuple(float(v) for v in normal))
        for label, normal in zip(labels, normals)
    )
    return WorldSpec(dim=dim, components=tuple(components), attributes=attributes, name=name)


def standard_world(preset: str) -> WorldSpec:
    """Build a preset world.

    Args:
        preset: quadrants2d, axes8d or correlated8d

    Returns:
        The preset WorldSpec
    """
    try:
        kind = WorldPreset(preset)
    except ValueError:
        available = ", ".join(p.value for p in WorldPreset)
        raise LcgError(f"Unknown world preset '{preset}'. Available presets: {available}") from None

    if kind is WorldPreset.QUADRANTS_2D:
        return _preset_axes(2, 2, [(1.0, 0.0), (0.0, 1.0)], kind.value)
    eye = np.eye(8)
    if kind is WorldPreset.AXES_8D:
        return _preset_axes(8, 3, [eye[0], eye[1], eye[2]], kind.value)
    # B leans toward A: cosine 0.6 between their normals.
    tilted = 0.6 * eye[0] + 0.8 * eye[1]
    return _preset_axes(8, 3, [eye[0], tilted, eye[2]], kind.value)


def oracle_label(w: WorldSpec, z: Vec) -> np.ndarray:
    """Exact labels; points on a boundary get label 0."""
    arr = np.asarray(z, dtype=np.float64)
    if arr.shape[-1] != w.dim:
        raise DimensionMismatchError("oracle input", w.dim, int(arr.shape[-1]))
    return (arr @ w.normals.T + w.offsets > 0.0).astype(np.int64)


def sample_dataset(w: WorldSpec, n: int, rng: Rng, seed: Optional[int] = None) -> AttributedDataset:
    """Draw n i.i.d. mixture points and label them exactly."""
    if n < 0:
        raise DataError(f"Dataset size must be non-negative, got {n}")
    which = rng.choice(len(w.components), size=n, p=w.weights)
    means = np.array([c.mean for c in w.components], dtype=np.float64)
    stddevs = np.array([c.stddev for c in w.components], dtype=np.float64)
    noise = rng.standard_normal((n, w.dim))
    latents = means[which] + stddevs[which, None] * noise
    logger.debug(f"Sampled {n} points from world '{w.name}'")
    return AttributedDataset(latents=latents, labels=oracle_label(w, latents), world=w, seed=seed)


def attribute_probability(w: WorldSpec, name: str) -> float:
    """Exact mixture probability that the attribute is 1."""
    attr = next(a for a in w.attributes if a.name == name)
    u = np.asarray(attr.normal, dtype=np.float64)
    norm = float(np.linalg.norm(u))
    total = 0.0
    for comp, weight in zip(w.components, w.weights):
        margin = (float(u @ np.asarray(comp.mean)) + attr.offset) / (comp.stddev * norm)
        total += weight * float(stats.norm.cdf(margin))
    return total


def sample_targets(w: WorldSpec, n: int, rng: Rng) -> np.ndarray:
    """Uniform random target labels, shape (n, k)."""
    return rng.integers(0, 2, size=(n, len(w.attributes)))


def _interval_moments(lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Zeroth, first and second moments of N(0, 1) restricted to [lo, hi]."""
    phi_lo, phi_hi = stats.norm.pdf(lo), stats.norm.pdf(hi)
    m0 = np.clip(stats.norm.cdf(hi) - stats.norm.cdf(lo), 0.0, None)
    m1 = phi_lo - phi_hi
    # Infinite bounds carry zero density; zero them before the product
    lo_term = np.where(np.isfinite(lo), lo, 0.0) * phi_lo
    hi_term = np.where(np.isfinite(hi), hi, 0.0) * phi_hi
    m2 = m0 + lo_term - hi_term
    empty = hi <= lo
    return np.where(empty, 0.0, m0), np.where(empty, 0.0, m1), np.where(empty, 0.0, m2)


def _bounds(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Interval of u satisfying a_j u + b_j > 0 for all rows j.

    a has shape (m,), b shape (m, p) for p outer points.
    """
    lo = np.full(b.shape[1], -np.inf)
    hi = np.full(b.shape[1], np.inf)
    for aj, bj in zip(a, b):
        if aj > 0:
            lo = np.maximum(lo, -bj / aj)
        elif aj < 0:
            hi = np.minimum(hi, -bj / aj)
        else:
            hi = np.where(bj > 0, hi, -np.inf)
    return lo, hi


def _polyhedron_moments(A: np.ndarray, b: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """Mass, mean and second moment of N(0, I_r) on {u : A u + b > 0}.

    Exact for r = 1; for r = 2 the inner coordinate is integrated in
    closed form and the outer one by midpoint quadrature.
    """
    r = A.shape[1]
    if r == 1:
        lo, hi = _bounds(A[:, 0], b[:, None])
        m0, m1, m2 = _interval_moments(lo, hi)
        mass = float(m0[0])
        if mass <= 0:
            return 0.0, np.zeros(1), np.zeros((1, 1))
        return mass, np.array([m1[0] / mass]), np.array([[m2[0] / mass]])
    if r == 2:
        h = 2.0 * _OUTER_RADIUS / _OUTER_POINTS
        u1 = -_OUTER_RADIUS + h * (np.arange(_OUTER_POINTS) + 0.5)
        density = stats.norm.pdf(u1) * h
        lo, hi = _bounds(A[:, 1], b[:, None] + A[:, :1] * u1[None, :])
        m0, m1, m2 = _interval_moments(lo, hi)
        mass = float(np.sum(density * m0))
        if mass <= 0:
            return 0.0, np.zeros(2), np.zeros((2, 2))
        mean = np.array([np.sum(density * u1 * m0), np.sum(density * m1)]) / mass
        second = np.array(
            [
                [np.sum(density * u1 * u1 * m0), np.sum(density * u1 * m1)],
                [np.sum(density * u1 * m1), np.sum(density * m2)],
            ]
        ) / mass
        return mass, mean, second
    raise ConditionError(
        f"Conditions spanning {r} non-orthogonal directions are not supported (max 2)"
    )


def _constraint_groups(normals: np.ndarray) -> List[List[int]]:
    """Partition constraints into groups with mutually orthogonal spans."""
    gram = normals @ normals.T
    scale = np.outer(np.linalg.norm(normals, axis=1), np.linalg.norm(normals, axis=1))
    linked = np.abs(gram) > _ORTHOGONALITY_TOL * scale
    groups: List[List[int]] = []
    seen: set = set()
    for start in range(len(normals)):
        if start in seen:
            continue
        stack, group = [start], []
        seen.add(start)
        while stack:
            i = stack.pop()
            group.append(i)
            for j in np.flatnonzero(linked[i]):
                if int(j) not in seen:
                    seen.add(int(j))
                    stack.append(int(j))
        groups.append(sorted(group))
    return groups


def oracle_conditional_moments(w: WorldSpec, condition: Mapping[str, int]) -> Tuple[Vec, np.ndarray]:
    """Exact mean and covariance of the mixture restricted to a label condition.

    Constraints split into groups with orthogonal spans; those groups are
    independent under each isotropic component, so each is integrated in
    its own low-dimensional coordinates.

    Args:
        w: World
        condition: attribute name -> required label

    Returns:
        (mean, covariance)

    Raises:
        ConditionError: Unknown attribute, or the condition has zero probability
    """
    names = list(condition)
    for name in names:
        if name not in w.attribute_names:
            raise ConditionError(f"Unknown attribute '{name}' in condition")
    if not names:
        signs = np.zeros((0, w.dim))
    else:
        signs = np.array(
            [(1.0 if condition[n] else -1.0) * np.asarray(w.attribute(n).normal) for n in names]
        )
    offsets = np.array(
        [(1.0 if condition[n] else -1.0) * w.attribute(n).offset for n in names]
    )

    groups = _constraint_groups(signs) if names else []
    bases = []
    for group in groups:
        _, sv, vt = np.linalg.svd(signs[group], full_matrices=False)
        rank = int(np.sum(sv > 1e-10 * sv[0]))
        bases.append(vt[:rank].T)

    masses, means, seconds = [], [], []
    for comp, weight in zip(w.components, w.weights):
        mu = np.asarray(comp.mean, dtype=np.float64)
        sigma = comp.stddev
        mass = 1.0
        mean = mu.copy()
        cov = sigma**2 * np.eye(w.dim)
        for group, q in zip(groups, bases):
            a = signs[group] @ q * sigma
            b = signs[group] @ mu + offsets[group]
            g_mass, g_mean, g_second = _polyhedron_moments(a, b)
            mass *= g_mass
            if mass == 0.0:
                break
            g_cov = g_second - np.outer(g_mean, g_mean)
            mean = mean + sigma * (q @ g_mean)
            cov = cov + sigma**2 * (q @ (g_cov - np.eye(q.shape[1])) @ q.T)
        masses.append(weight * mass)
        means.append(mean)
        seconds.append(cov + np.outer(mean, mean))

    total = float(np.sum(masses))
    if total <= 1e-300:
        raise ConditionError(f"Condition {dict(condition)} has zero probability")
    weights = np.asarray(masses) / total
    mean = np.einsum("k,kd->d", weights, np.asarray(means))
    second = np.einsum("k,kde->de", weights, np.asarray(seconds))
    cov = second - np.outer(mean, mean)
    return mean, 0.5 * (cov + cov.T)


def condition_from_targets(w: WorldSpec, targets: Mapping[str, int]) -> Dict[str, int]:
    """Validate and normalize a target condition."""
    out = {}
    for name, value in targets.items():
        w.attribute(name)
        out[name] = 1 if int(value) else 0
    return out
