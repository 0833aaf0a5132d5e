"""Latent diffusion: schedule, corruption, training, samplers and ELBO.

Timesteps run t = 1..T. Schedule arrays carry an extra slot at index 0
for t = 0 (a = ā = 1, b = 0) so that ā_{t-1} is always a plain lookup.
"""

import logging
from dataclasses import dataclass
from dataclasses import field
from typing import Callable
from typing import Dict
from typing import List
from typing import Mapping
from typing import Optional
from typing import Sequence
from typing import Tuple
from typing import Union

import numpy as np

from .classifiers import LatentClassifier
from .exceptions import ClassifierNotFoundError
from .exceptions import DataError
from .exceptions import DimensionMismatchError
from .exceptions import NumericError
from .exceptions import ScheduleError
from .numkernel import AdamState
from .numkernel import Mlp
from .numkernel import adam_step
from .numkernel import init_mlp
from .numkernel import mlp_backward
from .numkernel import mlp_forward
from .types import Activation
from .types import Rng
from .types import SamplerKind
from .types import Vec
from .world import AttributedDataset

logger = logging.getLogger(__name__)

EMBEDDING_DIM = 16
TERMINAL_ALPHA_BAR = 0.05

Timestep = Union[int, np.ndarray]
GuidanceFn = Callable[[np.ndarray, int], np.ndarray]


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep diffusion coefficients, index 0 holding t = 0."""

    T: int
    b_start: float
    b_end: float
    betas: np.ndarray = field(repr=False)
    alphas: np.ndarray = field(repr=False)
    alpha_bars: np.ndarray = field(repr=False)
    posterior_variances: np.ndarray = field(repr=False)

    @property
    def reconstruction_variance(self) -> float:
        """Variance of p(z_0 | z_1); σ̃_1² is zero, so the clipped σ̃_2² is used."""
        if self.T >= 2:
            return float(self.posterior_variances[2])
        return float(self.betas[1])

    def check_timestep(self, t: int) -> None:
        if not 1 <= int(t) <= self.T:
            raise ScheduleError(f"Timestep {t} outside 1..{self.T}")

    def to_dict(self) -> Dict[str, float]:
        return {"T": self.T, "b_start": self.b_start, "b_end": self.b_end}


def make_schedule(T: int, b_start: float, b_end: float) -> NoiseSchedule:
    """Linear b_t schedule with cumulative products and posterior variances.

    Raises:
        ScheduleError: T < 1 or the b range is not inside (0, 1)
    """
    if T < 1:
        raise ScheduleError(f"T must be at least 1, got {T}")
    if not 0.0 < b_start <= b_end < 1.0:
        raise ScheduleError(f"Need 0 < b_start <= b_end < 1, got {b_start}, {b_end}")
    betas = np.zeros(T + 1)
    betas[1:] = np.linspace(b_start, b_end, T) if T > 1 else b_start
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    posterior = np.zeros(T + 1)
    posterior[1:] = betas[1:] * (1.0 - alpha_bars[:-1]) / (1.0 - alpha_bars[1:])
    if alpha_bars[-1] >= TERMINAL_ALPHA_BAR:
        logger.warning(
            f"Schedule T={T}, b in [{b_start}, {b_end}] ends at ā_T={alpha_bars[-1]:.4f}; "
            "the terminal marginal is not near-Gaussian"
        )
    return NoiseSchedule(
        T=T,
        b_start=float(b_start),
        b_end=float(b_end),
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        posterior_variances=posterior,
    )


def default_schedule(T: int = 100) -> NoiseSchedule:
    """Linear schedule rescaled from the 1000-step range [1e-4, 0.02]."""
    factor = 1000.0 / T
    return make_schedule(T, 1e-4 * factor, min(0.02 * factor, 0.999))


def timestep_embedding(t: Timestep, dim: int = EMBEDDING_DIM, max_period: float = 10000.0) -> np.ndarray:
    """Sinusoidal embedding with geometrically spaced frequencies, shape (n, dim)."""
    steps = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    args = steps[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


@dataclass
class Denoiser:
    """Noise predictor ε_θ(z_t, t) over [z_t, embedding(t)]."""

    mlp: Mlp
    latent_dim: int
    embedding_dim: int = EMBEDDING_DIM

    def __post_init__(self) -> None:
        if self.mlp.input_dim != self.latent_dim + self.embedding_dim:
            raise DimensionMismatchError(
                "denoiser input", self.latent_dim + self.embedding_dim, self.mlp.input_dim
            )
        if self.mlp.output_dim != self.latent_dim:
            raise DimensionMismatchError("denoiser output", self.latent_dim, self.mlp.output_dim)

    @classmethod
    def create(
        cls,
        latent_dim: int,
        rng: Rng,
        hidden: Sequence[int] = (64, 64),
        activation: Activation = Activation.TANH,
    ) -> "Denoiser":
        sizes = [latent_dim + EMBEDDING_DIM, *hidden, latent_dim]
        return cls(mlp=init_mlp(sizes, rng, activation), latent_dim=latent_dim)

    def inputs(self, z_t: np.ndarray, t: Timestep) -> np.ndarray:
        batch = np.atleast_2d(z_t)
        steps = np.broadcast_to(np.asarray(t), (batch.shape[0],))
        return np.concatenate([batch, timestep_embedding(steps, self.embedding_dim)], axis=1)

    def predict(self, z_t: Vec, t: Timestep) -> Vec:
        """Predicted noise with the shape of z_t."""
        z = np.asarray(z_t, dtype=np.float64)
        out = mlp_forward(self.mlp, self.inputs(z, t))
        return out[0] if z.ndim == 1 else out


@dataclass
class TrainingResult:
    """Trained network and its loss history."""

    net: Denoiser
    losses: np.ndarray
    smoothed: np.ndarray


def _predict_noise(net: Optional[Denoiser], z_t: np.ndarray, t: int) -> np.ndarray:
    # None stands for a non-informative prior: ε̂ ≡ 0.
    if net is None:
        return np.zeros_like(z_t)
    return net.predict(z_t, t)


def forward_sample(
    s: NoiseSchedule,
    z0: Vec,
    t: Timestep,
    rng: Optional[Rng] = None,
    noise: Optional[Vec] = None,
) -> Tuple[Vec, Vec]:
    """Closed-form corruption z_t = √ā_t z0 + √(1-ā_t) ε.

    Args:
        s: Schedule
        z0: Clean latent(s)
        t: Timestep, or one timestep per row
        rng: Generator for ε (unused when noise is given)
        noise: Fixed ε, mainly for tests

    Returns:
        (z_t, ε)
    """
    steps = np.asarray(t)
    if np.any(steps < 1) or np.any(steps > s.T):
        raise ScheduleError(f"Timestep {t} outside 1..{s.T}")
    z0 = np.asarray(z0, dtype=np.float64)
    if noise is None:
        if rng is None:
            raise ValueError("forward_sample needs rng or noise")
        noise = rng.standard_normal(z0.shape)
    eps = np.asarray(noise, dtype=np.float64)
    ab = s.alpha_bars[steps]
    if steps.ndim == 1:
        ab = ab[:, None]
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps, eps


def _smooth(losses: np.ndarray, decay: float = 0.98) -> np.ndarray:
    """Exponential moving average followed by a running minimum."""
    out = np.empty_like(losses)
    acc = losses[0] if losses.size else 0.0
    for i, value in enumerate(losses):
        acc = decay * acc + (1.0 - decay) * value if i else value
        out[i] = acc
    return np.minimum.accumulate(out) if out.size else out


def train_denoiser(
    s: NoiseSchedule,
    data: AttributedDataset,
    net: Denoiser,
    steps: int,
    batch: int,
    lr: float,
    rng: Rng,
    log_every: int = 1000,
) -> TrainingResult:
    """Minimize E ‖ε - ε_θ(z_t, t)‖² with t uniform on 1..T.

    Raises:
        DataError: Empty dataset or dimension mismatch
        NumericError: Loss became non-finite
    """
    if len(data) == 0:
        raise DataError("Cannot train a denoiser on an empty dataset")
    if data.dim != net.latent_dim:
        raise DimensionMismatchError("dataset latents", net.latent_dim, data.dim)

    params = net.mlp.params()
    state = AdamState.zeros_like(params)
    mlp = net.mlp
    losses = np.empty(steps)
    for step in range(steps):
        idx = rng.integers(0, len(data), size=batch)
        t = rng.integers(1, s.T + 1, size=batch)
        z_t, eps = forward_sample(s, data.latents[idx], t, rng)
        inputs = net.inputs(z_t, t)
        residual = mlp_forward(mlp, inputs) - eps
        loss = float(np.mean(np.sum(residual * residual, axis=1)))
        if not np.isfinite(loss):
            logger.error(f"Denoiser loss became non-finite at step {step}")
            raise NumericError("train_denoiser", f"non-finite loss at step {step}")
        losses[step] = loss
        grads, _ = mlp_backward(mlp, inputs, 2.0 * residual / batch)
        params, state = adam_step(params, grads.as_list(), state, lr)
        mlp = mlp.with_params(params)
        if log_every and (step + 1) % log_every == 0:
            logger.info(f"Denoiser step {step + 1}/{steps}: loss {loss:.5f}")

    trained = Denoiser(mlp=mlp, latent_dim=net.latent_dim, embedding_dim=net.embedding_dim)
    return TrainingResult(net=trained, losses=losses, smoothed=_smooth(losses))


def score_from_noise(s: NoiseSchedule, eps_hat: Vec, t: int) -> Vec:
    """Unconditional score -ε̂ / √(1-ā_t)."""
    s.check_timestep(t)
    return -np.asarray(eps_hat, dtype=np.float64) / np.sqrt(1.0 - s.alpha_bars[t])


def ddpm_step(
    s: NoiseSchedule,
    net: Optional[Denoiser],
    z_t: Vec,
    t: int,
    extra_score: Optional[Vec] = None,
    rng: Optional[Rng] = None,
    noise: Optional[Vec] = None,
) -> Vec:
    """Ancestral step with the guidance score as a σ̃_t²-scaled mean shift.

    z_{t-1} = μ_θ(z_t, t) + σ̃_t² extra + σ̃_t ξ, and no noise at t = 1.
    """
    s.check_timestep(t)
    z_t = np.asarray(z_t, dtype=np.float64)
    eps_hat = _predict_noise(net, z_t, t)
    b, a, ab = s.betas[t], s.alphas[t], s.alpha_bars[t]
    var = s.posterior_variances[t]
    mean = (z_t - b / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(a)
    if extra_score is not None:
        mean = mean + var * np.asarray(extra_score, dtype=np.float64)
    if t == 1:
        return mean
    if noise is None:
        if rng is None:
            raise ValueError("ddpm_step needs rng or noise for t > 1")
        noise = rng.standard_normal(z_t.shape)
    return mean + np.sqrt(var) * np.asarray(noise, dtype=np.float64)


def ddim_step(
    s: NoiseSchedule,
    net: Optional[Denoiser],
    z_t: Vec,
    t: int,
    extra_score: Optional[Vec] = None,
    eta: float = 0.0,
    rng: Optional[Rng] = None,
    noise: Optional[Vec] = None,
) -> Vec:
    """DDIM update on the guided noise ε̃ = ε̂ - √(1-ā_t) extra; η = 0 is deterministic."""
    s.check_timestep(t)
    if not 0.0 <= eta <= 1.0:
        raise ScheduleError(f"eta must lie in [0, 1], got {eta}")
    z_t = np.asarray(z_t, dtype=np.float64)
    ab, ab_prev = s.alpha_bars[t], s.alpha_bars[t - 1]
    eps = _predict_noise(net, z_t, t)
    if extra_score is not None:
        eps = eps - np.sqrt(1.0 - ab) * np.asarray(extra_score, dtype=np.float64)
    z0_pred = (z_t - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)
    sigma = eta * np.sqrt((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev))
    direction = np.sqrt(max(1.0 - ab_prev - sigma**2, 0.0)) * eps
    out = np.sqrt(ab_prev) * z0_pred + direction
    if sigma > 0.0:
        if noise is None:
            if rng is None:
                raise ValueError("ddim_step needs rng or noise when eta > 0")
            noise = rng.standard_normal(z_t.shape)
        out = out + sigma * np.asarray(noise, dtype=np.float64)
    return out


def reverse_chain(
    s: NoiseSchedule,
    net: Optional[Denoiser],
    z_start: np.ndarray,
    t_start: int,
    sampler: SamplerKind,
    rng: Rng,
    guidance_fn: Optional[GuidanceFn] = None,
    eta: float = 0.0,
    post_step: Optional[Callable[[np.ndarray, int], np.ndarray]] = None,
) -> np.ndarray:
    """Run reverse steps t_start..1 from z_start.

    Args:
        guidance_fn: (z_t, t) -> extra score, evaluated before each step
        post_step: (z_{t-1}, t) -> adjusted z_{t-1}, applied after each step
    """
    s.check_timestep(t_start)
    sampler = SamplerKind(sampler)
    z = np.asarray(z_start, dtype=np.float64)
    for t in range(t_start, 0, -1):
        extra = guidance_fn(z, t) if guidance_fn is not None else None
        if sampler is SamplerKind.DDPM:
            z = ddpm_step(s, net, z, t, extra, rng=rng)
        else:
            z = ddim_step(s, net, z, t, extra, eta=eta, rng=rng)
        if post_step is not None:
            z = post_step(z, t)
        if not np.all(np.isfinite(z)):
            raise NumericError("reverse_chain", f"non-finite latent at t={t}")
    return z


def sample(
    s: NoiseSchedule,
    net: Optional[Denoiser],
    n: int,
    sampler: SamplerKind,
    rng: Rng,
    guidance_fn: Optional[GuidanceFn] = None,
    eta: float = 0.0,
    dim: Optional[int] = None,
) -> np.ndarray:
    """Draw n latents by the full reverse chain from z_T ~ N(0, I)."""
    d = dim if dim is not None else (net.latent_dim if net is not None else None)
    if d is None:
        raise ValueError("sample needs a denoiser or an explicit dimension")
    if n == 0:
        return np.zeros((0, d))
    z_T = rng.standard_normal((n, d))
    return reverse_chain(s, net, z_T, s.T, sampler, rng, guidance_fn, eta)


# ---------------------------------------------------------------------------
# ELBO
# ---------------------------------------------------------------------------


def normal_kl(mean1: Vec, var1: float, mean2: Vec, var2: float) -> np.ndarray:
    """KL(N(mean1, var1 I) || N(mean2, var2 I)) summed over the last axis."""
    mean1 = np.asarray(mean1, dtype=np.float64)
    mean2 = np.asarray(mean2, dtype=np.float64)
    d = mean1.shape[-1]
    sq = np.sum((mean1 - mean2) ** 2, axis=-1)
    return 0.5 * (d * (np.log(var2 / var1) + var1 / var2 - 1.0) + sq / var2)


def gaussian_log_density(x: Vec, mean: Vec, var: float) -> np.ndarray:
    """log N(x; mean, var I) summed over the last axis."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    sq = np.sum((x - np.asarray(mean, dtype=np.float64)) ** 2, axis=-1)
    return -0.5 * (d * np.log(2.0 * np.pi * var) + sq / var)


@dataclass
class ElboReport:
    """ELBO terms, each already averaged over the Monte-Carlo draws."""

    prior: float
    denoising: np.ndarray
    reconstruction: float
    classifier: Optional[np.ndarray] = None
    source: Optional[np.ndarray] = None

    @property
    def unconditional_total(self) -> float:
        return self.prior + float(np.sum(self.denoising)) + self.reconstruction

    @property
    def classifier_term(self) -> float:
        return float(np.sum(self.classifier)) if self.classifier is not None else 0.0

    @property
    def source_term(self) -> float:
        return float(np.sum(self.source)) if self.source is not None else 0.0

    @property
    def total(self) -> float:
        total = self.unconditional_total
        if self.classifier is not None:
            total = total + self.classifier_term
        if self.source is not None:
            total = total + self.source_term
        return total

    def to_dict(self) -> Dict[str, object]:
        out: Dict[str, object] = {
            "total": self.total,
            "prior": self.prior,
            "denoising": self.denoising.tolist(),
            "reconstruction": self.reconstruction,
        }
        if self.classifier is not None:
            out["classifier"] = self.classifier.tolist()
        if self.source is not None:
            out["source"] = self.source.tolist()
        return out


def _elbo_draws(s: NoiseSchedule, z0: np.ndarray, rng: Rng, mc: int) -> np.ndarray:
    """Marginal draws z_t ~ q(z_t | z0), shape (mc, T + 1, d), slot 0 = z0."""
    if mc < 1:
        raise ValueError(f"mc must be at least 1, got {mc}")
    d = z0.shape[-1]
    eps = rng.standard_normal((mc, s.T, d))
    ab = s.alpha_bars[1:, None]
    draws = np.empty((mc, s.T + 1, d))
    draws[:, 0] = z0
    draws[:, 1:] = np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps
    return draws


def _unconditional_terms(
    s: NoiseSchedule, net: Denoiser, z0: np.ndarray, draws: np.ndarray
) -> Tuple[float, np.ndarray, float]:
    mc, d = draws.shape[0], z0.shape[-1]
    ab_T = s.alpha_bars[s.T]
    prior = -float(normal_kl(np.sqrt(ab_T) * z0, 1.0 - ab_T, np.zeros(d), 1.0))

    denoising = np.zeros(max(s.T - 1, 0))
    for t in range(2, s.T + 1):
        z_t = draws[:, t]
        ab, ab_prev = s.alpha_bars[t], s.alpha_bars[t - 1]
        b, a = s.betas[t], s.alphas[t]
        post_mean = (
            np.sqrt(ab_prev) * b / (1.0 - ab) * z0
            + np.sqrt(a) * (1.0 - ab_prev) / (1.0 - ab) * z_t
        )
        eps_hat = net.predict(z_t, t)
        model_mean = (z_t - b / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(a)
        var = s.posterior_variances[t]
        denoising[t - 2] = -float(np.mean(normal_kl(post_mean, var, model_mean, var)))

    z_1 = draws[:, 1]
    eps_hat = net.predict(z_1, 1)
    model_mean = (z_1 - s.betas[1] / np.sqrt(1.0 - s.alpha_bars[1]) * eps_hat) / np.sqrt(s.alphas[1])
    recon = float(np.mean(gaussian_log_density(z0, model_mean, s.reconstruction_variance)))
    if not (np.isfinite(prior) and np.all(np.isfinite(denoising)) and np.isfinite(recon)):
        raise NumericError("elbo", "non-finite ELBO term")
    return prior, denoising, recon


def elbo_unconditional(s: NoiseSchedule, net: Denoiser, z0: Vec, rng: Rng, mc: int) -> ElboReport:
    """Monte-Carlo estimate of the unconditional DDPM ELBO for one latent.

    Prior and per-step terms are closed-form Gaussian KLs given the
    sampled z_t; the reconstruction term is a Gaussian log-density with
    the clipped reconstruction variance.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    draws = _elbo_draws(s, z0, rng, mc)
    prior, denoising, recon = _unconditional_terms(s, net, z0, draws)
    return ElboReport(prior=prior, denoising=denoising, reconstruction=recon)


def elbo_conditional(
    s: NoiseSchedule,
    net: Denoiser,
    classifiers: Mapping[str, LatentClassifier],
    y: Mapping[str, int],
    z0: Vec,
    rng: Rng,
    mc: int,
    source_latent: Optional[Vec] = None,
    source_variance: float = 1.0,
) -> ElboReport:
    """Conditional ELBO: unconditional terms plus Σ_t Σ_i log p(y^i | z_{t-1}).

    Uses the same random stream as elbo_unconditional, so with equal
    generator states the two differ by exactly the classifier (and
    source) terms. With a source latent ẑ the Gaussian Σ_t log p(ẑ | z_{t-1})
    is reported as its own term.

    Raises:
        ClassifierNotFoundError: A condition has no classifier
    """
    for name in y:
        if name not in classifiers:
            raise ClassifierNotFoundError(name, list(classifiers))
    z0 = np.asarray(z0, dtype=np.float64)
    draws = _elbo_draws(s, z0, rng, mc)
    prior, denoising, recon = _unconditional_terms(s, net, z0, draws)

    previous = draws[:, :-1]  # z_{t-1} for t = 1..T
    flat = previous.reshape(-1, z0.shape[-1])
    per_step = np.zeros(s.T)
    if y:
        totals = np.zeros(flat.shape[0])
        for name, label in y.items():
            totals = totals + classifiers[name].log_prob(flat, int(label))
        per_step = totals.reshape(mc, s.T).mean(axis=0)

    source = None
    if source_latent is not None:
        hat = np.asarray(source_latent, dtype=np.float64)
        source = gaussian_log_density(hat, flat, source_variance).reshape(mc, s.T).mean(axis=0)

    if not np.all(np.isfinite(per_step)):
        raise NumericError("elbo_conditional", "non-finite classifier term")
    return ElboReport(
        prior=prior,
        denoising=denoising,
        reconstruction=recon,
        classifier=per_step if y else None,
        source=source,
    )


def mean_elbo(s: NoiseSchedule, net: Denoiser, latents: np.ndarray, rng: Rng, mc: int) -> float:
    """Average unconditional ELBO over a set of latents."""
    totals: List[float] = [elbo_unconditional(s, net, z, rng, mc).total for z in latents]
    return float(np.mean(totals))
