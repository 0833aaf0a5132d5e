"""Numerical core: kernels, diffusion, classifiers, guidance, worlds and metrics."""

from .classifiers import LatentClassifier
from .classifiers import grad_log_prob
from .classifiers import log_prob
from .classifiers import pairwise_correlation
from .classifiers import train_classifier
from .classifiers import weight_direction
from .diffusion import Denoiser
from .diffusion import ElboReport
from .diffusion import NoiseSchedule
from .diffusion import ddim_step
from .diffusion import ddpm_step
from .diffusion import elbo_conditional
from .diffusion import elbo_unconditional
from .diffusion import forward_sample
from .diffusion import make_schedule
from .diffusion import sample
from .diffusion import score_from_noise
from .diffusion import train_denoiser
from .evaluation import EvalReport
from .evaluation import acc
from .evaluation import disentanglement_report
from .evaluation import frechet_distance
from .evaluation import identity_distance
from .evaluation import latent_fid
from .exceptions import ClassifierKindError
from .exceptions import ClassifierNotFoundError
from .exceptions import ConditionError
from .exceptions import ConfigurationError
from .exceptions import DataError
from .exceptions import DimensionMismatchError
from .exceptions import EvaluationError
from .exceptions import GuidanceSpecError
from .exceptions import LcgError
from .exceptions import NumericError
from .exceptions import ScheduleError
from .guidance import GuidanceSpec
from .guidance import GuidanceTerm
from .guidance import ScaleSchedule
from .guidance import SourceTerm
from .guidance import compose_score
from .guidance import fixed_point_flow
from .guidance import guided_sample
from .guidance import linear_solution
from .guidance import manipulate
from .guidance import sequential_edit
from .numkernel import Mlp
from .numkernel import adam_step
from .numkernel import gaussian_sample
from .numkernel import make_rng
from .numkernel import mlp_forward
from .numkernel import mlp_grad_input
from .numkernel import mlp_grad_params
from .types import Activation
from .types import ClassifierKind
from .types import Polarity
from .types import SamplerKind
from .types import WorldPreset
from .world import AttributedDataset
from .world import WorldSpec
from .world import oracle_conditional_moments
from .world import oracle_label
from .world import sample_dataset
from .world import standard_world

__all__ = [
    # Kernels
    "Mlp",
    "adam_step",
    "gaussian_sample",
    "make_rng",
    "mlp_forward",
    "mlp_grad_input",
    "mlp_grad_params",
    # Diffusion
    "Denoiser",
    "ElboReport",
    "NoiseSchedule",
    "ddim_step",
    "ddpm_step",
    "elbo_conditional",
    "elbo_unconditional",
    "forward_sample",
    "make_schedule",
    "sample",
    "score_from_noise",
    "train_denoiser",
    # Classifiers
    "LatentClassifier",
    "grad_log_prob",
    "log_prob",
    "pairwise_correlation",
    "train_classifier",
    "weight_direction",
    # Guidance
    "GuidanceSpec",
    "GuidanceTerm",
    "ScaleSchedule",
    "SourceTerm",
    "compose_score",
    "fixed_point_flow",
    "guided_sample",
    "linear_solution",
    "manipulate",
    "sequential_edit",
    # Worlds
    "AttributedDataset",
    "WorldSpec",
    "oracle_conditional_moments",
    "oracle_label",
    "sample_dataset",
    "standard_world",
    # Metrics
    "EvalReport",
    "acc",
    "disentanglement_report",
    "frechet_distance",
    "identity_distance",
    "latent_fid",
    # Errors
    "ClassifierKindError",
    "ClassifierNotFoundError",
    "ConditionError",
    "ConfigurationError",
    "DataError",
    "DimensionMismatchError",
    "EvaluationError",
    "GuidanceSpecError",
    "LcgError",
    "NumericError",
    "ScheduleError",
    # Types
    "Activation",
    "ClassifierKind",
    "Polarity",
    "SamplerKind",
    "WorldPreset",
]
