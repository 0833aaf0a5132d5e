"""Latent attribute classifiers.

Both kinds are an Mlp with a scalar logit; the linear kind is the
single-layer case and exposes its weight vector and bias.
"""

import logging
from dataclasses import dataclass
from typing import List
from typing import Sequence
from typing import Tuple
from typing import Union

import numpy as np
from scipy.special import expit

from .exceptions import ClassifierKindError
from .exceptions import DataError
from .exceptions import DimensionMismatchError
from .exceptions import EvaluationError
from .exceptions import NumericError
from .numkernel import AdamState
from .numkernel import Mlp
from .numkernel import adam_step
from .numkernel import init_mlp
from .numkernel import mlp_backward
from .numkernel import mlp_forward
from .numkernel import mlp_grad_input
from .types import Activation
from .types import ClassifierKind
from .types import ClassifierReport
from .types import Rng
from .types import Vec
from .world import AttributedDataset

logger = logging.getLogger(__name__)

DEFAULT_L2 = 1e-4
Labels = Union[int, np.ndarray]


@dataclass
class LatentClassifier:
    """Model of log p(y | z) for one binary attribute."""

    kind: ClassifierKind
    attribute: str
    net: Mlp

    def __post_init__(self) -> None:
        self.kind = ClassifierKind(self.kind)
        if self.net.output_dim != 1:
            raise DimensionMismatchError("classifier output", 1, self.net.output_dim)
        if self.kind is ClassifierKind.LINEAR and len(self.net.weights) != 1:
            raise ClassifierKindError(self.attribute, "a linear classifier")

    @classmethod
    def linear(cls, attribute: str, weight: Sequence[float], bias: float = 0.0) -> "LatentClassifier":
        w = np.asarray(weight, dtype=np.float64).reshape(1, -1)
        mlp = Mlp(weights=[w], biases=[np.array([float(bias)])], activation=Activation.IDENTITY)
        return cls(kind=ClassifierKind.LINEAR, attribute=attribute, net=mlp)

    @property
    def dim(self) -> int:
        return self.net.input_dim

    @property
    def weight(self) -> np.ndarray:
        return weight_direction(self)

    @property
    def bias(self) -> float:
        if self.kind is not ClassifierKind.LINEAR:
            raise ClassifierKindError(self.attribute, "bias")
        return float(self.net.biases[0][0])

    def logit(self, z: Vec) -> Union[float, np.ndarray]:
        z = np.asarray(z, dtype=np.float64)
        out = mlp_forward(self.net, z)
        return float(out[0]) if z.ndim == 1 else out[:, 0]

    def log_prob(self, z: Vec, y: Labels) -> Union[float, np.ndarray]:
        return log_prob(self, z, y)

    def grad_log_prob(self, z: Vec, y: Labels) -> Vec:
        return grad_log_prob(self, z, y)


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    # log σ(x) = -softplus(-x)
    return -np.logaddexp(0.0, -x)


def log_prob(c: LatentClassifier, z: Vec, y: Labels) -> Union[float, np.ndarray]:
    """log σ(f(z)) for y = 1, log(1 - σ(f(z))) for y = 0."""
    f = np.asarray(c.logit(z))
    sign = np.where(np.asarray(y) == 1, 1.0, -1.0)
    out = _log_sigmoid(sign * f)
    return float(out) if out.ndim == 0 else out


def grad_log_prob(c: LatentClassifier, z: Vec, y: Labels) -> Vec:
    """Gradient of log_prob with respect to z.

    y = 1 gives (1 - σ(f)) ∇f, y = 0 gives -σ(f) ∇f.
    """
    z = np.asarray(z, dtype=np.float64)
    f = np.asarray(c.logit(z))
    prob = expit(f)
    coef = np.where(np.asarray(y) == 1, 1.0 - prob, -prob)
    if z.ndim == 1:
        return mlp_grad_input(c.net, z, np.array([float(coef)]))
    coef = np.broadcast_to(coef, (z.shape[0],))
    return mlp_grad_input(c.net, z, coef[:, None])


def weight_direction(c: LatentClassifier) -> np.ndarray:
    """Unnormalized weight vector w of a linear classifier."""
    if c.kind is not ClassifierKind.LINEAR:
        raise ClassifierKindError(c.attribute, "weight_direction")
    return c.net.weights[0][0].copy()


def accuracy(c: LatentClassifier, latents: np.ndarray, labels: np.ndarray) -> float:
    if len(latents) == 0:
        raise EvaluationError("Cannot measure accuracy on an empty set")
    predicted = (np.asarray(c.logit(latents)) > 0.0).astype(np.int64)
    return float(np.mean(predicted == labels))


def train_classifier(
    kind: ClassifierKind,
    data: AttributedDataset,
    attribute: str,
    epochs: int,
    lr: float,
    rng: Rng,
    l2: float = DEFAULT_L2,
    hidden: Sequence[int] = (32,),
    batch: int = 256,
    validation_fraction: float = 0.2,
) -> Tuple[LatentClassifier, ClassifierReport]:
    """Fit a classifier by minibatch Adam on mean NLL + (l2/2)‖weights‖².

    Args:
        kind: linear or mlp
        data: Labeled latents
        attribute: Attribute to predict
        epochs: Passes over the training split
        lr: Adam learning rate
        rng: Generator for the split, initialization and shuffling
        l2: Weight penalty
        hidden: Hidden widths of the mlp kind
        batch: Minibatch size
        validation_fraction: Held-out share for the accuracy report

    Returns:
        Trained classifier and its accuracy report

    Raises:
        DataError: Too little data, or only one label value present
    """
    kind = ClassifierKind(kind)
    labels = data.column(attribute)
    if len(np.unique(labels)) < 2:
        raise DataError(f"Attribute '{attribute}' has a single label value; cannot train")
    n = len(data)
    order = rng.permutation(n)
    n_val = int(round(validation_fraction * n))
    if n - n_val < 2:
        raise DataError(f"Dataset of {n} points is too small to train on")
    val_idx, train_idx = order[:n_val], order[n_val:]
    x_train, y_train = data.latents[train_idx], labels[train_idx].astype(np.float64)

    sizes: List[int] = [data.dim, 1] if kind is ClassifierKind.LINEAR else [data.dim, *hidden, 1]
    activation = Activation.IDENTITY if kind is ClassifierKind.LINEAR else Activation.TANH
    net = init_mlp(sizes, rng, activation, scale=0.1 if kind is ClassifierKind.LINEAR else 1.0)
    params = net.params()
    state = AdamState.zeros_like(params)
    loss = float("nan")
    for epoch in range(epochs):
        perm = rng.permutation(len(train_idx))
        for start in range(0, len(perm), batch):
            idx = perm[start : start + batch]
            xb, yb = x_train[idx], y_train[idx]
            f = mlp_forward(net, xb)[:, 0]
            sign = 2.0 * yb - 1.0
            penalty = 0.5 * l2 * sum(float(np.sum(w * w)) for w in net.weights)
            loss = float(np.mean(-_log_sigmoid(sign * f))) + penalty
            if not np.isfinite(loss):
                raise NumericError("train_classifier", f"non-finite loss in epoch {epoch}")
            upstream = (expit(f) - yb)[:, None] / len(idx)
            grads, _ = mlp_backward(net, xb, upstream)
            grad_list = grads.as_list()
            for i in range(0, len(grad_list), 2):
                grad_list[i] = grad_list[i] + l2 * params[i]
            params, state = adam_step(params, grad_list, state, lr)
            net = net.with_params(params)
        logger.debug(f"Classifier '{attribute}' epoch {epoch + 1}/{epochs}: loss {loss:.5f}")

    classifier = LatentClassifier(kind=kind, attribute=attribute, net=net)
    if kind is ClassifierKind.LINEAR and not np.linalg.norm(weight_direction(classifier)) > 0:
        raise NumericError("train_classifier", f"'{attribute}' weight collapsed to zero")
    train_acc = accuracy(classifier, x_train, labels[train_idx])
    val_acc = accuracy(classifier, data.latents[val_idx], labels[val_idx]) if n_val else train_acc
    logger.info(
        f"Trained {kind.value} classifier '{attribute}': "
        f"train acc {train_acc:.4f}, validation acc {val_acc:.4f}"
    )
    report: ClassifierReport = {
        "attribute": attribute,
        "kind": kind.value,
        "train_accuracy": train_acc,
        "validation_accuracy": val_acc,
        "epochs": epochs,
        "final_loss": loss,
    }
    return classifier, report


def pairwise_correlation(cs: Sequence[LatentClassifier]) -> np.ndarray:
    """Cosine similarity matrix of linear classifier weights.

    Raises:
        ClassifierKindError: A classifier is not linear
        EvaluationError: Mixed dimensions or a zero weight vector
    """
    weights = [weight_direction(c) for c in cs]
    if not weights:
        return np.zeros((0, 0))
    if len({w.size for w in weights}) != 1:
        raise EvaluationError("Classifiers have different latent dimensions")
    matrix = np.array(weights)
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms == 0.0):
        zero = [c.attribute for c, n in zip(cs, norms) if n == 0.0]
        raise EvaluationError(f"Zero-norm weight for {zero}")
    unit = matrix / norms[:, None]
    corr = unit @ unit.T
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 1.0)
    return corr
