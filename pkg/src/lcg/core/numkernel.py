"""Dense numerical kernel.

Gaussian sampling on a counter-based generator, a fixed-topology
multilayer perceptron with hand-derived reverse-mode gradients, and the
Adam optimizer. Every function is pure apart from the explicit
generator and optimizer state passed in.
"""

import logging
import zlib
from dataclasses import dataclass
from dataclasses import field
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np

from .exceptions import DimensionMismatchError
from .exceptions import NumericError
from .types import Activation
from .types import Rng
from .types import Vec

logger = logging.getLogger(__name__)


def make_rng(seed: int, stream: Optional[str] = None) -> Rng:
    """Create a Philox generator for a root seed and optional named substream.

    Args:
        seed: Non-negative 64-bit root seed
        stream: Substream name such as "world" or "sample"

    Returns:
        A numpy Generator; equal arguments give bit-identical streams
    """
    if seed < 0:
        raise ValueError(f"Seed must be non-negative, got {seed}")
    spawn_key: Tuple[int, ...] = ()
    if stream is not None:
        spawn_key = (zlib.crc32(stream.encode("utf-8")),)
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(sequence))


def gaussian_sample(rng: Rng, d: int, n: Optional[int] = None) -> Vec:
    """Draw standard-normal vectors.

    Args:
        rng: Generator, advanced in place
        d: Dimension
        n: Optional batch size; returns shape (n, d) when given

    Returns:
        Array of i.i.d. N(0, 1) draws
    """
    if d < 1:
        raise DimensionMismatchError("gaussian_sample", 1, d)
    shape = (d,) if n is None else (n, d)
    return rng.standard_normal(shape)


@dataclass
class Mlp:
    """Multilayer perceptron.

    Weights are stored (out, in). The activation applies to every layer
    but the last, whose output is linear.
    """

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activation: Activation = Activation.TANH

    def __post_init__(self) -> None:
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValueError("Mlp needs one bias per weight matrix")
        self.activation = Activation(self.activation)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise DimensionMismatchError(f"layer {i} bias", w.shape[0], int(b.size))
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise DimensionMismatchError(
                    f"layer {i} input", self.weights[i - 1].shape[0], w.shape[1]
                )

    @property
    def input_dim(self) -> int:
        return int(self.weights[0].shape[1])

    @property
    def output_dim(self) -> int:
        return int(self.weights[-1].shape[0])

    @property
    def sizes(self) -> List[int]:
        """Layer widths from input to output."""
        return [self.input_dim] + [int(w.shape[0]) for w in self.weights]

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self) -> List[np.ndarray]:
        """Parameters in optimizer order: W0, b0, W1, b1, ..."""
        out: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_params(self, params: Sequence[np.ndarray]) -> "Mlp":
        """Return a new Mlp with the same topology and the given parameters."""
        if len(params) != 2 * len(self.weights):
            raise DimensionMismatchError("parameter list", 2 * len(self.weights), len(params))
        return Mlp(
            weights=[np.array(p, dtype=np.float64) for p in params[0::2]],
            biases=[np.array(p, dtype=np.float64) for p in params[1::2]],
            activation=self.activation,
        )

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    @classmethod
    def from_flat(
        cls, sizes: Sequence[int], flat: Sequence[float], activation: Activation
    ) -> "Mlp":
        """Rebuild an Mlp from layer widths and a flat parameter vector."""
        flat = np.asarray(flat, dtype=np.float64)
        expected = sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:]))
        if flat.size != expected:
            raise DimensionMismatchError("flat parameters", expected, int(flat.size))
        weights, biases, offset = [], [], 0
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            weights.append(flat[offset : offset + n_out * n_in].reshape(n_out, n_in).copy())
            offset += n_out * n_in
            biases.append(flat[offset : offset + n_out].copy())
            offset += n_out
        return cls(weights=weights, biases=biases, activation=activation)


@dataclass
class MlpGrads:
    """Gradients with respect to every Mlp parameter."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def as_list(self) -> List[np.ndarray]:
        out: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def init_mlp(
    sizes: Sequence[int],
    rng: Rng,
    activation: Activation = Activation.TANH,
    scale: float = 1.0,
) -> Mlp:
    """Glorot-uniform initialization with zero biases.

    Args:
        sizes: Layer widths, input first
        rng: Generator for the weights
        activation: Hidden activation
        scale: Multiplier applied to every weight matrix

    Returns:
        A freshly initialized Mlp
    """
    if len(sizes) < 2:
        raise ValueError("An Mlp needs at least an input and an output width")
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        limit = scale * np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-limit, limit, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return Mlp(weights=weights, biases=biases, activation=Activation(activation))


def _activate(kind: Activation, pre: np.ndarray) -> np.ndarray:
    if kind is Activation.TANH:
        return np.tanh(pre)
    if kind is Activation.RELU:
        return np.maximum(pre, 0.0)
    return pre


def _activation_grad(kind: Activation, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    if kind is Activation.TANH:
        return 1.0 - post * post
    if kind is Activation.RELU:
        return (pre > 0.0).astype(np.float64)
    return np.ones_like(pre)


def _as_batch(x: Vec, dim: int, what: str) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    batch = arr[None, :] if single else arr
    if batch.ndim != 2 or batch.shape[1] != dim:
        raise DimensionMismatchError(what, dim, int(batch.shape[-1]) if batch.ndim else 0)
    return batch, single


def _forward_trace(m: Mlp, x: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Run the network keeping every layer input and pre-activation."""
    inputs, pres = [], []
    h = x
    last = len(m.weights) - 1
    for i, (w, b) in enumerate(zip(m.weights, m.biases)):
        inputs.append(h)
        pre = h @ w.T + b
        pres.append(pre)
        h = pre if i == last else _activate(m.activation, pre)
    inputs.append(h)
    return inputs, pres


def mlp_forward(m: Mlp, x: Vec) -> Vec:
    """Feed-forward output for one vector or a batch of row vectors."""
    batch, single = _as_batch(x, m.input_dim, "mlp input")
    out = _forward_trace(m, batch)[0][-1]
    return out[0] if single else out


def mlp_backward(m: Mlp, x: Vec, upstream: Vec) -> Tuple[MlpGrads, Vec]:
    """Reverse pass of (upstream . output), summed over the batch.

    Args:
        m: Network
        x: Input vector or batch
        upstream: Cotangent with the output's shape

    Returns:
        Parameter gradients and the input gradient (shaped like x)
    """
    batch, single = _as_batch(x, m.input_dim, "mlp input")
    up, _ = _as_batch(upstream, m.output_dim, "upstream gradient")
    if up.shape[0] != batch.shape[0]:
        raise DimensionMismatchError("upstream batch", batch.shape[0], up.shape[0])
    inputs, pres = _forward_trace(m, batch)
    grad_w: List[np.ndarray] = [np.empty(0)] * len(m.weights)
    grad_b: List[np.ndarray] = [np.empty(0)] * len(m.weights)
    delta = up
    last = len(m.weights) - 1
    for i in range(last, -1, -1):
        if i != last:
            delta = delta * _activation_grad(m.activation, pres[i], inputs[i + 1])
        grad_w[i] = delta.T @ inputs[i]
        grad_b[i] = delta.sum(axis=0)
        delta = delta @ m.weights[i]
    grad_x = delta[0] if single else delta
    return MlpGrads(weights=grad_w, biases=grad_b), grad_x


def mlp_grad_params(m: Mlp, x: Vec, upstream: Vec) -> MlpGrads:
    """Gradient of (upstream . output) with respect to all parameters."""
    return mlp_backward(m, x, upstream)[0]


def mlp_grad_input(m: Mlp, x: Vec, upstream: Vec) -> Vec:
    """Gradient of (upstream . output) with respect to the input."""
    return mlp_backward(m, x, upstream)[1]


@dataclass
class AdamState:
    """First/second moment estimates and step count."""

    step: int = 0
    first: List[np.ndarray] = field(default_factory=list)
    second: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls(
            step=0,
            first=[np.zeros_like(p) for p in params],
            second=[np.zeros_like(p) for p in params],
        )


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> Tuple[List[np.ndarray], AdamState]:
    """One bias-corrected Adam update.

    Args:
        params: Current parameters
        grads: Gradients matching params
        state: Optimizer state; an empty state is initialized on the fly
        lr: Learning rate, > 0

    Returns:
        New parameters and new state; the inputs are left untouched

    Raises:
        NumericError: A gradient holds NaN or infinity
    """
    if lr <= 0:
        raise ValueError(f"Learning rate must be positive, got {lr}")
    if len(params) != len(grads):
        raise DimensionMismatchError("gradient list", len(params), len(grads))
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise DimensionMismatchError("gradient shape", p.size, g.size)
        if not np.all(np.isfinite(g)):
            raise NumericError("adam_step", "non-finite gradient")
    if not state.first:
        state = AdamState.zeros_like(params)

    step = state.step + 1
    first = [beta1 * m + (1.0 - beta1) * g for m, g in zip(state.first, grads)]
    second = [beta2 * v + (1.0 - beta2) * g * g for v, g in zip(state.second, grads)]
    correction1 = 1.0 - beta1**step
    correction2 = 1.0 - beta2**step
    new_params = [
        p - lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        for p, m, v in zip(params, first, second)
    ]
    return new_params, AdamState(step=step, first=first, second=second)
