"""
Dense MLP substrate for the generator, discriminator and noise predictor.

Matrices are 2-D float64 numpy arrays with one sample per row. Layers
compute ``x @ W.T + b`` with ``W`` stored as (out, in); hidden layers apply
a Leaky-ReLU, the final layer is linear. Gradient and Adam moment buffers
live next to each parameter.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, log_expit

from src.exceptions import (
    DimensionMismatchError,
    LabError,
    MissingForwardCacheError,
    create_dimension_error,
    create_non_finite_error,
)

Matrix2D = np.ndarray

LEAKY_SLOPE = 0.2


def as_matrix(x, name: str = "input") -> Matrix2D:
    """Return ``x`` as a 2-D float64 array, rejecting other ranks."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatchError(f"{name}: expected a 2-D batch, got shape {arr.shape}",
                                     actual=arr.shape)
    return arr


def check_finite(x: np.ndarray, name: str, operation: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise create_non_finite_error(name, operation)
    return x


def one_hot(labels: np.ndarray, num_classes: int) -> Matrix2D:
    """Encode integer labels as rows of a (n, num_classes) indicator matrix."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise DimensionMismatchError(f"labels: expected 1-D, got shape {labels.shape}",
                                     actual=labels.shape)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabError(f"labels must lie in [0, {num_classes})")
    encoded = np.zeros((labels.shape[0], num_classes))
    encoded[np.arange(labels.shape[0]), labels] = 1.0
    return encoded


@dataclass(eq=False)
class LinearLayer:
    """Affine map with gradient and Adam moment buffers."""
    weight: np.ndarray
    bias: np.ndarray
    name: str = "linear"
    grad_weight: np.ndarray = field(init=False)
    grad_bias: np.ndarray = field(init=False)
    m_weight: np.ndarray = field(init=False)
    v_weight: np.ndarray = field(init=False)
    m_bias: np.ndarray = field(init=False)
    v_bias: np.ndarray = field(init=False)

    def __post_init__(self):
        self.weight = np.array(self.weight, dtype=np.float64)
        self.bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        if self.weight.ndim != 2 or self.bias.shape[0] != self.weight.shape[0]:
            raise create_dimension_error(f"{self.name} bias", (self.weight.shape[0],), self.bias.shape)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self.m_weight = np.zeros_like(self.weight)
        self.v_weight = np.zeros_like(self.weight)
        self.m_bias = np.zeros_like(self.bias)
        self.v_bias = np.zeros_like(self.bias)

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator,
             name: str = "linear") -> 'LinearLayer':
        """Uniform weights in +-sqrt(1/in_dim), zero biases."""
        bound = np.sqrt(1.0 / in_dim)
        weight = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        return cls(weight=weight, bias=np.zeros(out_dim), name=name)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def parameters(self) -> List[Tuple[str, np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
        """(name, value, grad, first moment, second moment) per parameter."""
        return [
            (f"{self.name}.weight", self.weight, self.grad_weight, self.m_weight, self.v_weight),
            (f"{self.name}.bias", self.bias, self.grad_bias, self.m_bias, self.v_bias),
        ]

    def zero_grad(self) -> None:
        self.grad_weight.fill(0.0)
        self.grad_bias.fill(0.0)


def linear_forward(layer: LinearLayer, x: Matrix2D) -> Matrix2D:
    """Return ``x @ W.T + b`` broadcast over the batch rows."""
    x = as_matrix(x, layer.name)
    if x.shape[1] != layer.in_dim:
        raise create_dimension_error(f"{layer.name} forward", (x.shape[0], layer.in_dim), x.shape)
    return x @ layer.weight.T + layer.bias


def leaky_relu(x: Matrix2D, slope: float = LEAKY_SLOPE) -> Matrix2D:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    return np.maximum(x, slope * x)


def leaky_relu_grad(pre_activation: Matrix2D, slope: float = LEAKY_SLOPE) -> Matrix2D:
    return np.where(pre_activation > 0.0, 1.0, slope)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def log_sigmoid(x: np.ndarray) -> np.ndarray:
    """log(sigmoid(x)) evaluated as -softplus(-x)."""
    return log_expit(x)


def softplus(x: np.ndarray) -> np.ndarray:
    return -log_expit(-np.asarray(x, dtype=np.float64))


class Mlp:
    """
    Stack of affine layers with Leaky-ReLU between them.

    ``forward`` caches per-layer inputs and pre-activations for ``backward``;
    ``infer`` touches no state and is safe to call from several threads on
    a network whose parameters are not being updated.
    """

    def __init__(self, layers: List[LinearLayer], slope: float = LEAKY_SLOPE, name: str = "mlp"):
        if not layers:
            raise LabError(f"{name}: an MLP needs at least one layer")
        for k in range(len(layers) - 1):
            if layers[k].out_dim != layers[k + 1].in_dim:
                raise create_dimension_error(
                    f"{name} layer {k + 1} input",
                    (layers[k + 1].out_dim, layers[k].out_dim),
                    layers[k + 1].weight.shape,
                )
        self.layers = layers
        self.slope = slope
        self.name = name
        self._cache: Optional[List[Tuple[np.ndarray, np.ndarray]]] = None

    @classmethod
    def build(cls, dims: Sequence[int], rng: np.random.Generator, name: str = "mlp",
              slope: float = LEAKY_SLOPE) -> 'Mlp':
        """Create ``dims[0] -> dims[1] -> ... -> dims[-1]`` with fresh weights."""
        layers = [LinearLayer.init(dims[k], dims[k + 1], rng, name=str(k))
                  for k in range(len(dims) - 1)]
        return cls(layers, slope=slope, name=name)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dims(self) -> List[int]:
        return [self.in_dim] + [layer.out_dim for layer in self.layers]

    def forward(self, x: Matrix2D, cache: bool = True) -> Matrix2D:
        x = as_matrix(x, f"{self.name} input")
        if x.shape[1] != self.in_dim:
            raise create_dimension_error(f"{self.name} forward", (x.shape[0], self.in_dim), x.shape)

        records = []
        h = x
        last = len(self.layers) - 1
        for k, layer in enumerate(self.layers):
            pre = linear_forward(layer, h)
            records.append((h, pre))
            h = pre if k == last else leaky_relu(pre, self.slope)

        check_finite(h, f"{self.name} output", "forward")
        if cache:
            self._cache = records
        return h

    def infer(self, x: Matrix2D) -> Matrix2D:
        return self.forward(x, cache=False)

    def backward(self, grad_out: Matrix2D, accumulate_params: bool = True) -> Matrix2D:
        """Backpropagate ``grad_out`` through the cached forward pass.

        Args:
            grad_out: Gradient of a scalar loss w.r.t. the network output
            accumulate_params: Add parameter gradients into the buffers;
                False leaves the buffers untouched (frozen network)

        Returns:
            Gradient w.r.t. the network input
        """
        if self._cache is None:
            raise MissingForwardCacheError(f"{self.name}: backward called without a cached forward pass")
        grad = as_matrix(grad_out, f"{self.name} grad_out")
        batch = self._cache[0][0].shape[0]
        if grad.shape != (batch, self.out_dim):
            raise create_dimension_error(f"{self.name} backward", (batch, self.out_dim), grad.shape)

        last = len(self.layers) - 1
        for k in range(last, -1, -1):
            layer = self.layers[k]
            inp, pre = self._cache[k]
            if k != last:
                grad = grad * leaky_relu_grad(pre, self.slope)
            if accumulate_params:
                layer.grad_weight += grad.T @ inp
                layer.grad_bias += grad.sum(axis=0)
            grad = grad @ layer.weight
        return grad

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.zero_grad()

    def parameters(self):
        for layer in self.layers:
            yield from layer.parameters()

    def num_parameters(self) -> int:
        return sum(value.size for _, value, _, _, _ in self.parameters())

    def copy(self) -> 'Mlp':
        """Parameter snapshot (gradients and moments are reset)."""
        layers = [LinearLayer(weight=layer.weight.copy(), bias=layer.bias.copy(), name=layer.name)
                  for layer in self.layers]
        return Mlp(layers, slope=self.slope, name=self.name)


def mlp_forward(net: Mlp, x: Matrix2D) -> Matrix2D:
    return net.forward(x)


def mlp_backward(net: Mlp, grad_out: Matrix2D, accumulate_params: bool = True) -> Matrix2D:
    return net.backward(grad_out, accumulate_params=accumulate_params)


Moments = List[Tuple[np.ndarray, np.ndarray]]


def adam_step(net: Mlp, lr: float, beta1: float, beta2: float, eps: float, step_index: int,
              moments: Optional[Moments] = None) -> None:
    """Apply one bias-corrected Adam update to every parameter, then zero the gradients.

    ``moments`` holds one (first, second) pair per parameter in
    ``net.parameters()`` order; when omitted the layers' own buffers are used.

    Raises:
        NonFiniteError: naming the first layer with a non-finite gradient;
            no parameter is modified in that case
    """
    if step_index < 1:
        raise ValueError(f"step_index must be >= 1, got {step_index}")
    for layer in net.layers:
        if not (np.all(np.isfinite(layer.grad_weight)) and np.all(np.isfinite(layer.grad_bias))):
            raise create_non_finite_error(f"{net.name} layer {layer.name} gradient", "adam_step")

    correction1 = 1.0 - beta1 ** step_index
    correction2 = 1.0 - beta2 ** step_index
    params = list(net.parameters())
    buffers = moments if moments is not None else [(m, v) for _, _, _, m, v in params]
    for (_, value, grad, _, _), (m, v) in zip(params, buffers):
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * (grad * grad)
        value -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
    net.zero_grad()


@dataclass
class AdamOptimizer:
    """Adam hyperparameters plus the per-network step counter.

    With ``own_moments`` the optimizer keeps its moment estimates apart from
    the layer buffers, so a second optimizer on the same network does not
    share statistics with the first.
    """
    net: Mlp
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_index: int = 0
    own_moments: bool = False
    moments: Optional[Moments] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.own_moments:
            self.moments = [(np.zeros_like(value), np.zeros_like(value))
                            for _, value, _, _, _ in self.net.parameters()]

    def step(self) -> None:
        self.step_index += 1
        adam_step(self.net, self.lr, self.beta1, self.beta2, self.eps, self.step_index, self.moments)


def cosine_decay(base: float, final: float, iteration: int, total: int) -> float:
    """Learning rate at ``iteration`` of a half-cosine from ``base`` down to ``final``."""
    if total <= 1:
        return base
    progress = min(iteration, total - 1) / (total - 1)
    return final + 0.5 * (base - final) * (1.0 + np.cos(np.pi * progress))
