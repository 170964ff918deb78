"""Dense leaky-ReLU networks with hand-written reverse-mode gradients and Adam.

Layout convention: a batch is a 2-D array with one sample per row. Weight
matrix ``i`` has shape ``(layer_sizes[i + 1], layer_sizes[i])`` so a layer
computes ``a @ W.T + b``. Every hidden layer applies a leaky ReLU with slope
``alpha``; the output layer is linear.
"""

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from mgan.errors import ConfigurationError, ContractError, NumericalError, ShapeError

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.2
CHECKPOINT_MAGIC = b'MGAN'
CHECKPOINT_VERSION = 1

ParamList = list[np.ndarray]
BatchLoss = Callable[[np.ndarray], tuple[float, np.ndarray]]


def validate_layer_sizes(layer_sizes) -> list[str]:
    """Return the problems with a layer size list (empty when valid)."""
    errors: list[str] = []
    try:
        sizes = list(layer_sizes)
    except TypeError:
        return ['layer_sizes must be a sequence of integers']
    if len(sizes) < 2:
        errors.append('layer_sizes needs at least an input and an output size')
    for size in sizes:
        if isinstance(size, bool) or not isinstance(size, (int, np.integer)):
            errors.append(f'layer size {size!r} is not an integer')
        elif size < 1:
            errors.append(f'layer size {size} must be positive')
    return errors


@dataclass
class DenseNetwork:
    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    alpha: float = LEAKY_SLOPE

    def __post_init__(self):
        errors = validate_layer_sizes(self.layer_sizes)
        if errors:
            raise ConfigurationError.from_errors('Invalid network', errors)
        self.layer_sizes = [int(s) for s in self.layer_sizes]
        if len(self.weights) != self.num_layers or len(self.biases) != self.num_layers:
            raise ShapeError('weights/biases count does not match layer_sizes')
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_sizes[i + 1], self.layer_sizes[i])
            if W.shape != expected:
                raise ShapeError(f'layer {i} weight has shape {W.shape}, expected {expected}')
            if b.shape != (self.layer_sizes[i + 1],):
                raise ShapeError(f'layer {i} bias has shape {b.shape}')

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> ParamList:
        """Parameter arrays in the order W0, b0, W1, b1, ... (live references)."""
        params: ParamList = []
        for W, b in zip(self.weights, self.biases):
            params.extend((W, b))
        return params

    def copy(self) -> 'DenseNetwork':
        return DenseNetwork(
            list(self.layer_sizes),
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.alpha,
        )

    def __call__(self, inputs: np.ndarray) -> np.ndarray:
        return forward(self, inputs)


@dataclass
class ForwardCache:
    activations: list[np.ndarray]
    pre_activations: list[np.ndarray]


def init_network(layer_sizes, rng_seed: int, alpha: float = LEAKY_SLOPE) -> DenseNetwork:
    """He-style initialization scaled for the leaky-ReLU gain; biases start at zero."""
    errors = validate_layer_sizes(layer_sizes)
    if errors:
        raise ConfigurationError.from_errors('Invalid layer_sizes', errors)
    rng = np.random.default_rng(rng_seed)
    sizes = [int(s) for s in layer_sizes]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        std = np.sqrt(2.0 / ((1.0 + alpha ** 2) * fan_in))
        weights.append(rng.normal(0.0, std, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return DenseNetwork(sizes, weights, biases, alpha)


def _as_batch(net: DenseNetwork, inputs) -> tuple[np.ndarray, bool]:
    arr = np.asarray(inputs, dtype=np.float64)
    is_vector = arr.ndim == 1
    if is_vector:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != net.input_dim:
        raise ShapeError(f'network expects inputs of width {net.input_dim}, got shape {np.shape(inputs)}')
    return arr, is_vector


def _slope(pre: np.ndarray, alpha: float) -> np.ndarray:
    # the kink at 0 takes the alpha side
    return np.where(pre > 0.0, 1.0, alpha)


def forward_with_cache(net: DenseNetwork, batch: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    a, _ = _as_batch(net, batch)
    activations = [a]
    pre_activations = []
    last = net.num_layers - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        h = a @ W.T + b
        if not np.all(np.isfinite(h)):
            raise NumericalError('non-finite pre-activation in forward pass', layer=i)
        pre_activations.append(h)
        a = h if i == last else np.where(h > 0.0, h, net.alpha * h)
        activations.append(a)
    return a, ForwardCache(activations, pre_activations)


def forward(net: DenseNetwork, inputs) -> np.ndarray:
    """Evaluate the network on a vector or a batch of row-samples."""
    batch, is_vector = _as_batch(net, inputs)
    out, _ = forward_with_cache(net, batch)
    return out[0] if is_vector else out


def backward(net: DenseNetwork, cache: ForwardCache, grad_output: np.ndarray) -> tuple[ParamList, np.ndarray]:
    """Pull ``grad_output`` (dL/d outputs, one row per sample) back to parameters and inputs."""
    delta = np.asarray(grad_output, dtype=np.float64)
    expected = cache.activations[-1].shape
    if delta.shape != expected:
        raise ShapeError(f'output gradient has shape {delta.shape}, expected {expected}')
    grads: ParamList = [None] * (2 * net.num_layers)
    for i in reversed(range(net.num_layers)):
        if i < net.num_layers - 1:
            delta = delta * _slope(cache.pre_activations[i], net.alpha)
        dW = delta.T @ cache.activations[i]
        db = delta.sum(axis=0)
        if not (np.all(np.isfinite(dW)) and np.all(np.isfinite(db))):
            raise NumericalError('non-finite gradient in backward pass', layer=i)
        grads[2 * i] = dW
        grads[2 * i + 1] = db
        delta = delta @ net.weights[i]
    return grads, delta


def grad_params(net: DenseNetwork, inputs, loss: BatchLoss) -> tuple[float, ParamList]:
    """Value and parameter gradient of ``loss(outputs)``.

    ``loss`` receives the output batch and returns ``(value, dvalue/doutputs)``.
    """
    batch, _ = _as_batch(net, inputs)
    if batch.shape[0] == 0:
        raise ContractError('grad_params needs a non-empty batch')
    out, cache = forward_with_cache(net, batch)
    value, grad_out = loss(out)
    if not np.isfinite(value):
        raise NumericalError('loss is not finite', layer=net.num_layers - 1)
    grads, _ = backward(net, cache, grad_out)
    return float(value), grads


def _require_scalar_output(net: DenseNetwork) -> None:
    if net.output_dim != 1:
        raise ContractError(f'input gradients need a scalar-output network, got output width {net.output_dim}')


def grad_input(net: DenseNetwork, inputs) -> np.ndarray:
    """Gradient of a scalar-output network with respect to its input (row-wise for batches)."""
    _require_scalar_output(net)
    batch, is_vector = _as_batch(net, inputs)
    out, cache = forward_with_cache(net, batch)
    _, grad_in = backward(net, cache, np.ones_like(out))
    return grad_in[0] if is_vector else grad_in


def grad_params_through_input_grad(net: DenseNetwork, inputs, directions: np.ndarray) -> tuple[np.ndarray, ParamList]:
    """Input gradients g_j = grad f(z_j) and the parameter gradient of sum_j <v_j, g_j>.

    Leaky-ReLU networks are piecewise linear, so g is multilinear in the
    weights with the activation pattern held fixed; biases only move the
    pattern and get zero gradient.
    """
    _require_scalar_output(net)
    batch, _ = _as_batch(net, inputs)
    directions = np.asarray(directions, dtype=np.float64)
    if directions.shape != batch.shape:
        raise ShapeError(f'directions have shape {directions.shape}, expected {batch.shape}')
    _, cache = forward_with_cache(net, batch)
    L = net.num_layers
    slopes = [_slope(cache.pre_activations[i], net.alpha) for i in range(L - 1)]

    deltas: list[np.ndarray] = [None] * L
    d = np.ones((batch.shape[0], 1))
    deltas[L - 1] = d
    for i in reversed(range(L - 1)):
        d = (d @ net.weights[i + 1]) * slopes[i]
        deltas[i] = d
    input_grads = deltas[0] @ net.weights[0]

    grads: ParamList = []
    r = directions
    for i in range(L):
        grads.append(deltas[i].T @ r)
        grads.append(np.zeros_like(net.biases[i]))
        if i < L - 1:
            r = (r @ net.weights[i].T) * slopes[i]
    return input_grads, grads


# ----------------------------------------------------------------------
# Adam
# ----------------------------------------------------------------------
@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: ParamList = field(default_factory=list)
    v: ParamList = field(default_factory=list)

    @classmethod
    def for_params(cls, params: ParamList, **hyper) -> 'AdamState':
        state = cls(**hyper)
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
        return state


def adam_step(state: AdamState, params: ParamList, grads: ParamList) -> tuple[ParamList, AdamState]:
    """Bias-corrected Adam update. Parameters are updated in place and returned."""
    if len(params) != len(grads):
        raise ContractError(f'{len(params)} parameters but {len(grads)} gradients')
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ContractError('optimizer state does not match the parameter list')
    for p, g, m in zip(params, grads, state.m):
        if p.shape != np.shape(g) or p.shape != m.shape:
            raise ContractError(f'shape mismatch: param {p.shape}, grad {np.shape(g)}, moment {m.shape}')

    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    step_size = state.lr / bc1
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= step_size * m / (np.sqrt(v / bc2) + state.eps)
    return params, state


# ----------------------------------------------------------------------
# Checkpoints
# ----------------------------------------------------------------------
def network_to_bytes(net: DenseNetwork) -> bytes:
    header = CHECKPOINT_MAGIC + struct.pack('<II', CHECKPOINT_VERSION, len(net.layer_sizes))
    header += struct.pack(f'<{len(net.layer_sizes)}I', *net.layer_sizes)
    body = b''.join(
        np.ascontiguousarray(W, dtype='<f8').tobytes() + np.ascontiguousarray(b, dtype='<f8').tobytes()
        for W, b in zip(net.weights, net.biases)
    )
    return header + body


def network_from_bytes(payload: bytes, alpha: float = LEAKY_SLOPE) -> DenseNetwork:
    if payload[:4] != CHECKPOINT_MAGIC:
        raise ConfigurationError('not a network checkpoint (bad magic bytes)')
    version, count = struct.unpack_from('<II', payload, 4)
    if version != CHECKPOINT_VERSION:
        raise ConfigurationError(f'unsupported checkpoint version {version}')
    sizes = list(struct.unpack_from(f'<{count}I', payload, 12))
    offset = 12 + 4 * count
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = np.frombuffer(payload, dtype='<f8', count=fan_out * fan_in, offset=offset)
        offset += 8 * fan_out * fan_in
        b = np.frombuffer(payload, dtype='<f8', count=fan_out, offset=offset)
        offset += 8 * fan_out
        weights.append(W.reshape(fan_out, fan_in).astype(np.float64))
        biases.append(b.astype(np.float64))
    if offset != len(payload):
        raise ConfigurationError('checkpoint has trailing or missing bytes')
    return DenseNetwork(sizes, weights, biases, alpha)


def save_network(net: DenseNetwork, path) -> Path:
    path = Path(path)
    path.write_bytes(network_to_bytes(net))
    logger.debug('wrote network checkpoint %s', path)
    return path


def load_network(path, alpha: float = LEAKY_SLOPE) -> DenseNetwork:
    return network_from_bytes(Path(path).read_bytes(), alpha)
