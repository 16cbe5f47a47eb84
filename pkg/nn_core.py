"""
nn_core.py

Minimal feed-forward neural network engine used by the encoders and decoders.
- Dense layers with ReLU, identity ("linear") and softmax activations
- Whole-vector power normalization layer (batch average or per codeword)
- Forward pass with cached activations, backward pass returning parameter and input gradients
- Fused softmax / categorical cross-entropy loss
- SGD and Adam optimizers
- Central finite-difference gradient checker
All arithmetic is done in 64-bit floating point.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigurationError, NumericalError, UsageError


LAYER_KINDS = ("dense", "relu", "linear", "batch_power_norm", "softmax")
POWER_MODES = ("batch_average", "per_codeword")
FORWARD_MODES = ("train", "infer")
OPTIMIZER_KINDS = ("sgd", "adam")

PROBABILITY_FLOOR = 1e-12
DEFAULT_NORM_MOMENTUM = 0.99
SIMPLEX_TOLERANCE = 1e-6

logger = logging.getLogger("NNCore")


def as_tensor2(values, name: str = "input") -> np.ndarray:
    """
    Convert values to a 2-D float64 array (rows = batch, cols = features).
    A 1-D vector is promoted to a single row.
    Raises:
        UsageError: if the result is empty or has more than two dimensions.
    """
    array = np.asarray(values, dtype=np.float64)
    if array.ndim == 1:
        array = array.reshape(1, -1)
    if array.ndim != 2 or array.shape[0] < 1 or array.shape[1] < 1:
        raise UsageError(f"{name} must be a non-empty 2-D tensor, got shape {array.shape}")
    return array


# -------------------------------------------------------------
# Layer description and parameters
# -------------------------------------------------------------

@dataclass(frozen=True)
class LayerSpec:
    """Kind and widths of one layer. Only dense layers change the width."""

    kind: str
    in_width: int
    out_width: int
    power_mode: str = "batch_average"

    def __post_init__(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise ConfigurationError(f"Unknown layer kind '{self.kind}'", key="kind")
        if self.in_width < 1 or self.out_width < 1:
            raise ConfigurationError(
                f"Layer widths must be >= 1, got {self.in_width} -> {self.out_width}")
        if self.kind != "dense" and self.out_width != self.in_width:
            raise ConfigurationError(
                f"{self.kind} layer must keep its width ({self.in_width} != {self.out_width})")
        if self.power_mode not in POWER_MODES:
            raise ConfigurationError(f"Unknown power mode '{self.power_mode}'", key="power_mode")


@dataclass
class LayerParams:
    """Trainable weights of a dense layer or the running statistic of a power norm layer."""

    weights: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None
    norm_running_scale: float = 1.0
    norm_momentum: float = DEFAULT_NORM_MOMENTUM

    def copy(self) -> "LayerParams":
        return LayerParams(
            weights=None if self.weights is None else self.weights.copy(),
            bias=None if self.bias is None else self.bias.copy(),
            norm_running_scale=self.norm_running_scale,
            norm_momentum=self.norm_momentum,
        )


@dataclass
class Network:
    """
    An ordered stack of layers. Parameter arrays are addressed by
    '<layer index>.weights' and '<layer index>.bias' keys.
    """

    layers: List[LayerSpec]
    params: List[LayerParams]

    def __post_init__(self) -> None:
        if not self.layers:
            raise ConfigurationError("A network needs at least one layer")
        if len(self.layers) != len(self.params):
            raise ConfigurationError(
                f"{len(self.layers)} layer specs but {len(self.params)} parameter sets")
        for index, (spec, params) in enumerate(zip(self.layers, self.params)):
            if index > 0 and self.layers[index - 1].out_width != spec.in_width:
                raise ConfigurationError(
                    f"Layer {index} expects width {spec.in_width} but layer {index - 1} "
                    f"produces {self.layers[index - 1].out_width}")
            if spec.kind == "dense":
                if params.weights is None or params.weights.shape != (spec.in_width, spec.out_width):
                    raise ConfigurationError(
                        f"Layer {index} weights must have shape {(spec.in_width, spec.out_width)}")
                if params.bias is None or params.bias.shape != (spec.out_width,):
                    raise ConfigurationError(f"Layer {index} bias must have shape {(spec.out_width,)}")
            if spec.kind == "batch_power_norm":
                if not params.norm_running_scale > 0:
                    raise ConfigurationError(f"Layer {index} running scale must be positive")
                if not 0 < params.norm_momentum <= 1:
                    raise ConfigurationError(f"Layer {index} momentum must lie in (0, 1]")

    @property
    def in_width(self) -> int:
        return self.layers[0].in_width

    @property
    def out_width(self) -> int:
        return self.layers[-1].out_width

    def copy(self) -> "Network":
        return Network(list(self.layers), [p.copy() for p in self.params])

    def parameters(self) -> Dict[str, np.ndarray]:
        """Live views of every trainable array; in-place updates change the network."""
        arrays = {}
        for index, (spec, params) in enumerate(zip(self.layers, self.params)):
            if spec.kind == "dense":
                arrays[f"{index}.weights"] = params.weights
                arrays[f"{index}.bias"] = params.bias
        return arrays

    def power_norm_indices(self) -> List[int]:
        return [i for i, spec in enumerate(self.layers) if spec.kind == "batch_power_norm"]


def dense_params(in_width: int, out_width: int, rng: np.random.Generator) -> LayerParams:
    """Fan-balanced uniform initialization: U(-sqrt(6/(in+out)), +sqrt(6/(in+out))), zero bias."""
    limit = np.sqrt(6.0 / (in_width + out_width))
    return LayerParams(
        weights=rng.uniform(-limit, limit, size=(in_width, out_width)),
        bias=np.zeros(out_width),
    )


def build_network(blueprint: Sequence[Tuple[str, int]], in_width: int,
                  rng: np.random.Generator, power_mode: str = "batch_average") -> Network:
    """
    Build a network from (kind, width) pairs. The width of non-dense layers is ignored.
    Args:
        blueprint: e.g. [("dense", 32), ("relu", 0), ("dense", 8), ("linear", 0)]
        in_width: width of the network input.
        rng: generator used for dense initialization.
        power_mode: normalization policy for batch_power_norm layers.
    """
    layers, params = [], []
    width = in_width
    for kind, out_width in blueprint:
        if kind == "dense":
            layers.append(LayerSpec("dense", width, out_width))
            params.append(dense_params(width, out_width, rng))
            width = out_width
        else:
            layers.append(LayerSpec(kind, width, width, power_mode=power_mode))
            params.append(LayerParams())
    return Network(layers, params)


# -------------------------------------------------------------
# Gradients and caches
# -------------------------------------------------------------

@dataclass
class GradientSet:
    """Gradients keyed exactly like Network.parameters()."""

    grads: Dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, network: Network) -> "GradientSet":
        return cls({key: np.zeros_like(value) for key, value in network.parameters().items()})

    def __getitem__(self, key: str) -> np.ndarray:
        return self.grads[key]

    def keys(self):
        return self.grads.keys()

    def __add__(self, other: "GradientSet") -> "GradientSet":
        if set(self.grads) != set(other.grads):
            raise UsageError("Cannot add gradient sets of different networks")
        return GradientSet({key: self.grads[key] + other.grads[key] for key in self.grads})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(value)) for value in self.grads.values())

    def max_abs(self) -> float:
        return max((float(np.max(np.abs(v))) for v in self.grads.values()), default=0.0)


@dataclass
class ForwardCache:
    """Per-layer inputs/outputs and normalization statistics recorded by forward()."""

    mode: str
    inputs: List[np.ndarray] = field(default_factory=list)
    outputs: List[np.ndarray] = field(default_factory=list)
    norm_stats: Dict[int, Tuple[str, np.ndarray]] = field(default_factory=dict)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    exps = np.exp(shifted)
    return exps / np.sum(exps, axis=1, keepdims=True)


def _power_norm_forward(index: int, spec: LayerSpec, params: LayerParams, x: np.ndarray,
                        mode: str, track_running: bool) -> Tuple[np.ndarray, Tuple[str, np.ndarray]]:
    width = spec.in_width
    if spec.power_mode == "per_codeword":
        norms = np.sqrt(np.sum(x * x, axis=1, keepdims=True))
        if np.any(norms == 0):
            raise NumericalError(f"Zero-norm row entering power norm layer {index}", layer_index=index)
        return x * (np.sqrt(width) / norms), ("per_codeword", norms)

    if mode == "infer":
        scale = params.norm_running_scale
        return x / scale, ("fixed", np.asarray(scale))

    if x.shape[0] < 2:
        raise UsageError(f"Power norm layer {index} needs a batch of at least 2 rows in train mode")
    scale = float(np.sqrt(np.mean(np.sum(x * x, axis=1)) / width))
    if not scale > 0 or not np.isfinite(scale):
        raise NumericalError(f"Degenerate batch power {scale} at layer {index}", layer_index=index)
    if track_running:
        momentum = params.norm_momentum
        params.norm_running_scale = momentum * params.norm_running_scale + (1.0 - momentum) * scale
    return x / scale, ("batch", np.asarray(scale))


def forward(network: Network, inputs, mode: str = "infer",
            track_running: bool = True) -> Tuple[np.ndarray, ForwardCache]:
    """
    Run the network on a batch.
    Args:
        network: layers and parameters.
        inputs: batch of shape (rows, network.in_width).
        mode: 'train' uses batch statistics in power norm layers, 'infer' the running scale.
        track_running: in train mode, update the running scale by exponential moving average.
    Returns:
        (output batch, cache for backward()).
    Raises:
        ConfigurationError: input width does not match the first layer.
        NumericalError: a layer produced a non-finite value (carries layer_index).
    """
    if mode not in FORWARD_MODES:
        raise UsageError(f"Unknown forward mode '{mode}'")
    x = as_tensor2(inputs)
    if x.shape[1] != network.in_width:
        raise ConfigurationError(
            f"Input width {x.shape[1]} does not match network input width {network.in_width}")

    cache = ForwardCache(mode=mode)
    for index, (spec, params) in enumerate(zip(network.layers, network.params)):
        cache.inputs.append(x)
        if spec.kind == "dense":
            out = x @ params.weights + params.bias
        elif spec.kind == "relu":
            out = np.maximum(x, 0.0)
        elif spec.kind == "linear":
            out = x
        elif spec.kind == "softmax":
            out = _softmax(x)
        else:
            out, stats = _power_norm_forward(index, spec, params, x, mode, track_running)
            cache.norm_stats[index] = stats
        if not np.all(np.isfinite(out)):
            logger.error(f"Non-finite activation at layer {index} ({spec.kind})")
            raise NumericalError(f"Non-finite activation at layer {index} ({spec.kind})",
                                 layer_index=index)
        cache.outputs.append(out)
        x = out
    return x, cache


def relu_margin(network: Network, inputs) -> float:
    """Smallest |pre-activation| entering any ReLU layer for this batch (train mode, running scale untouched)."""
    _, cache = forward(network, inputs, mode="train", track_running=False)
    margins = [float(np.min(np.abs(cache.inputs[i]))) for i, spec in enumerate(network.layers)
               if spec.kind == "relu"]
    return min(margins, default=float("inf"))


def backward(network: Network, cache: Optional[ForwardCache], output_gradient,
             from_logits: bool = False) -> Tuple[GradientSet, np.ndarray]:
    """
    Backpropagate an output gradient through the network.
    Args:
        network: the network used for the matching forward() call.
        cache: the ForwardCache returned by that call.
        output_gradient: dLoss/dOutput, same shape as the forward output.
        from_logits: the gradient is already taken w.r.t. the input of the final
            softmax layer (fused cross-entropy); the softmax layer is skipped.
    Returns:
        (parameter gradients, gradient w.r.t. the network input).
    """
    if not isinstance(cache, ForwardCache) or len(cache.inputs) != len(network.layers):
        raise UsageError("backward() needs the cache of a matching forward() call")
    g = as_tensor2(output_gradient, name="output_gradient")
    last = len(network.layers) - 1
    if from_logits:
        if network.layers[-1].kind != "softmax":
            raise UsageError("from_logits requires a network ending in a softmax layer")
        last -= 1
    if g.shape != cache.outputs[-1].shape:
        raise UsageError(f"Output gradient shape {g.shape} does not match output {cache.outputs[-1].shape}")

    grads: Dict[str, np.ndarray] = {}
    for index in range(last, -1, -1):
        spec, params = network.layers[index], network.params[index]
        x = cache.inputs[index]
        if spec.kind == "dense":
            grads[f"{index}.weights"] = x.T @ g
            grads[f"{index}.bias"] = np.sum(g, axis=0)
            g = g @ params.weights.T
        elif spec.kind == "relu":
            g = g * (x > 0)
        elif spec.kind == "linear":
            pass
        elif spec.kind == "softmax":
            y = cache.outputs[index]
            g = y * (g - np.sum(g * y, axis=1, keepdims=True))
        else:
            policy, stat = cache.norm_stats[index]
            if policy == "per_codeword":
                norms = stat
                projected = np.sum(g * x, axis=1, keepdims=True) / (norms * norms)
                g = (np.sqrt(spec.in_width) / norms) * (g - x * projected)
            elif policy == "batch":
                scale = float(stat)
                rows = x.shape[0]
                coupling = np.sum(g * x) / (scale ** 3 * spec.in_width * rows)
                g = g / scale - x * coupling
            else:
                g = g / float(stat)

    for index, spec in enumerate(network.layers):
        if spec.kind == "dense" and f"{index}.weights" not in grads:
            grads[f"{index}.weights"] = np.zeros_like(network.params[index].weights)
            grads[f"{index}.bias"] = np.zeros_like(network.params[index].bias)
    return GradientSet(grads), g


# -------------------------------------------------------------
# Loss
# -------------------------------------------------------------

@dataclass
class LossResult:
    loss: float
    logit_gradient: np.ndarray
    saturated: int = 0


def cross_entropy_loss_and_grad(posterior, targets) -> LossResult:
    """
    Mean categorical cross-entropy of a softmax posterior and its gradient w.r.t. the logits.
    The gradient row is (posterior - one_hot(target)) / batch_size.
    Target probabilities below PROBABILITY_FLOOR are clamped and counted in `saturated`.
    """
    probs = as_tensor2(posterior, name="posterior")
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    rows, width = probs.shape
    if targets.shape[0] != rows:
        raise UsageError(f"{targets.shape[0]} targets for a batch of {rows} rows")
    if np.any(targets < 0) or np.any(targets >= width):
        raise UsageError(f"Target index out of range [0, {width})")
    if np.any(np.abs(np.sum(probs, axis=1) - 1.0) > SIMPLEX_TOLERANCE):
        raise UsageError("Posterior rows must sum to 1")

    picked = probs[np.arange(rows), targets]
    saturated = int(np.count_nonzero(picked < PROBABILITY_FLOOR))
    if saturated:
        logger.warning(f"{saturated} target probabilities clamped to {PROBABILITY_FLOOR}")
    loss = float(np.mean(-np.log(np.maximum(picked, PROBABILITY_FLOOR))))

    gradient = probs.copy()
    gradient[np.arange(rows), targets] -= 1.0
    return LossResult(loss=loss, logit_gradient=gradient / rows, saturated=saturated)


# -------------------------------------------------------------
# Optimizers
# -------------------------------------------------------------

@dataclass
class OptimizerState:
    """Settings and accumulators of one optimizer attached to one network."""

    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0

    def __post_init__(self) -> None:
        if self.kind not in OPTIMIZER_KINDS:
            raise ConfigurationError(f"Unknown optimizer '{self.kind}'", key="optimizer")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be > 0", key="learning_rate")
        if not 0 < self.beta1 < 1:
            raise ConfigurationError("beta1 must lie in (0, 1)", key="beta1")
        if not 0 < self.beta2 < 1:
            raise ConfigurationError("beta2 must lie in (0, 1)", key="beta2")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be > 0", key="epsilon")


def optimizer_step(network: Network, grads: GradientSet,
                   state: OptimizerState) -> Tuple[Network, OptimizerState]:
    """
    Apply one descent step in place.
    sgd:  p <- p - lr * g
    adam: bias-corrected first/second moment update.
    Raises:
        NumericalError: a gradient entry is not finite (parameters are left untouched).
    """
    params = network.parameters()
    if set(params) != set(grads.keys()):
        raise UsageError("Gradient set does not match the network parameters")
    for key, value in params.items():
        if grads[key].shape != value.shape:
            raise UsageError(f"Gradient '{key}' has shape {grads[key].shape}, expected {value.shape}")
    if not grads.is_finite():
        logger.error("Non-finite gradient, optimizer step skipped")
        raise NumericalError("Non-finite gradient passed to optimizer_step")

    state.step_count += 1
    if state.kind == "sgd":
        for key, value in params.items():
            value -= state.learning_rate * grads[key]
        return network, state

    bc1 = 1.0 - state.beta1 ** state.step_count
    bc2 = 1.0 - state.beta2 ** state.step_count
    step_size = state.learning_rate / bc1
    for key, value in params.items():
        g = grads[key]
        if key not in state.first_moment:
            state.first_moment[key] = np.zeros_like(value)
            state.second_moment[key] = np.zeros_like(value)
        m, v = state.first_moment[key], state.second_moment[key]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        value -= step_size * m / (np.sqrt(v / bc2) + state.epsilon)
    return network, state


# -------------------------------------------------------------
# Finite-difference oracle
# -------------------------------------------------------------

def _loss_and_grad_for_check(network: Network, inputs: np.ndarray,
                         targets: np.ndarray) -> Tuple[float, Optional[GradientSet]]:
    outputs, cache = forward(network, inputs, mode="train", track_running=False)
    if network.layers[-1].kind == "softmax":
        result = cross_entropy_loss_and_grad(outputs, targets)
        grads, _ = backward(network, cache, result.logit_gradient, from_logits=True)
        return result.loss, grads
    # networks without a softmax head are checked through a linear read-out of one column per row
    rows, width = outputs.shape
    columns = targets % width
    readout = np.zeros_like(outputs)
    readout[np.arange(rows), columns] = 1.0 / rows
    grads, _ = backward(network, cache, readout)
    return float(np.sum(outputs * readout)), grads


def finite_difference_check(network: Network, inputs, targets,
                            perturbation: float = 1e-5) -> float:
    """
    Compare analytic gradients with central differences on a copy of the network.
    Power norm layers use batch statistics with the running-scale update disabled.
    Returns:
        max over all parameters of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    if not perturbation > 0:
        raise UsageError("perturbation must be > 0")
    net = network.copy()
    x = as_tensor2(inputs)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    _, analytic = _loss_and_grad_for_check(net, x, targets)

    worst = 0.0
    for key, array in net.parameters().items():
        flat = array.reshape(-1)
        grad_flat = analytic[key].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + perturbation
            plus, _ = _loss_and_grad_for_check(net, x, targets)
            flat[i] = original - perturbation
            minus, _ = _loss_and_grad_for_check(net, x, targets)
            flat[i] = original
            numeric = (plus - minus) / (2.0 * perturbation)
            a = grad_flat[i]
            error = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, error)
    logger.debug(f"Finite-difference check: max relative error {worst:.3e}")
    return worst
