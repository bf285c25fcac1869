from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from autodiff import Node, Tape, Tensor, as_tensor, check_finite
from nica_errors import ConfigurationError, DimensionError, NumericError

import logging
logging.basicConfig(level = logging.INFO)
logger = logging.getLogger("mlp")

DEFAULT_LEAKY_SLOPE = 0.2

ACTIVATIONS = ["identity", "tanh", "leaky_relu", "abs", "leaky_soft"]


def softplus(x: Tensor) -> Tensor:
    return np.logaddexp(0.0, x)


def sigmoid(x: Tensor) -> Tensor:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def leaky_soft(x: Tensor, alpha: float) -> Tensor:
    '''smooth, strictly increasing: alpha*x + (1-alpha)*softplus(x)'''
    return alpha * x + (1.0 - alpha) * softplus(x)


def leaky_soft_derivative(x: Tensor, alpha: float) -> Tensor:
    # in (alpha, 1) everywhere
    return alpha + (1.0 - alpha) * sigmoid(x)


def leaky_soft_log_derivative(x: Tensor, alpha: float) -> Tensor:
    return np.log(leaky_soft_derivative(x, alpha))


def leaky_soft_log_derivative_grad(x: Tensor, alpha: float) -> Tensor:
    sig = sigmoid(x)
    return (1.0 - alpha) * sig * (1.0 - sig) / leaky_soft_derivative(x, alpha)


def activation_pair(name: str, alpha: float = DEFAULT_LEAKY_SLOPE) -> Tuple[Callable, Callable]:
    '''Return (fn, derivative) for an activation name'''
    if name == "identity":
        return (lambda x: x, lambda x: np.ones_like(x))
    if name == "tanh":
        return (np.tanh, lambda x: 1.0 - np.tanh(x) ** 2)
    if name == "leaky_relu":
        return (lambda x: np.where(x > 0, x, alpha * x),
                lambda x: np.where(x > 0, 1.0, alpha))
    if name == "abs":
        return (np.abs, np.sign)
    if name == "leaky_soft":
        return (lambda x: leaky_soft(x, alpha), lambda x: leaky_soft_derivative(x, alpha))
    raise ConfigurationError(f"ERROR: unknown activation '{name}', expected one of {ACTIVATIONS}")


class Layer:
    weight: Tensor      # (input_dim, output_dim)
    bias: Tensor        # (1, output_dim)
    activation: str     # one of ACTIVATIONS
    alpha: float        # leaky slope, used by leaky_relu and leaky_soft

    def __init__(self, weight, bias, activation: str = "identity", alpha: float = DEFAULT_LEAKY_SLOPE):
        self.weight = as_tensor(weight, "weight")
        self.bias = as_tensor(bias, "bias")
        self.activation = activation
        self.alpha = float(alpha)
        self.validate_fields()

    def validate_fields(self):
        if self.bias.shape != (1, self.weight.shape[1]):
            raise DimensionError(f"ERROR: bias shape {self.bias.shape} does not match weight shape {self.weight.shape}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"ERROR: unknown activation '{self.activation}'")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError(f"ERROR: leaky slope {self.alpha} outside (0, 1)")

    def as_dict(self) -> dict:
        return {
            "weight": self.weight.tolist(),
            "bias": self.bias.ravel().tolist(),
            "activation": self.activation,
            "alpha": self.alpha
        }


class Mlp:
    '''
    A chain of dense layers. Parameters are exposed by name
    ("<name>.<layer>.weight", "<name>.<layer>.bias") so several networks
    can share one Tape and one AdamState. Training never mutates an Mlp,
    it builds a new one with with_parameters().
    '''
    name: str
    layers: List[Layer]

    def __init__(self, layers: Sequence[Layer], name: str = "mlp"):
        self.layers = list(layers)
        self.name = name
        self.validate_fields()

    def validate_fields(self):
        if len(self.layers) == 0:
            raise DimensionError(f"ERROR: {self.name} has no layers")
        for i in range(1, len(self.layers)):
            prev_out = self.layers[i - 1].weight.shape[1]
            this_in = self.layers[i].weight.shape[0]
            if prev_out != this_in:
                raise DimensionError(f"ERROR: {self.name} layer {i} expects {this_in} inputs but layer {i - 1} emits {prev_out}")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    @classmethod
    def init_random(cls, dims: Sequence[int], activations: Sequence[str], rng: np.random.Generator,
                    name: str = "mlp", alpha: float = DEFAULT_LEAKY_SLOPE) -> "Mlp":
        '''
        dims = [input_dim, hidden_1, ..., output_dim]; one activation per layer.
        Weights are scaled for the activation's gain, biases start at zero.
        '''
        if len(activations) != len(dims) - 1:
            raise DimensionError(f"ERROR: {len(dims) - 1} layers need {len(dims) - 1} activations not {len(activations)}")
        layers = []
        for fan_in, fan_out, activation in zip(dims[:-1], dims[1:], activations):
            gain = 2.0 / (1.0 + alpha ** 2) if activation in ("leaky_relu", "abs") else 1.0
            weight = rng.standard_normal((fan_in, fan_out)) * np.sqrt(gain / fan_in)
            layers.append(Layer(weight, np.zeros((1, fan_out)), activation, alpha))
        return cls(layers, name)

    def param_name(self, index: int, kind: str) -> str:
        return f"{self.name}.{index}.{kind}"

    def parameters(self) -> Dict[str, Tensor]:
        params = {}
        for i, layer in enumerate(self.layers):
            params[self.param_name(i, "weight")] = layer.weight
            params[self.param_name(i, "bias")] = layer.bias
        return params

    def with_parameters(self, params: Dict[str, Tensor]) -> "Mlp":
        layers = []
        for i, layer in enumerate(self.layers):
            weight = params.get(self.param_name(i, "weight"), layer.weight)
            bias = params.get(self.param_name(i, "bias"), layer.bias)
            layers.append(Layer(weight, bias, layer.activation, layer.alpha))
        return Mlp(layers, self.name)

    def as_dict(self) -> dict:
        return {"name": self.name, "layers": [layer.as_dict() for layer in self.layers]}

    @classmethod
    def from_dict(cls, input_dict: dict) -> "Mlp":
        layers = [Layer(d["weight"], [d["bias"]], d["activation"], d["alpha"]) for d in input_dict["layers"]]
        return cls(layers, input_dict["name"])


def forward(mlp: Mlp, batch: Union[Tensor, Node], tape: Optional[Tape] = None) -> Union[Tensor, Node]:
    '''
    Evaluate mlp on a (batch_size, input_dim) batch. Without a tape the
    result is a plain Tensor; with a tape the computation is recorded and
    the output Node is returned.
    '''
    if isinstance(batch, Node):
        width = batch.shape[1]
    else:
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 2:
            raise DimensionError(f"ERROR: {mlp.name} expects a 2-D batch not {batch.ndim}-D")
        width = batch.shape[1]
    if width != mlp.input_dim:
        raise DimensionError(f"ERROR: {mlp.name} expects {mlp.input_dim} input columns not {width}")

    if tape is None:
        h = batch
        for i, layer in enumerate(mlp.layers):
            fn, _ = activation_pair(layer.activation, layer.alpha)
            h = fn(h @ layer.weight + layer.bias)
            if not np.all(np.isfinite(h)):
                raise NumericError(f"ERROR: non-finite activations in {mlp.name} layer {i}")
        return h

    h = batch if isinstance(batch, Node) else tape.constant(batch, f"{mlp.name}.input")
    for i, layer in enumerate(mlp.layers):
        weight = tape.parameter(mlp.param_name(i, "weight"), layer.weight)
        bias = tape.parameter(mlp.param_name(i, "bias"), layer.bias)
        pre = tape.add(tape.matmul(h, weight, f"{mlp.name}.{i}.matmul"), bias, f"{mlp.name}.{i}.add")
        if layer.activation == "identity":
            h = pre
        else:
            fn, dfn = activation_pair(layer.activation, layer.alpha)
            h = tape.elementwise(pre, fn, dfn, f"{mlp.name} layer {i} {layer.activation}")
    return h
