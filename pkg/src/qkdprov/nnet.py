"""Dense feed-forward networks with exact reverse-mode gradients and Adam.

Deliberately tiny: desk-scale policy and Q networks only need matrix
multiplies, two activations, and a bias-corrected moment optimizer. All
arithmetic is float64 so training runs are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_VERSION = 1

_ACTIVATIONS = ("relu", "tanh", "linear")


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int
    hidden_activation: str = "relu"
    output_activation: str = "linear"

    def __post_init__(self):
        if self.hidden_activation not in _ACTIVATIONS or \
           self.output_activation not in _ACTIVATIONS:
            raise ValueError(f"activations must be one of {_ACTIVATIONS}")
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("layer widths must be positive")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = (self.input_dim, *self.hidden, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))


@dataclass
class ParamSet:
    """Weights and biases for one network; treat shared instances as read-only."""

    arch: Architecture
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "ParamSet":
        return ParamSet(self.arch, [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.weights + self.biases])


def init_params(arch: Architecture, rng: np.random.Generator) -> ParamSet:
    """Uniform fan-in scaled initialization."""
    weights, biases = [], []
    for fan_in, fan_out in arch.layer_dims:
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return ParamSet(arch=arch, weights=weights, biases=biases)


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(name: str, activated: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (activated > 0).astype(float)
    if name == "tanh":
        return 1.0 - activated**2
    return np.ones_like(activated)


def forward(params: ParamSet, x: np.ndarray) -> np.ndarray:
    out, _ = forward_cached(params, x)
    return out


def forward_cached(params: ParamSet, x: np.ndarray
                   ) -> tuple[np.ndarray, list[np.ndarray]]:
    """Returns the output and the per-layer activations needed by backward."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != params.arch.input_dim:
        raise ValueError(f"input dim {x.shape[1]} != {params.arch.input_dim}")
    last = len(params.weights) - 1
    activations = [x]
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = activations[-1] @ w.T + b
        name = params.arch.output_activation if i == last else params.arch.hidden_activation
        activations.append(_activate(name, z))
    out = activations[-1]
    return (out[0] if squeeze else out), activations


@dataclass
class ParamGradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.weights + self.biases])

    def scaled(self, factor: float) -> "ParamGradients":
        return ParamGradients([w * factor for w in self.weights],
                              [b * factor for b in self.biases])


def backward(params: ParamSet, activations: list[np.ndarray],
             output_grad: np.ndarray) -> tuple[ParamGradients, np.ndarray]:
    """Exact gradients of ``sum(output * output_grad)`` w.r.t. params and input."""
    grad = np.asarray(output_grad, dtype=float)
    squeeze = grad.ndim == 1
    if squeeze:
        grad = grad[None, :]
    last = len(params.weights) - 1
    d_weights: list[np.ndarray] = [np.empty(0)] * len(params.weights)
    d_biases: list[np.ndarray] = [np.empty(0)] * len(params.biases)
    for i in range(last, -1, -1):
        name = params.arch.output_activation if i == last else params.arch.hidden_activation
        delta = grad * _activation_grad(name, activations[i + 1])
        d_weights[i] = delta.T @ activations[i]
        d_biases[i] = delta.sum(axis=0)
        grad = delta @ params.weights[i]
    return ParamGradients(d_weights, d_biases), (grad[0] if squeeze else grad)


def value_and_grad(params: ParamSet, x: np.ndarray, loss_fn
                   ) -> tuple[float, ParamGradients]:
    """Gradient of a scalar loss ``loss_fn(output) -> (value, d_output)``."""
    out, cache = forward_cached(params, x)
    value, d_out = loss_fn(out)
    if np.ndim(value) != 0:
        raise ValueError("loss must be scalar")
    grads, _ = backward(params, cache, np.asarray(d_out, dtype=float))
    return float(value), grads


@dataclass
class AdamState:
    """Bias-corrected first/second moment accumulators, one slot per array."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m_weights: list[np.ndarray] = field(default_factory=list)
    v_weights: list[np.ndarray] = field(default_factory=list)
    m_biases: list[np.ndarray] = field(default_factory=list)
    v_biases: list[np.ndarray] = field(default_factory=list)

    @staticmethod
    def for_params(params: ParamSet, learning_rate: float) -> "AdamState":
        state = AdamState(learning_rate=learning_rate)
        state.m_weights = [np.zeros_like(w) for w in params.weights]
        state.v_weights = [np.zeros_like(w) for w in params.weights]
        state.m_biases = [np.zeros_like(b) for b in params.biases]
        state.v_biases = [np.zeros_like(b) for b in params.biases]
        return state


def adam_step(params: ParamSet, grads: ParamGradients, state: AdamState) -> ParamSet:
    """One in-place update of ``params`` (and ``state``)."""
    state.step += 1
    correct1 = 1.0 - state.beta1**state.step
    correct2 = 1.0 - state.beta2**state.step

    def update(value, grad, m, v):
        m *= state.beta1
        m += (1 - state.beta1) * grad
        v *= state.beta2
        v += (1 - state.beta2) * grad**2
        value -= state.learning_rate * (m / correct1) / (np.sqrt(v / correct2) + state.epsilon)

    for w, g, m, v in zip(params.weights, grads.weights, state.m_weights, state.v_weights):
        update(w, g, m, v)
    for b, g, m, v in zip(params.biases, grads.biases, state.m_biases, state.v_biases):
        update(b, g, m, v)
    return params


def soft_update(target: ParamSet, online: ParamSet, blend: float) -> ParamSet:
    """In-place ``target <- blend * target + (1 - blend) * online``."""
    if target.arch != online.arch:
        raise ValueError("architecture mismatch")
    if not 0.0 <= blend <= 1.0:
        raise ValueError("blend coefficient must be in [0, 1]")
    for t, o in zip(target.weights, online.weights):
        t *= blend
        t += (1.0 - blend) * o
    for t, o in zip(target.biases, online.biases):
        t *= blend
        t += (1.0 - blend) * o
    return target


def save_params(params: ParamSet, path) -> None:
    arrays = {f"w{i}": w for i, w in enumerate(params.weights)}
    arrays.update({f"b{i}": b for i, b in enumerate(params.biases)})
    np.savez(
        path,
        version=np.array(CHECKPOINT_VERSION),
        input_dim=np.array(params.arch.input_dim),
        hidden=np.array(params.arch.hidden, dtype=int),
        output_dim=np.array(params.arch.output_dim),
        hidden_activation=np.array(params.arch.hidden_activation),
        output_activation=np.array(params.arch.output_activation),
        n_layers=np.array(len(params.weights)),
        **arrays,
    )


def load_params(path) -> ParamSet:
    with np.load(path) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        arch = Architecture(
            input_dim=int(data["input_dim"]),
            hidden=tuple(int(h) for h in data["hidden"]),
            output_dim=int(data["output_dim"]),
            hidden_activation=str(data["hidden_activation"]),
            output_activation=str(data["output_activation"]),
        )
        n = int(data["n_layers"])
        weights = [data[f"w{i}"] for i in range(n)]
        biases = [data[f"b{i}"] for i in range(n)]
    return ParamSet(arch=arch, weights=weights, biases=biases)
