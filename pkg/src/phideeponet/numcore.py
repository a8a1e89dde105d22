"""Dense multilayer perceptrons with exact input and parameter derivatives.

Networks are immutable pytrees, so ``jax.grad`` can differentiate any loss
built from them, including losses that already contain input Hessians.
Weights use the ``(out, in)`` convention: ``y = W @ x + b``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import partial
from typing import Any, Callable, Sequence

import jax
import jax.numpy as jnp
import numpy as np

ACTIVATIONS: dict[str, Callable] = {
    "tanh": jnp.tanh,
    "relu": jax.nn.relu,
    "gelu": partial(jax.nn.gelu, approximate=False),
    "identity": lambda z: z,
}

_SMOOTH = ("tanh", "gelu", "identity")


class InvalidSpecError(ValueError):
    pass


class DimensionError(ValueError):
    pass


class UnsupportedActivationError(ValueError):
    pass


class NonFiniteLossError(FloatingPointError):
    """Raised when a loss (or one of its named terms) is not finite."""

    def __init__(self, term: str, value: float):
        super().__init__(f"non-finite loss term {term!r}: {value}")
        self.term = term
        self.value = value


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_widths: tuple[int, ...]
    output_dim: int
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        sizes = self.layer_sizes
        if any(s <= 0 for s in sizes):
            raise InvalidSpecError(f"layer widths must be positive, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise InvalidSpecError(f"unknown activation {self.activation!r}")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (int(self.input_dim), *self.hidden_widths, int(self.output_dim))

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1


@jax.tree_util.register_pytree_node_class
@dataclass(frozen=True)
class Mlp:
    spec: MlpSpec
    weights: tuple
    biases: tuple

    def tree_flatten(self):
        return (self.weights, self.biases), self.spec

    @classmethod
    def tree_unflatten(cls, spec, children):
        weights, biases = children
        return cls(spec, tuple(weights), tuple(biases))

    @property
    def n_params(self) -> int:
        return sum(int(np.size(w)) + int(np.size(b)) for w, b in zip(self.weights, self.biases))


def mlp_init(spec: MlpSpec, seed: int) -> Mlp:
    """Xavier-uniform weights, zero biases; a pure function of ``(spec, seed)``."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    sizes = spec.layer_sizes
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(jnp.asarray(rng.uniform(-bound, bound, size=(fan_out, fan_in))))
        biases.append(jnp.zeros(fan_out))
    return Mlp(spec, tuple(weights), tuple(biases))


def mlp_from_arrays(spec: MlpSpec, weights: Sequence, biases: Sequence) -> Mlp:
    weights = tuple(jnp.asarray(w, dtype=jnp.float64) for w in weights)
    biases = tuple(jnp.asarray(b, dtype=jnp.float64) for b in biases)
    sizes = spec.layer_sizes
    if len(weights) != spec.n_layers or len(biases) != spec.n_layers:
        raise InvalidSpecError("number of weight/bias arrays does not match the spec")
    for k, (w, b) in enumerate(zip(weights, biases)):
        if w.shape != (sizes[k + 1], sizes[k]) or b.shape != (sizes[k + 1],):
            raise InvalidSpecError(f"layer {k}: shapes {w.shape}, {b.shape} inconsistent with {sizes}")
    return Mlp(spec, weights, biases)


def mlp_forward(net: Mlp, x):
    """Evaluate the network on ``x`` of shape ``(..., input_dim)``."""
    x = jnp.asarray(x)
    if x.shape[-1:] != (net.spec.input_dim,):
        raise DimensionError(f"expected trailing dimension {net.spec.input_dim}, got shape {x.shape}")
    act = ACTIVATIONS[net.spec.activation]
    h = x
    last = net.spec.n_layers - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w.T + b
        if k < last:
            h = act(h)
    return h


def spatial_jacobian(net: Mlp, x):
    """Exact ``dy/dx`` of shape ``(output_dim, input_dim)`` at a single point."""
    x = jnp.asarray(x, dtype=jnp.float64)
    if x.shape != (net.spec.input_dim,):
        raise DimensionError(f"expected a vector of length {net.spec.input_dim}, got shape {x.shape}")
    return jax.jacfwd(lambda z: mlp_forward(net, z))(x)


def spatial_second_derivatives(net: Mlp, x):
    """Exact input Hessian of every output, shape ``(output_dim, input_dim, input_dim)``."""
    if net.spec.activation not in _SMOOTH:
        raise UnsupportedActivationError(
            f"activation {net.spec.activation!r} has no second derivative; use tanh or gelu"
        )
    x = jnp.asarray(x, dtype=jnp.float64)
    if x.shape != (net.spec.input_dim,):
        raise DimensionError(f"expected a vector of length {net.spec.input_dim}, got shape {x.shape}")
    return jax.jacfwd(jax.jacfwd(lambda z: mlp_forward(net, z)))(x)


def laplacian(net: Mlp, x, out_index: int = 0):
    hess = spatial_second_derivatives(net, x)
    return jnp.trace(hess[out_index])


def loss_gradient(loss: Callable[[Any], Any], models: Any, *, return_value: bool = False):
    """Gradient of a scalar loss with respect to every array leaf of ``models``.

    ``loss`` may return a scalar or a ``(scalar, terms)`` pair where ``terms``
    maps names to scalar parts; a non-finite part is reported by name.
    """

    def wrapped(params):
        out = loss(params)
        if isinstance(out, tuple):
            return out[0], out[1]
        return out, {}

    (value, terms), grads = jax.value_and_grad(wrapped, has_aux=True)(models)
    for name, part in dict(terms).items():
        if not np.isfinite(float(part)):
            raise NonFiniteLossError(name, float(part))
    if not np.isfinite(float(value)):
        raise NonFiniteLossError("total", float(value))
    for leaf in jax.tree_util.tree_leaves(grads):
        if not bool(jnp.all(jnp.isfinite(leaf))):
            raise NonFiniteLossError("gradient", float("nan"))
    if return_value:
        return value, grads
    return grads


# -- serialization --------------------------------------------------------


def mlp_to_dict(net: Mlp) -> dict:
    spec = net.spec
    return {
        "spec": {
            "input_dim": spec.input_dim,
            "hidden_widths": list(spec.hidden_widths),
            "output_dim": spec.output_dim,
            "activation": spec.activation,
        },
        "weights": [np.asarray(w).tolist() for w in net.weights],
        "biases": [np.asarray(b).tolist() for b in net.biases],
    }


def mlp_from_dict(doc: dict) -> Mlp:
    s = doc["spec"]
    spec = MlpSpec(s["input_dim"], tuple(s["hidden_widths"]), s["output_dim"], s["activation"])
    return mlp_from_arrays(spec, doc["weights"], doc["biases"])


def mlp_to_json(net: Mlp) -> str:
    # Python's float repr is the shortest decimal that round-trips (<= 17 digits).
    return json.dumps(mlp_to_dict(net))


def mlp_from_json(text: str) -> Mlp:
    return mlp_from_dict(json.loads(text))
