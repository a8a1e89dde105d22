"""Latent subdomain embeddings fed to the augmented trunk network.

Three variants are supported:

* ``se``  -- scalar embedding, the 1-based subdomain index itself;
* ``ce``  -- categorical embedding ``E @ onehot(y)`` with a trainable ``E`` (D x P);
* ``nce`` -- nonlinear categorical embedding ``act(E @ onehot(y))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from .numcore import ACTIVATIONS

VARIANTS = ("se", "ce", "nce")


class NoTrainableParametersError(ValueError):
    pass


@jax.tree_util.register_pytree_node_class
@dataclass(frozen=True)
class Embedding:
    variant: str
    n_sub: int
    dim: int
    activation: str = "tanh"
    matrix: jnp.ndarray | None = None

    def tree_flatten(self):
        return (self.matrix,), (self.variant, self.n_sub, self.dim, self.activation)

    @classmethod
    def tree_unflatten(cls, aux, children):
        variant, n_sub, dim, activation = aux
        return cls(variant, n_sub, dim, activation, children[0])

    @property
    def n_trainable(self) -> int:
        return 0 if self.matrix is None else int(np.size(self.matrix))

    def table(self):
        """Embedding of every subdomain, row ``q - 1`` for subdomain ``q`` (shape P x D)."""
        if self.variant == "se":
            return jnp.arange(1, self.n_sub + 1, dtype=jnp.float64)[:, None]
        cols = self.matrix.T
        if self.variant == "nce":
            cols = ACTIVATIONS[self.activation](cols)
        return cols


def make_embedding(variant: str, n_sub: int, dim: int = 1, activation: str = "tanh",
                   seed: int = 0) -> Embedding:
    variant = variant.lower()
    if variant not in VARIANTS:
        raise ValueError(f"unknown embedding variant {variant!r}; choose from {VARIANTS}")
    if n_sub < 1:
        raise ValueError("need at least one subdomain")
    if variant == "se":
        return Embedding("se", n_sub, 1, activation, None)
    if dim < 1:
        raise ValueError("latent dimension must be >= 1")
    if activation not in ("tanh", "relu", "gelu"):
        raise ValueError(f"embedding activation must be tanh, relu or gelu, got {activation!r}")
    bound = math.sqrt(6.0 / (n_sub + dim))
    rng = np.random.default_rng(seed)
    matrix = jnp.asarray(rng.uniform(-bound, bound, size=(dim, n_sub)))
    return Embedding(variant, n_sub, dim, activation, matrix)


def embed_forced(emb: Embedding, q: int):
    """Embedding with the one-hot forced to subdomain ``q`` (1-based)."""
    if not 1 <= q <= emb.n_sub:
        raise ValueError(f"subdomain index {q} out of range 1..{emb.n_sub}")
    return emb.table()[q - 1]


def embed(emb: Embedding, dec, y):
    return embed_forced(emb, dec.subdomain_of(y))


def embed_many(emb: Embedding, sides):
    """Vectorized lookup for an integer array of 1-based subdomain labels."""
    return emb.table()[jnp.asarray(sides) - 1]


def embedding_gradient(emb: Embedding, q: int, upstream):
    """Contract ``d phi / d E`` at subdomain ``q`` with ``upstream`` (length D).

    Only column ``q`` of the result is nonzero.
    """
    if emb.variant == "se":
        raise NoTrainableParametersError("the scalar embedding has no trainable parameters")
    if not 1 <= q <= emb.n_sub:
        raise ValueError(f"subdomain index {q} out of range 1..{emb.n_sub}")
    upstream = jnp.asarray(upstream, dtype=jnp.float64)
    col = emb.matrix[:, q - 1]
    if emb.variant == "nce":
        act = ACTIVATIONS[emb.activation]
        slope = jax.vmap(jax.grad(lambda z: act(z)))(col)
        upstream = upstream * slope
    return jnp.zeros_like(emb.matrix).at[:, q - 1].set(upstream)
