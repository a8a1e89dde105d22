"""phi-DeepONet and the plain DeepONet baseline.

The phi-DeepONet output is

    s(y) = c * sum_k ( prod_q br^q_k(u_q - u0) ) * tr_k(y, phi(y))

where ``phi`` is the latent subdomain embedding, ``c`` a fixed output scale
and ``u0`` a fixed input shift.  ``c = 1, u0 = 0`` is the unnormalized sum;
the builders default to ``c = 1 / K``, which keeps Adam stable at the
usual learning rates.  With a hard constraint
attached the network output ``s`` is replaced by ``lam(y) s(y) + H(y)``.

Everything here is batched over input samples (rows of the branch inputs)
and over evaluation points.  The single-point helpers at the bottom wrap
the batched path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import jax
import jax.numpy as jnp
import numpy as np

from .embedding import Embedding, embed_many, make_embedding
from .geometry import Decomposition, HardConstraint
from .numcore import MlpSpec, mlp_forward, mlp_from_dict, mlp_init, mlp_to_dict


@jax.tree_util.register_pytree_node_class
@dataclass(frozen=True)
class PhiDeepOnet:
    branches: tuple
    trunk: object
    embedding: Embedding
    decomposition: Decomposition
    hard_constraint: HardConstraint | None = None
    output_scale: float = 1.0
    input_shift: float = 0.0

    def tree_flatten(self):
        aux = (self.decomposition, self.hard_constraint, self.output_scale, self.input_shift)
        return (self.branches, self.trunk, self.embedding), aux

    @classmethod
    def tree_unflatten(cls, aux, children):
        branches, trunk, embedding = children
        return cls(tuple(branches), trunk, embedding, *aux)

    @property
    def width(self) -> int:
        return self.trunk.spec.output_dim

    @property
    def sensor_counts(self) -> tuple[int, ...]:
        return tuple(b.spec.input_dim for b in self.branches)

    def coefficients(self, inputs: Sequence):
        """``output_scale`` times the elementwise product of the branch outputs, shape (N, K)."""
        if len(inputs) != len(self.branches):
            raise ValueError(f"expected {len(self.branches)} branch inputs, got {len(inputs)}")
        out = self.output_scale
        for net, u in zip(self.branches, inputs):
            out = out * mlp_forward(net, jnp.asarray(u) - self.input_shift)
        return out

    def trunk_fn(self, sides) -> tuple[Callable, jnp.ndarray]:
        phi = embed_many(self.embedding, sides)
        trunk = self.trunk
        return (lambda y, p: mlp_forward(trunk, jnp.concatenate([y, p]))), phi


@jax.tree_util.register_pytree_node_class
@dataclass(frozen=True)
class DeepOnetBaseline:
    branch: object
    trunk: object
    decomposition: Decomposition
    hard_constraint: HardConstraint | None = None
    output_scale: float = 1.0
    input_shift: float = 0.0

    def tree_flatten(self):
        aux = (self.decomposition, self.hard_constraint, self.output_scale, self.input_shift)
        return (self.branch, self.trunk), aux

    @classmethod
    def tree_unflatten(cls, aux, children):
        return cls(*children, *aux)

    @property
    def width(self) -> int:
        return self.trunk.spec.output_dim

    def coefficients(self, inputs: Sequence):
        u = jnp.concatenate([jnp.asarray(u) for u in inputs], axis=-1)
        return self.output_scale * mlp_forward(self.branch, u - self.input_shift)

    def trunk_fn(self, sides):
        trunk = self.trunk
        dummy = jnp.zeros((len(sides), 0))
        return (lambda y, p: mlp_forward(trunk, y)), dummy


@dataclass(frozen=True)
class InputFunctionSample:
    """One input function: sensor values per subdomain, plus optional pointwise forcing."""

    values: tuple
    forcing: Callable | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(np.asarray(v, dtype=float) for v in self.values))

    def batch(self) -> list:
        return [jnp.asarray(v)[None, :] for v in self.values]


def make_phi_deeponet(dec: Decomposition, sensor_counts: Sequence[int], variant: str = "nce",
                      latent_dim: int = 3, width: int = 64, branch_widths=(64, 64),
                      trunk_widths=(64, 64, 64), activation: str = "tanh",
                      embedding_activation: str = "tanh", hard_bc: bool = True,
                      seed: int = 0, output_scale: float | None = None,
                      input_shift: float = 0.0) -> PhiDeepOnet:
    """Xavier-initialized model; ``output_scale`` defaults to ``1 / width``."""
    if len(sensor_counts) != dec.n_sub:
        raise ValueError("need one sensor count per subdomain")
    seeds = np.random.SeedSequence(seed).generate_state(dec.n_sub + 2)
    emb = make_embedding(variant, dec.n_sub, latent_dim, embedding_activation, seed=int(seeds[-1]))
    branches = tuple(
        mlp_init(MlpSpec(int(m), tuple(branch_widths), width, activation), int(seeds[q]))
        for q, m in enumerate(sensor_counts)
    )
    trunk = mlp_init(MlpSpec(dec.dim + emb.dim, tuple(trunk_widths), width, activation), int(seeds[-2]))
    scale = 1.0 / width if output_scale is None else float(output_scale)
    return PhiDeepOnet(branches, trunk, emb, dec, dec.hard_constraint() if hard_bc else None,
                       scale, float(input_shift))


def make_baseline(dec: Decomposition, n_sensors: int, width: int = 64, branch_widths=(64, 64),
                  trunk_widths=(64, 64, 64), activation: str = "tanh", hard_bc: bool = True,
                  seed: int = 0, output_scale: float | None = None,
                  input_shift: float = 0.0) -> DeepOnetBaseline:
    seeds = np.random.SeedSequence(seed).generate_state(2)
    branch = mlp_init(MlpSpec(int(n_sensors), tuple(branch_widths), width, activation), int(seeds[0]))
    trunk = mlp_init(MlpSpec(dec.dim, tuple(trunk_widths), width, activation), int(seeds[1]))
    scale = 1.0 / width if output_scale is None else float(output_scale)
    return DeepOnetBaseline(branch, trunk, dec, dec.hard_constraint() if hard_bc else None,
                            scale, float(input_shift))


# -- batched evaluation ---------------------------------------------------


def basis(model, points, sides, order: int = 0):
    """Trunk outputs at ``points`` with the embedding of ``sides``.

    Returns ``T`` (M, K); for ``order >= 1`` also ``dT`` (M, K, d); for
    ``order == 2`` also the spatial Laplacian ``lapT`` (M, K).  The
    embedding is constant inside a subdomain, so only ``y`` is differentiated.
    """
    points = jnp.asarray(points, dtype=jnp.float64)
    f, phi = model.trunk_fn(sides)
    T = jax.vmap(f)(points, phi)
    if order == 0:
        return (T,)
    dT = jax.vmap(jax.jacfwd(f, argnums=0))(points, phi)
    if order == 1:
        return T, dT
    hess = jax.vmap(jax.jacfwd(jax.jacfwd(f, argnums=0), argnums=0))(points, phi)
    return T, dT, jnp.trace(hess, axis1=-2, axis2=-1)


def evaluate(model, coeffs, points, sides, order: int = 0):
    """Solution values (N, M) and, by ``order``, gradients (N, M, d) and Laplacians (N, M)."""
    feats = basis(model, points, sides, order)
    s = coeffs @ feats[0].T
    grad = lap = None
    if order >= 1:
        grad = jnp.einsum("nk,mkd->nmd", coeffs, feats[1])
    if order >= 2:
        lap = coeffs @ feats[2].T
    hc = model.hard_constraint
    if hc is not None:
        terms = hc.terms(points, order)
        lam, lift = terms[0], terms[1]
        if order >= 2:
            g_lam, g_lift, l_lam, l_lift = terms[2:]
            lap = l_lam * s + 2.0 * jnp.einsum("md,nmd->nm", g_lam, grad) + lam * lap + l_lift
        if order >= 1:
            g_lam, g_lift = terms[2], terms[3]
            grad = g_lam[None] * s[..., None] + lam[None, :, None] * grad + g_lift[None]
        s = lam * s + lift
    if order == 0:
        return s
    if order == 1:
        return s, grad
    return s, grad, lap


def predict(model, inputs, points, sides=None):
    """Predictions for a batch of inputs on ``points`` (sides default to membership)."""
    if sides is None:
        sides = model.decomposition.labels(np.asarray(points))
    return evaluate(model, model.coefficients([jnp.asarray(u) for u in inputs]), points, sides)


# -- single-point API -----------------------------------------------------


def _point_and_side(model, y, side):
    dec = model.decomposition
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != (dec.dim,):
        raise ValueError(f"expected a point with {dec.dim} coordinates, got shape {y.shape}")
    if side is None:
        side = dec.subdomain_of(y)
    elif not 1 <= int(side) <= dec.n_sub:
        raise ValueError(f"side {side} out of range 1..{dec.n_sub}")
    return y[None, :], np.array([int(side)])


def forward(model, u: InputFunctionSample, y, side: int | None = None) -> float:
    pts, sides = _point_and_side(model, y, side)
    return float(evaluate(model, model.coefficients(u.batch()), pts, sides)[0, 0])


def forward_baseline(model: DeepOnetBaseline, u: InputFunctionSample, y) -> float:
    return forward(model, u, y)


def forward_with_spatial_derivatives(model, u: InputFunctionSample, y, side: int | None = None):
    """``(s, grad_y s, laplacian_y s)`` at a single point."""
    pts, sides = _point_and_side(model, y, side)
    s, g, lap = evaluate(model, model.coefficients(u.batch()), pts, sides, order=2)
    return float(s[0, 0]), np.asarray(g[0, 0]), float(lap[0, 0])


# -- serialization --------------------------------------------------------


def model_to_dict(model, benchmark_id: str | None = None) -> dict:
    doc = {
        "benchmark": benchmark_id,
        "hard_constraint": model.hard_constraint is not None,
        "output_scale": model.output_scale,
        "input_shift": model.input_shift,
        "trunk": mlp_to_dict(model.trunk),
    }
    if isinstance(model, PhiDeepOnet):
        emb = model.embedding
        doc["kind"] = "phi-deeponet"
        doc["embedding"] = {
            "variant": emb.variant,
            "n_sub": emb.n_sub,
            "dim": emb.dim,
            "activation": emb.activation,
            "matrix": None if emb.matrix is None else np.asarray(emb.matrix).tolist(),
        }
        doc["branches"] = [mlp_to_dict(b) for b in model.branches]
    else:
        doc["kind"] = "deeponet"
        doc["branches"] = [mlp_to_dict(model.branch)]
    return doc


def model_from_dict(doc: dict, dec: Decomposition):
    hc = dec.hard_constraint() if doc["hard_constraint"] else None
    trunk = mlp_from_dict(doc["trunk"])
    branches = tuple(mlp_from_dict(b) for b in doc["branches"])
    scale, shift = float(doc["output_scale"]), float(doc["input_shift"])
    if doc["kind"] == "deeponet":
        return DeepOnetBaseline(branches[0], trunk, dec, hc, scale, shift)
    e = doc["embedding"]
    matrix = None if e["matrix"] is None else jnp.asarray(e["matrix"], dtype=jnp.float64)
    emb = Embedding(e["variant"], e["n_sub"], e["dim"], e["activation"], matrix)
    return PhiDeepOnet(branches, trunk, emb, dec, hc, scale, shift)


def model_to_json(model, benchmark_id: str | None = None) -> str:
    return json.dumps(model_to_dict(model, benchmark_id))


def model_from_json(text: str, dec: Decomposition):
    return model_from_dict(json.loads(text), dec)
