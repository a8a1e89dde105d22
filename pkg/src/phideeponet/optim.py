"""Adam (and an optional SOAP variant) over pytrees, plus the full-batch training loop."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from typing import Any, Callable

import jax
import jax.numpy as jnp
import numpy as np

from .physics import LossBreakdown, LossData, PdeProblem, loss_terms


class TrainingDivergenceError(RuntimeError):
    pass


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-3
    epochs: int = 5000
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    divergence_factor: float = 1e6
    # Return the parameters with the lowest full-batch training loss seen.
    keep_best: bool = True
    # SOAP-only settings (defaults of the reference implementation)
    soap_betas: tuple[float, float] = (0.95, 0.95)
    soap_weight_decay: float = 0.01
    soap_precondition_frequency: int = 10
    soap_max_precond_dim: int = 10000

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if self.epochs < 1:
            raise ValueError("need at least one epoch")
        if self.optimizer not in ("adam", "soap"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def _is_concrete(tree) -> bool:
    return not any(isinstance(x, jax.core.Tracer) for x in jax.tree_util.tree_leaves(tree))


def _check_finite(grads):
    if _is_concrete(grads):
        for leaf in jax.tree_util.tree_leaves(grads):
            if not bool(jnp.all(jnp.isfinite(leaf))):
                raise NonFiniteGradientError("gradient contains non-finite entries")


# -- Adam -----------------------------------------------------------------


@jax.tree_util.register_pytree_node_class
@dataclass(frozen=True)
class AdamState:
    m: Any
    v: Any
    step: Any

    def tree_flatten(self):
        return (self.m, self.v, self.step), None

    @classmethod
    def tree_unflatten(cls, aux, children):
        return cls(*children)


def adam_init(params) -> AdamState:
    zeros = jax.tree_util.tree_map(jnp.zeros_like, params)
    return AdamState(zeros, zeros, jnp.asarray(0, dtype=jnp.int64))


def adam_step(state: AdamState, params, grads, config: TrainConfig):
    """One bias-corrected Adam update; returns ``(state, params)`` without mutating inputs."""
    _check_finite(grads)
    b1, b2, lr, eps = config.beta1, config.beta2, config.learning_rate, config.eps
    step = state.step + 1
    m = jax.tree_util.tree_map(lambda m, g: b1 * m + (1.0 - b1) * g, state.m, grads)
    v = jax.tree_util.tree_map(lambda v, g: b2 * v + (1.0 - b2) * g * g, state.v, grads)
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    params = jax.tree_util.tree_map(
        lambda p, m, v: p - lr * (m / c1) / (jnp.sqrt(v / c2) + eps), params, m, v)
    return AdamState(m, v, step), params


# -- SOAP -----------------------------------------------------------------
#
# Adam run in the eigenbasis of Shampoo's two-sided gradient statistics,
# with the basis refreshed by one QR power iteration every few steps.
# Matrices are preconditioned on both sides; vectors fall back to Adam.


def _soap_leaf_init(p, max_dim):
    if p.ndim == 2 and max(p.shape) <= max_dim:
        m, n = p.shape
        return {"exp_avg": jnp.zeros_like(p), "exp_avg_sq": jnp.zeros_like(p),
                "GG": (jnp.zeros((m, m)), jnp.zeros((n, n))),
                "Q": (jnp.eye(m), jnp.eye(n))}
    return {"exp_avg": jnp.zeros_like(p), "exp_avg_sq": jnp.zeros_like(p)}


def soap_init(params, config: TrainConfig = TrainConfig(optimizer="soap")):
    leaves = jax.tree_util.tree_map(lambda p: _soap_leaf_init(p, config.soap_max_precond_dim), params)
    return {"leaves": leaves, "step": jnp.asarray(0, dtype=jnp.int64)}


def _eigvecs_descending(mat):
    _, vecs = jnp.linalg.eigh(mat + 1e-30 * jnp.eye(mat.shape[0]))
    return vecs[:, ::-1]


def _refresh_basis(GG, Q, exp_avg_sq):
    new_q = []
    for axis in (0, 1):
        est = jnp.diag(Q[axis].T @ GG[axis] @ Q[axis])
        order = jnp.argsort(-est)
        exp_avg_sq = jnp.take(exp_avg_sq, order, axis=axis)
        q, _ = jnp.linalg.qr(GG[axis] @ Q[axis][:, order])
        new_q.append(q)
    return tuple(new_q), exp_avg_sq


def _soap_leaf_step(p, g, st, step, config):
    b1, b2 = config.soap_betas
    lr, eps, wd = config.learning_rate, config.eps, config.soap_weight_decay
    first = step == 0
    t = jnp.maximum(step, 1).astype(jnp.float64)
    scale = lr * jnp.sqrt(1.0 - b2**t) / (1.0 - b1**t)
    exp_avg = b1 * st["exp_avg"] + (1.0 - b1) * g
    if "Q" not in st:
        exp_avg_sq = b2 * st["exp_avg_sq"] + (1.0 - b2) * g * g
        upd = exp_avg / (jnp.sqrt(exp_avg_sq) + eps)
        new = {"exp_avg": exp_avg, "exp_avg_sq": exp_avg_sq}
    else:
        QL, QR = st["Q"]
        g_rot = QL.T @ g @ QR
        exp_avg_sq = b2 * st["exp_avg_sq"] + (1.0 - b2) * g_rot * g_rot
        upd = QL @ ((QL.T @ exp_avg @ QR) / (jnp.sqrt(exp_avg_sq) + eps)) @ QR.T
        GG = (b2 * st["GG"][0] + (1.0 - b2) * g @ g.T, b2 * st["GG"][1] + (1.0 - b2) * g.T @ g)
        refresh = (step % config.soap_precondition_frequency) == 0

        def initial(_):
            return (_eigvecs_descending(GG[0]), _eigvecs_descending(GG[1])), exp_avg_sq

        def periodic(_):
            return jax.lax.cond(refresh, lambda __: _refresh_basis(GG, (QL, QR), exp_avg_sq),
                                lambda __: ((QL, QR), exp_avg_sq), None)

        Q, exp_avg_sq_new = jax.lax.cond(first, initial, periodic, None)
        new = {"exp_avg": exp_avg, "exp_avg_sq": exp_avg_sq_new, "GG": GG, "Q": Q}
    # The first call only gathers statistics.
    keep = jnp.where(first, 0.0, 1.0)
    p_new = p - keep * (scale * upd + lr * wd * p)
    if "Q" in st:
        new["exp_avg"] = jnp.where(first, st["exp_avg"], new["exp_avg"])
        new["exp_avg_sq"] = jnp.where(first, st["exp_avg_sq"], new["exp_avg_sq"])
    else:
        new = jax.tree_util.tree_map(lambda a, b: jnp.where(first, a, b), st, new)
    return p_new, new


def soap_step(state, params, grads, config: TrainConfig):
    """One SOAP update with the same calling convention as :func:`adam_step`."""
    _check_finite(grads)
    step = state["step"]
    p_leaves, treedef = jax.tree_util.tree_flatten(params)
    g_leaves = treedef.flatten_up_to(grads)
    s_leaves = treedef.flatten_up_to(state["leaves"])
    out_p, out_s = [], []
    for p, g, st in zip(p_leaves, g_leaves, s_leaves):
        np_, ns = _soap_leaf_step(p, g, st, step, config)
        out_p.append(np_)
        out_s.append(ns)
    new_state = {"leaves": jax.tree_util.tree_unflatten(treedef, out_s), "step": step + 1}
    return new_state, jax.tree_util.tree_unflatten(treedef, out_p)


def optimizer_for(config: TrainConfig) -> tuple[Callable, Callable]:
    if config.optimizer == "soap":
        return (lambda p: soap_init(p, config)), soap_step
    return adam_init, adam_step


# -- training loop --------------------------------------------------------


@dataclass
class TrainHistory:
    losses: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    final: LossBreakdown | None = None
    epoch_of_final: int | None = None

    def __len__(self):
        return len(self.losses)

    @property
    def totals(self) -> np.ndarray:
        return np.array([b.total for b in self.losses])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "L_pde", "L_bc", "L_int", "total", "seconds"])
            for k, (b, sec) in enumerate(zip(self.losses, self.seconds)):
                w.writerow([k, repr(b.pde), repr(b.bc), repr(b.interface), repr(b.total), f"{sec:.6f}"])


def make_step(problem: PdeProblem, data: LossData, config: TrainConfig):
    """Jitted ``(model, opt_state) -> (terms, model, opt_state)``."""
    _, update = optimizer_for(config)

    def objective(model):
        terms = loss_terms(problem, model, data)
        return terms["pde"] + terms["bc"] + terms["int_value"] + terms["int_flux"], terms

    grad_fn = jax.value_and_grad(objective, has_aux=True)

    @jax.jit
    def step(model, opt_state):
        (_, terms), grads = grad_fn(model)
        opt_state, model = update(opt_state, model, grads, config)
        return terms, model, opt_state

    return step


def train(model, problem: PdeProblem, data: LossData, config: TrainConfig,
          callback: Callable[[int, LossBreakdown], None] | None = None):
    """Full-batch training; the embedding matrix is updated together with the networks."""
    init, _ = optimizer_for(config)
    opt_state = init(model)
    step = make_step(problem, data, config)
    history = TrainHistory()
    start = time.perf_counter()
    initial = None
    best, best_model = math.inf, model
    for epoch in range(config.epochs):
        before = model
        terms, model, opt_state = step(model, opt_state)
        parts = LossBreakdown(**{k: float(v) for k, v in terms.items()})
        total = parts.total
        if not np.isfinite(total):
            raise TrainingDivergenceError(f"non-finite loss at epoch {epoch}")
        if initial is None:
            initial = total
        elif total > config.divergence_factor * max(initial, 1e-300):
            raise TrainingDivergenceError(
                f"loss {total:.3e} at epoch {epoch} exceeds {config.divergence_factor:g}x initial {initial:.3e}")
        # ``terms`` were evaluated at the parameters before this update.
        if total < best:
            best, best_model = total, before
        history.losses.append(parts)
        history.seconds.append(time.perf_counter() - start)
        if callback is not None:
            callback(epoch, parts)
    final_terms = loss_terms(problem, model, data)
    if config.keep_best and float(sum(final_terms.values())) >= best:
        model = best_model
        final_terms = loss_terms(problem, model, data)
    history.final = LossBreakdown(**{k: float(v) for k, v in final_terms.items()})
    history.epoch_of_final = int(np.argmin(history.totals)) if model is best_model else config.epochs
    return model, history


def with_learning_rate(config: TrainConfig, lr: float) -> TrainConfig:
    return replace(config, learning_rate=lr)
