import csv

import jax
import jax.numpy as jnp
import numpy as np
import pytest
from fixtures import tiny_problem
from hypothesis import given, settings, strategies as st

from phideeponet.optim import (NonFiniteGradientError, TrainConfig, TrainingDivergenceError,
                               adam_init, adam_step, optimizer_for, soap_init, soap_step, train)
from phideeponet.physics import loss_terms


def _leaves(tree):
    return [np.asarray(x) for x in jax.tree_util.tree_leaves(tree)]


def _same(a, b):
    return all(np.array_equal(x, y) for x, y in zip(_leaves(a), _leaves(b)))


def test_zero_gradient_leaves_params():
    params = {"w": jnp.arange(6.0).reshape(2, 3), "b": jnp.ones(2)}
    cfg = TrainConfig(learning_rate=0.1, epochs=1)
    state, new = adam_step(adam_init(params), params, jax.tree_util.tree_map(jnp.zeros_like, params), cfg)
    assert _same(new, params)
    assert int(state.step) == 1


def test_first_adam_step_by_hand():
    cfg = TrainConfig(learning_rate=0.1, epochs=1)
    _, p = adam_step(adam_init(jnp.zeros(1)), jnp.zeros(1), jnp.ones(1), cfg)
    assert float(p[0]) == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-16)


def test_adam_minimizes_shifted_parabola():
    cfg = TrainConfig(learning_rate=0.05, epochs=1)
    step = jax.jit(lambda s, p: adam_step(s, p, 2.0 * (p - 3.0), cfg))
    theta = jnp.zeros(())
    state = adam_init(theta)
    for _ in range(2000):
        state, theta = step(state, theta)
    assert abs(float(theta) - 3.0) < 1e-3


def test_non_finite_gradient_rejected():
    cfg = TrainConfig(learning_rate=0.1, epochs=1)
    with pytest.raises(NonFiniteGradientError):
        adam_step(adam_init(jnp.zeros(2)), jnp.zeros(2), jnp.array([1.0, jnp.nan]), cfg)
    with pytest.raises(NonFiniteGradientError):
        soap_step(soap_init(jnp.zeros(2)), jnp.zeros(2), jnp.array([jnp.inf, 0.0]), cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="sgd")


def test_lr_zero_single_epoch_is_identity():
    problem, model, data = tiny_problem()
    out, hist = train(model, problem, data, TrainConfig(learning_rate=0.0, epochs=1))
    assert _same(out, model)
    assert len(hist) == 1


def test_training_is_deterministic_and_updates_embedding():
    problem, model, data = tiny_problem(seed=1)
    cfg = TrainConfig(learning_rate=1e-2, epochs=50, keep_best=False)
    a, ha = train(model, problem, data, cfg)
    b, hb = train(model, problem, data, cfg)
    assert abs(ha.final.total - hb.final.total) <= 1e-12
    assert _same(a, b)
    assert not np.array_equal(np.asarray(a.embedding.matrix), np.asarray(model.embedding.matrix))
    assert ha.final.total < ha.losses[0].total


def test_keep_best_returns_lowest_loss_parameters():
    problem, model, data = tiny_problem(seed=2)
    out, hist = train(model, problem, data, TrainConfig(learning_rate=0.3, epochs=60, keep_best=True))
    totals = hist.totals
    assert hist.final.total <= totals.min() + 1e-15 or hist.epoch_of_final == 60
    recomputed = sum(float(v) for v in loss_terms(problem, out, data).values())
    assert recomputed == pytest.approx(hist.final.total, rel=1e-14)


def test_divergence_is_detected():
    problem, model, data = tiny_problem(seed=4)
    with pytest.raises(TrainingDivergenceError):
        train(model, problem, data, TrainConfig(learning_rate=1.0, epochs=200, divergence_factor=2.0))


def test_history_csv_columns(tmp_path):
    problem, model, data = tiny_problem()
    _, hist = train(model, problem, data, TrainConfig(learning_rate=1e-3, epochs=3))
    path = tmp_path / "history.csv"
    hist.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["epoch", "L_pde", "L_bc", "L_int", "total", "seconds"]
    assert len(rows) == 4
    assert float(rows[1][4]) == hist.losses[0].total


# -- SOAP -----------------------------------------------------------------


def test_soap_zero_gradient_leaves_params():
    params = {"w": jnp.arange(6.0).reshape(2, 3), "b": jnp.ones(2)}
    cfg = TrainConfig(learning_rate=0.1, epochs=1, optimizer="soap", soap_weight_decay=0.0)
    state = soap_init(params, cfg)
    zero = jax.tree_util.tree_map(jnp.zeros_like, params)
    for _ in range(3):
        state, new = soap_step(state, params, zero, cfg)
        assert _same(new, params)


def _iterations_to_converge(optimizer, A, c, **settings_):
    cfg = TrainConfig(learning_rate=0.05, epochs=1, optimizer=optimizer, **settings_)
    init, update = optimizer_for(cfg)
    f = lambda p: jnp.sum((A @ (p - c)) ** 2)  # noqa: E731
    step = jax.jit(lambda s, p: update(s, p, jax.grad(f)(p), cfg))
    p = jnp.zeros(c.shape)
    state = init(p)
    for k in range(3000):
        state, p = step(state, p)
        if float(jnp.max(jnp.abs(p - c))) < 1e-3:
            return k + 1
    return 10**9


def test_soap_at_least_as_fast_as_adam_on_quadratic_bowl():
    rng = np.random.default_rng(0)
    c = jnp.asarray(rng.normal(size=(4, 3)))
    rot = np.linalg.qr(rng.normal(size=(4, 4)))[0]
    A = jnp.asarray(rot @ np.diag([1.0, 4.0, 9.0, 16.0]) @ rot.T)
    # same moment decay rates and no weight decay, so only the preconditioner differs
    soap = _iterations_to_converge("soap", A, c, soap_betas=(0.9, 0.999), soap_weight_decay=0.0)
    adam = _iterations_to_converge("adam", A, c)
    assert soap <= adam


def test_soap_is_a_drop_in_for_train():
    problem, model, data = tiny_problem(seed=5)
    out, hist = train(model, problem, data, TrainConfig(learning_rate=5e-3, epochs=20, optimizer="soap"))
    assert len(hist) == 20
    assert hist.final.total < hist.losses[0].total


# -- properties ---------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), lr=st.floats(1e-4, 1.0), steps=st.integers(0, 3))
def test_adam_step_is_pure(seed, lr, steps):
    rng = np.random.default_rng(seed)
    params = {"a": jnp.asarray(rng.normal(size=(3, 2))), "b": jnp.asarray(rng.normal(size=4))}
    cfg = TrainConfig(learning_rate=lr, epochs=1)
    state = adam_init(params)
    for _ in range(steps):
        state, params = adam_step(state, params, params, cfg)
    grads = jax.tree_util.tree_map(lambda x: jnp.asarray(rng.normal(size=x.shape)), params)
    snapshot = [x.copy() for x in _leaves((state, params, grads))]
    s1, p1 = adam_step(state, params, grads, cfg)
    s2, p2 = adam_step(state, params, grads, cfg)
    assert _same((s1, p1), (s2, p2))
    assert all(np.array_equal(a, b) for a, b in zip(snapshot, _leaves((state, params, grads))))


@settings(max_examples=5, deadline=None)
@given(epochs=st.integers(1, 12), seed=st.integers(0, 50))
def test_lr_zero_train_is_identity(epochs, seed):
    problem, model, data = tiny_problem(seed=seed)
    out, hist = train(model, problem, data, TrainConfig(learning_rate=0.0, epochs=epochs))
    assert _same(out, model)
    assert len(hist) == epochs
