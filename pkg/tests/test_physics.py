import dataclasses

import jax.numpy as jnp
import numpy as np
import pytest
from fixtures import tiny_problem
from hypothesis import given, settings, strategies as st

from phideeponet.deeponet import InputFunctionSample, PhiDeepOnet, evaluate, forward, make_phi_deeponet
from phideeponet.embedding import Embedding
from phideeponet.geometry import (CollocationSet, HardConstraint, IntervalDecomposition,
                                  PetalSquare, sample_collocation)
from phideeponet.numcore import MlpSpec, mlp_from_arrays
from phideeponet.oracle import AnalyticFieldModel, derived_petal_data, petal_field_model
from phideeponet.physics import (PdeProblem, ResidualDomainError, bc_residual, interface_residuals,
                                 loss_terms, make_loss_data, pde_residual, reconstruct_forcing,
                                 rel_l2, residual_arrays, total_loss)

DEC = IntervalDecomposition((0.5,))


def _zero_net(n_in, k=1):
    return mlp_from_arrays(MlpSpec(n_in, (), k, "identity"), [np.zeros((k, n_in))], [np.zeros(k)])


def _lifted_model(lift):
    """Zero network plus the given lift, so ``s = lift(y)`` exactly."""
    hc = HardConstraint(lam=lambda y: y[0] * (1 - y[0]), lift=lift)
    emb = Embedding("ce", 2, 1, "tanh", jnp.ones((1, 2)))
    return PhiDeepOnet((_zero_net(2), _zero_net(2)), _zero_net(2), emb, DEC, hc)


U0 = InputFunctionSample((np.zeros(2), np.zeros(2)), forcing=lambda y, q: 0.0)


def test_pde_residual_examples():
    problem = PdeProblem(DEC, (1.0, 1.0))
    zero = _lifted_model(lambda y: 0.0 * y[0])
    assert pde_residual(problem, zero, U0, 0.3) == 0.0
    quad = _lifted_model(lambda y: y[0] ** 2)
    two = InputFunctionSample((np.zeros(2), np.zeros(2)), forcing=lambda y, q: 2.0)
    for y in (0.1, 0.37, 0.9):
        assert abs(pde_residual(problem, quad, two, y)) <= 1e-12
    flipped = PdeProblem(DEC, (1.0, 1.0), sign=-1.0)
    assert pde_residual(flipped, quad, two, 0.2) == pytest.approx(4.0, abs=1e-12)


def test_pde_residual_undefined_on_interface():
    with pytest.raises(ResidualDomainError):
        pde_residual(PdeProblem(DEC, (1.0, 2.0)), _lifted_model(lambda y: 0.0 * y[0]), U0, 0.5)


def test_petal_pde_residual_single_point():
    dec = PetalSquare()
    data = derived_petal_data()
    problem = PdeProblem(dec, (4.0, 10.0), jump_value=data.jump_value, jump_flux=data.jump_flux,
                         dirichlet=data.dirichlet)
    field = petal_field_model(dec)
    u = InputFunctionSample((np.zeros(1),), forcing=lambda y, q: float(data.forcing(y[None], q)[0]))
    for y in ([0.1, 0.2], [0.8, -0.7], [-0.9, 0.95]):
        assert abs(pde_residual(problem, field, u, y)) <= 1e-8


def test_bc_residual_examples():
    problem = PdeProblem(DEC, (1.0, 1.0))
    hard = make_phi_deeponet(DEC, (2, 2), "nce", 2, width=4, seed=0, hard_bc=True)
    u = InputFunctionSample((np.ones(2), -np.ones(2)))
    assert bc_residual(problem, hard, u, 0.0) == 0.0
    assert bc_residual(problem, hard, u, 1.0) == 0.0
    assert bc_residual(problem, _lifted_model(lambda y: 0.0 * y[0]), U0, 1.0) == 0.0
    with pytest.raises(ResidualDomainError):
        bc_residual(problem, hard, u, 0.4)

    dec = PetalSquare()
    data = derived_petal_data()
    petal = PdeProblem(dec, (4.0, 10.0), dirichlet=data.dirichlet)
    soft = make_phi_deeponet(dec, (3, 3), "nce", 2, width=4, seed=1, hard_bc=False)
    u = InputFunctionSample((np.ones(3), np.ones(3)))
    for y in ([1.0, 0.3], [-0.2, -1.0]):
        r = np.hypot(*y)
        expected = forward(soft, u, y) - (0.1 * r**4 - 0.01 * np.log(2 * r))
        assert bc_residual(petal, soft, u, y) == pytest.approx(expected, abs=1e-15)


def _two_constant_sides(a, b):
    return AnalyticFieldModel(DEC, (lambda y: a + 0.0 * y[0], lambda y: b + 0.0 * y[0]))


def test_interface_examples():
    plain = PdeProblem(DEC, (5.0, 0.1))
    u = InputFunctionSample((np.zeros(1),))
    assert interface_residuals(plain, _two_constant_sides(0.7, 0.7), u, 0.5, (1, 2), [1.0]) == (0.0, 0.0)
    henry = PdeProblem(DEC, (2.0, 1.0), henry=(1.0, 2.0))
    assert interface_residuals(henry, _two_constant_sides(1.0, 2.0), u, 0.5, (1, 2), [1.0]) == (0.0, 0.0)
    with pytest.raises(ResidualDomainError):
        interface_residuals(plain, _two_constant_sides(1.0, 1.0), u, 0.4, (1, 2), [1.0])


def test_petal_interface_residuals():
    dec = PetalSquare()
    data = derived_petal_data()
    problem = PdeProblem(dec, (4.0, 10.0), jump_value=data.jump_value, jump_flux=data.jump_flux)
    field = petal_field_model(dec)
    u = InputFunctionSample((np.zeros(1),))
    pts, normals = dec.interfaces[0].sample(np.random.default_rng(0), 10)
    for y, n in zip(pts, normals):
        rv, rf = interface_residuals(problem, field, u, y, (1, 2), n)
        assert abs(rv) <= 1e-8 and abs(rf) <= 1e-8


def test_total_loss_formula_arithmetic():
    problem = PdeProblem(DEC, (1.0, 1.0))
    model = _lifted_model(lambda y: 0.0 * y[0])
    colloc = sample_collocation(DEC, 2, 2, 1, seed=0)
    data = make_loss_data(problem, (np.zeros((1, 2)), np.zeros((1, 2))), np.array([[-1.0, -3.0]]), colloc)
    out = total_loss(problem, model, data)
    assert out.pde == 5.0
    assert (out.bc, out.int_value, out.int_flux) == (0.0, 0.0, 0.0)
    assert out.total == 5.0


def test_total_loss_zero_when_residuals_vanish():
    problem = PdeProblem(DEC, (1.0, 1.0))
    colloc = sample_collocation(DEC, 4, 2, 2, seed=0)
    data = make_loss_data(problem, (np.zeros((3, 2)), np.zeros((3, 2))), np.zeros((3, 4)), colloc)
    assert total_loss(problem, _lifted_model(lambda y: 0.0 * y[0]), data).total == 0.0


def test_total_loss_matches_brute_force_loop():
    problem, model, data = tiny_problem(seed=3, n_samples=3, m=6)
    problem = dataclasses.replace(problem, henry=(1.0, 1.5))
    data = make_loss_data(problem, data.inputs, data.forcing, data.colloc)
    c = data.colloc
    terms = loss_terms(problem, model, data)
    acc = {"pde": 0.0, "bc": 0.0, "int_value": 0.0, "int_flux": 0.0}
    fvals = np.asarray(data.forcing)
    for i in range(3):
        lookup = {float(p[0]): fvals[i, j] for j, p in enumerate(c.pde_points)}
        u = InputFunctionSample(tuple(np.asarray(v[i]) for v in data.inputs),
                                forcing=lambda y, q, lookup=lookup: lookup[float(y[0])])
        for y in c.pde_points:
            acc["pde"] += pde_residual(problem, model, u, y) ** 2
        for y in c.bc_points:
            acc["bc"] += bc_residual(problem, model, u, y) ** 2
        for y, pair, n in zip(c.interface_points, c.interface_pairs, c.interface_normals):
            rv, rf = interface_residuals(problem, model, u, y, pair, n)
            acc["int_value"] += rv**2
            acc["int_flux"] += rf**2
    counts = {"pde": 3 * 6, "bc": 3 * 2, "int_value": 3 * 3, "int_flux": 3 * 3}
    for k in acc:
        expected = acc[k] / counts[k]
        assert float(terms[k]) == pytest.approx(expected, rel=1e-13, abs=1e-14)


def test_non_finite_residual_is_located():
    problem, model, data = tiny_problem()
    forcing = np.asarray(data.forcing).copy()
    forcing[1, 3] = np.nan
    bad = make_loss_data(problem, data.inputs, forcing, data.colloc)
    with pytest.raises(FloatingPointError, match="sample 1, point 3"):
        total_loss(problem, model, bad)


def test_rel_l2_examples():
    assert rel_l2([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert rel_l2([0.0, 0.0], [3.0, -4.0]) == 1.0
    assert rel_l2([1.0, 1.0], [1.0, 0.0]) == 1.0
    with pytest.raises(ZeroDivisionError):
        rel_l2([1.0], [0.0])
    with pytest.raises(ValueError):
        rel_l2([1.0, 2.0], [1.0])


def test_reconstruct_forcing_1d_and_2d():
    xs = np.linspace(0, 0.5, 12)[:, None]
    f = reconstruct_forcing([xs], [np.sin(3 * xs[:, 0])])
    assert f(np.array([0.23]), 1) == pytest.approx(np.sin(0.69), abs=1e-4)
    gx, gy = np.meshgrid(np.linspace(0, 1, 5), np.linspace(0, 1, 4), indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], 1)
    g = reconstruct_forcing([pts], [1 + 2 * pts[:, 0] - pts[:, 1]])
    assert g(np.array([0.33, 0.71]), 1) == pytest.approx(1 + 0.66 - 0.71, abs=1e-12)


# -- properties ---------------------------------------------------------------


def _phi_blind(model):
    """Zero the trunk's embedding inputs so both interface sides evaluate identically."""
    w0 = model.trunk.weights[0].at[:, model.decomposition.dim:].set(0.0)
    return dataclasses.replace(model, trunk=dataclasses.replace(model.trunk, weights=(w0, *model.trunk.weights[1:])))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), kappa=st.floats(0.1, 10.0))
def test_interface_residuals_vanish_for_matching_sides(seed, kappa):
    problem = PdeProblem(DEC, (kappa, kappa))
    model = _phi_blind(make_phi_deeponet(DEC, (3, 3), "nce", 2, width=4, seed=seed))
    rng = np.random.default_rng(seed)
    u = InputFunctionSample((rng.normal(size=3), rng.normal(size=3)))
    rv, rf = interface_residuals(problem, model, u, 0.5, (1, 2), [1.0])
    assert rv == 0.0 and abs(rf) <= 1e-14


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_loss_permutation_invariance(seed):
    problem, model, data = tiny_problem(seed=seed % 1000, n_samples=4, m=12)
    rng = np.random.default_rng(seed)
    c = data.colloc
    pm, pb, pt, ps = (rng.permutation(n) for n in (12, 2, 3, 4))
    colloc = CollocationSet(c.pde_points[pm], c.pde_sides[pm], c.bc_points[pb], c.bc_sides[pb],
                            c.interface_points[pt], c.interface_pairs[pt], c.interface_normals[pt])
    forcing = np.asarray(data.forcing)[ps][:, pm]
    inputs = tuple(np.asarray(u)[ps] for u in data.inputs)
    permuted = make_loss_data(problem, inputs, forcing, colloc)
    a = loss_terms(problem, model, data)
    b = loss_terms(problem, model, permuted)
    for k in a:
        assert abs(float(a[k]) - float(b[k])) <= 1e-14 * max(1.0, abs(float(a[k])))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), power=st.integers(-3, 3), h=st.floats(0.1, 10.0))
def test_scaled_jump_equivalence(seed, power, h):
    plain_problem, model, data = tiny_problem(seed=seed % 1000)
    for scale, exact in ((2.0**power, True), (h, False)):
        scaled_problem = dataclasses.replace(plain_problem, henry=(scale, scale))
        r_plain = np.asarray(residual_arrays(plain_problem, model, data)["value"])
        r_scaled = np.asarray(residual_arrays(
            scaled_problem, model, make_loss_data(scaled_problem, data.inputs, data.forcing, data.colloc))["value"])
        if exact:
            np.testing.assert_array_equal(r_scaled, r_plain / scale)
        else:
            # a/h - b/h vs (a - b)/h: rounding scales with the operands, so bound it by their size
            c = data.colloc
            coeffs = model.coefficients(data.inputs)
            operands = max(np.max(np.abs(evaluate(model, coeffs, c.interface_points, c.interface_pairs[:, k])))
                           for k in (0, 1)) / scale
            np.testing.assert_allclose(r_scaled, r_plain / scale, rtol=0, atol=8 * np.finfo(float).eps * operands)
