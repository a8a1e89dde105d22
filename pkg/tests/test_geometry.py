import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phideeponet.geometry import (DiagonalSquare, DomainError, IntervalDecomposition, PetalCurve,
                                  PetalSquare, distance_and_lift, petal_dirichlet, petal_normal,
                                  sample_collocation)

B2 = IntervalDecomposition((0.2, 0.4, 0.6, 0.8))
B3 = DiagonalSquare()
PETAL = PetalSquare()


def test_membership_examples():
    assert B2.subdomain_of(0.3) == 2
    assert B3.subdomain_of((0.5, 0.2)) == 1
    c = 0.02 * math.sqrt(5)
    assert PETAL.subdomain_of((c, c)) == 1
    assert PETAL.subdomain_of((0.95, 0.95)) == 2


def test_interface_points_go_to_lower_index():
    assert B2.subdomain_of(0.4) == 2
    assert B3.subdomain_of((0.3, 0.3)) == 1


def test_outside_domain_raises():
    with pytest.raises(DomainError):
        B2.subdomain_of(1.5)
    with pytest.raises(DomainError):
        B3.one_hot((0.5, -0.1))


def test_one_hot_examples():
    two = IntervalDecomposition((0.5,))
    np.testing.assert_array_equal(two.one_hot(0.1), [1, 0])
    np.testing.assert_array_equal(B2.one_hot(0.5), [0, 0, 1, 0, 0])


def test_collocation_1d_interior():
    c = sample_collocation(IntervalDecomposition((0.5,)), 100, 2, 10, seed=0)
    assert np.all((c.pde_points > 0) & (c.pde_points < 1))
    assert c.counts == {"m": 100, "b": 2, "t": 10}
    np.testing.assert_array_equal(np.sort(c.bc_points[:, 0]), [0.0, 1.0])


def test_collocation_b3_interface():
    c = sample_collocation(B3, 50, 20, 30, seed=1)
    np.testing.assert_array_equal(c.interface_points[:, 0], c.interface_points[:, 1])
    np.testing.assert_allclose(c.interface_normals, np.tile([-1, 1], (30, 1)) / math.sqrt(2), atol=1e-15)
    assert np.all(B3.interface_distance(c.pde_points) >= 1e-3)


def test_petal_point_at_quarter_turn():
    p = PETAL.interfaces[0].points(0.75)[0]  # theta = -pi + 2 pi * 0.75 = pi / 2
    assert p == pytest.approx([0.04472135954999579, 0.7447213595499958], abs=1e-14)


def test_collocation_is_deterministic():
    a = sample_collocation(PETAL, 40, 8, 12, seed=3)
    b = sample_collocation(PETAL, 40, 8, 12, seed=3)
    for name in ("pde_points", "bc_points", "interface_points", "interface_normals"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_collocation_counts_must_be_positive():
    with pytest.raises(ValueError):
        sample_collocation(B3, 0, 1, 1, seed=0)


def test_petal_normals():
    theta = np.linspace(-math.pi, math.pi, 1000)
    n = petal_normal(PETAL.curve, theta)
    t = PETAL.curve.tangent(theta)
    assert np.max(np.abs(np.linalg.norm(n, axis=1) - 1)) <= 1e-12
    assert np.max(np.abs(np.sum(n * t, axis=1))) <= 1e-12
    # outward: a small step along n leaves the petal
    pts = PETAL.curve.point(theta) + 1e-6 * n
    assert np.all(PETAL.labels(pts) == 2)


def test_circle_normals_are_radial():
    circle = PetalCurve(amplitude=0.0)
    theta = np.linspace(-3, 3, 50)
    np.testing.assert_allclose(petal_normal(circle, theta),
                               np.stack([np.cos(theta), np.sin(theta)], 1), atol=1e-14)


def test_lift_examples():
    hc = distance_and_lift(IntervalDecomposition(()))
    assert float(hc.lam(np.array([0.0]))) == 0.0
    assert float(hc.lam(np.array([1.0]))) == 0.0
    assert float(hc.lam(np.array([0.3]))) == pytest.approx(0.3 * 0.7, abs=1e-16)
    assert float(hc.lift(np.array([0.3]))) == 0.0
    b3 = distance_and_lift(B3)
    y = np.array([0.3, 0.6])
    assert float(b3.lam(y)) == pytest.approx(0.3 * 0.7 * 0.6 * 0.4, abs=1e-16)


def test_petal_lift_matches_boundary_data():
    rng = np.random.default_rng(0)
    hc = PETAL.hard_constraint()
    pts = np.concatenate([s.sample(rng, 25) for s in PETAL.dirichlet_segments])
    lifted = np.array([float(hc.lift(p)) for p in pts])
    r = np.linalg.norm(pts, axis=1)
    expected = 0.1 * r**4 - 0.01 * np.log(2 * r)
    np.testing.assert_allclose(lifted, expected, atol=1e-14)
    np.testing.assert_allclose(petal_dirichlet(pts), expected, atol=1e-14)
    assert all(float(hc.lam(p)) == 0.0 for p in pts)


# -- properties ---------------------------------------------------------------

DECS = [IntervalDecomposition((0.5,)), B2, B3, PETAL]


@settings(max_examples=40, deadline=None)
@given(k=st.integers(0, 3), seed=st.integers(0, 10**6))
def test_one_hot_partition(k, seed):
    dec = DECS[k]
    pts = dec.lower + (dec.upper - dec.lower) * np.random.default_rng(seed).uniform(size=(64, dec.dim))
    for y in pts:
        h = dec.one_hot(y)
        assert h.sum() == 1.0 and np.count_nonzero(h) == 1


def test_one_hot_partition_10k_points():
    pts = np.random.default_rng(0).uniform(size=(10_000, 1))
    labels = B2.labels(pts)
    onehot = np.eye(5)[labels - 1]
    assert np.all(onehot.sum(1) == 1)
    assert np.all((labels >= 1) & (labels <= 5))


@settings(max_examples=30, deadline=None)
@given(k=st.integers(0, 3), seed=st.integers(0, 10**6))
def test_interface_normals_unit_and_outward(k, seed):
    dec = DECS[k]
    rng = np.random.default_rng(seed)
    for iface in dec.interfaces:
        pts, n = iface.sample(rng, 20)
        assert np.max(np.abs(np.linalg.norm(n, axis=1) - 1)) <= 1e-12
        assert np.max(np.abs(iface.level(pts))) <= 1e-12
        step = pts + 1e-7 * n
        inside = dec.contains(step)
        assert np.all(dec.labels(step[inside]) == iface.pair[1])


@settings(max_examples=20, deadline=None)
@given(k=st.integers(0, 3), seed=st.integers(0, 10**6))
def test_lambda_vanishes_on_dirichlet_and_positive_inside(k, seed):
    dec = DECS[k]
    hc = dec.hard_constraint()
    rng = np.random.default_rng(seed)
    bc = np.concatenate([s.sample(rng, 10) for s in dec.dirichlet_segments])
    lam_b, _ = hc.terms(bc)
    assert np.max(np.abs(np.asarray(lam_b))) <= 1e-15
    inner = dec.lower + (dec.upper - dec.lower) * rng.uniform(1e-9, 1 - 1e-9, size=(10_000, dec.dim))
    lam_i, _ = hc.terms(inner)
    assert np.all(np.asarray(lam_i) > 0)
