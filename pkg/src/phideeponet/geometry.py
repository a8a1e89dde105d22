"""Domain decompositions, interfaces, collocation sampling and Dirichlet lifts.

Subdomains are numbered from 1.  A point lying exactly on an interface is
assigned to the lower-indexed neighbour; interface residuals never rely on
that choice because they evaluate both sides explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import jax
import jax.numpy as jnp
import numpy as np


class DomainError(ValueError):
    """A point lies outside the computational domain."""


@dataclass(frozen=True, eq=False)
class InterfaceSpec:
    """Interface between subdomains ``pair = (p, q)``, normals pointing out of ``p``."""

    pair: tuple[int, int]
    point_fn: Callable[[np.ndarray], np.ndarray]
    normal_fn: Callable[[np.ndarray], np.ndarray]
    level_fn: Callable[[np.ndarray], np.ndarray]

    def points(self, param) -> np.ndarray:
        """Map interface parameters in [0, 1] to points of shape (n, d)."""
        return self.point_fn(np.atleast_1d(np.asarray(param, dtype=float)))

    def normals(self, points) -> np.ndarray:
        return self.normal_fn(np.atleast_2d(points))

    def level(self, points) -> np.ndarray:
        """Defining equation of the interface; zero on it."""
        return self.level_fn(np.atleast_2d(points))

    def sample(self, rng: np.random.Generator, count: int):
        pts = self.points(rng.uniform(size=count))
        return pts, self.normals(pts)


@dataclass(frozen=True)
class BoundarySegment:
    """Straight Dirichlet segment (a single point in 1D) owned by subdomain ``side``."""

    side: int
    start: tuple[float, ...]
    end: tuple[float, ...]

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.subtract(self.end, self.start)))

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        a, b = np.asarray(self.start, float), np.asarray(self.end, float)
        t = rng.uniform(size=(count, 1))
        return a + t * (b - a)


@dataclass(frozen=True, eq=False)
class HardConstraint:
    """Reparameterization ``s = lam(y) * net + lift(y)`` for exact Dirichlet data.

    Both callables act on a single point ``(d,)`` and are written in jax so
    that spatial derivatives come for free.
    """

    lam: Callable
    lift: Callable

    def terms(self, points, order: int = 0):
        """Values (and gradients / Laplacians for ``order >= 1`` / ``2``) at ``points``."""
        points = jnp.asarray(points, dtype=jnp.float64)
        lam = jax.vmap(self.lam)(points)
        lift = jax.vmap(self.lift)(points)
        if order == 0:
            return lam, lift
        g_lam = jax.vmap(jax.grad(self.lam))(points)
        g_lift = jax.vmap(jax.grad(self.lift))(points)
        if order == 1:
            return lam, lift, g_lam, g_lift
        l_lam = jax.vmap(lambda y: jnp.trace(jax.hessian(self.lam)(y)))(points)
        l_lift = jax.vmap(lambda y: jnp.trace(jax.hessian(self.lift)(y)))(points)
        return lam, lift, g_lam, g_lift, l_lam, l_lift


@dataclass(frozen=True)
class CollocationSet:
    pde_points: np.ndarray
    pde_sides: np.ndarray
    bc_points: np.ndarray
    bc_sides: np.ndarray
    interface_points: np.ndarray
    interface_pairs: np.ndarray
    interface_normals: np.ndarray

    @property
    def counts(self) -> dict[str, int]:
        return {
            "m": len(self.pde_points),
            "b": len(self.bc_points),
            "t": len(self.interface_points),
        }


class Decomposition:
    """Axis-aligned box split into ``n_sub`` non-overlapping subdomains."""

    dim: int
    n_sub: int
    lower: np.ndarray
    upper: np.ndarray
    interfaces: tuple[InterfaceSpec, ...]
    dirichlet_segments: tuple[BoundarySegment, ...]
    name: str = "domain"

    def _labels(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def contains(self, points) -> np.ndarray:
        pts = self._as_points(points)
        tol = 1e-12
        return np.all((pts >= self.lower - tol) & (pts <= self.upper + tol), axis=1)

    def labels(self, points) -> np.ndarray:
        pts = self._as_points(points)
        if not np.all(self.contains(pts)):
            bad = pts[~self.contains(pts)][0]
            raise DomainError(f"point {bad.tolist()} lies outside {self.name}")
        return self._labels(pts)

    def subdomain_of(self, y) -> int:
        return int(self.labels(np.reshape(np.asarray(y, float), (1, self.dim)))[0])

    def one_hot(self, y) -> np.ndarray:
        out = np.zeros(self.n_sub)
        out[self.subdomain_of(y) - 1] = 1.0
        return out

    def interface_distance(self, points) -> np.ndarray:
        """Distance-like measure to the nearest interface (used only for resampling)."""
        pts = self._as_points(points)
        return np.min(np.stack([np.abs(i.level(pts)) for i in self.interfaces]), axis=0)

    def on_boundary(self, points, tol: float = 1e-12) -> np.ndarray:
        pts = self._as_points(points)
        near = np.isclose(pts, self.lower, atol=tol) | np.isclose(pts, self.upper, atol=tol)
        return np.any(near, axis=1) & self.contains(pts)

    def dirichlet_value(self, points) -> np.ndarray:
        """Dirichlet data on the external boundary (zero unless overridden)."""
        return np.zeros(len(self._as_points(points)))

    def hard_constraint(self) -> HardConstraint:
        raise NotImplementedError

    def _as_points(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, self.dim) if self.dim == 1 else pts.reshape(1, self.dim)
        if pts.shape[-1] != self.dim:
            raise ValueError(f"expected points with {self.dim} coordinates, got shape {pts.shape}")
        return pts


class IntervalDecomposition(Decomposition):
    """``[lower, upper]`` cut at ``breaks``; Dirichlet data at both ends."""

    dim = 1

    def __init__(self, breaks: Sequence[float], lower: float = 0.0, upper: float = 1.0,
                 boundary_values: tuple[float, float] = (0.0, 0.0), name: str = "interval"):
        breaks = tuple(float(b) for b in breaks)
        if list(breaks) != sorted(breaks) or any(not lower < b < upper for b in breaks):
            raise ValueError(f"breaks {breaks} must be increasing and inside ({lower}, {upper})")
        self.breaks = breaks
        self.n_sub = len(breaks) + 1
        self.lower = np.array([lower])
        self.upper = np.array([upper])
        self.boundary_values = tuple(float(v) for v in boundary_values)
        self.name = name
        self.interfaces = tuple(self._interface(k, b) for k, b in enumerate(breaks))
        self.dirichlet_segments = (
            BoundarySegment(1, (lower,), (lower,)),
            BoundarySegment(self.n_sub, (upper,), (upper,)),
        )

    @staticmethod
    def _interface(k: int, b: float) -> InterfaceSpec:
        return InterfaceSpec(
            pair=(k + 1, k + 2),
            point_fn=lambda t: np.full((len(t), 1), b),
            normal_fn=lambda p: np.ones((len(p), 1)),
            level_fn=lambda p: p[:, 0] - b,
        )

    @property
    def lengths(self) -> np.ndarray:
        edges = np.r_[self.lower[0], self.breaks, self.upper[0]]
        return np.diff(edges)

    def _labels(self, pts):
        # side="left" puts a point sitting on a break into the lower subdomain.
        return np.searchsorted(np.asarray(self.breaks), pts[:, 0], side="left") + 1

    def dirichlet_value(self, points):
        pts = self._as_points(points)
        lo, hi = self.lower[0], self.upper[0]
        a, b = self.boundary_values
        return a + (b - a) * (pts[:, 0] - lo) / (hi - lo)

    def hard_constraint(self) -> HardConstraint:
        lo, hi = float(self.lower[0]), float(self.upper[0])
        a, b = self.boundary_values
        return HardConstraint(
            lam=lambda y: (y[0] - lo) * (hi - y[0]),
            lift=lambda y: a + (b - a) * (y[0] - lo) / (hi - lo),
        )


class DiagonalSquare(Decomposition):
    """Unit square split by ``x2 = x1``: subdomain 1 is ``x2 <= x1``."""

    dim = 2
    n_sub = 2

    def __init__(self, name: str = "diagonal-square"):
        self.lower = np.zeros(2)
        self.upper = np.ones(2)
        self.name = name
        s = 1.0 / math.sqrt(2.0)
        self.interfaces = (
            InterfaceSpec(
                pair=(1, 2),
                point_fn=lambda t: np.stack([t, t], axis=1),
                normal_fn=lambda p: np.tile([-s, s], (len(p), 1)),
                level_fn=lambda p: (p[:, 1] - p[:, 0]) * s,
            ),
        )
        self.dirichlet_segments = (
            BoundarySegment(1, (1.0, 0.0), (1.0, 1.0)),
            BoundarySegment(1, (0.0, 0.0), (1.0, 0.0)),
            BoundarySegment(2, (0.0, 0.0), (0.0, 1.0)),
            BoundarySegment(2, (0.0, 1.0), (1.0, 1.0)),
        )

    def _labels(self, pts):
        return np.where(pts[:, 1] <= pts[:, 0], 1, 2)

    def hard_constraint(self) -> HardConstraint:
        return HardConstraint(
            lam=lambda y: y[0] * (1.0 - y[0]) * y[1] * (1.0 - y[1]),
            lift=lambda y: 0.0 * y[0],
        )


@dataclass(frozen=True)
class PetalCurve:
    """Star-shaped curve ``c + r(theta) (cos theta, sin theta)``, ``r = a + b sin(k theta)``."""

    center: float = 0.02 * math.sqrt(5.0)
    base_radius: float = 0.5
    amplitude: float = 0.2
    lobes: int = 5

    def radius(self, theta):
        return self.base_radius + self.amplitude * np.sin(self.lobes * np.asarray(theta))

    def point(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, float))
        r = self.radius(theta)
        return np.stack([self.center + r * np.cos(theta), self.center + r * np.sin(theta)], axis=1)

    def tangent(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, float))
        r = self.radius(theta)
        dr = self.amplitude * self.lobes * np.cos(self.lobes * theta)
        return np.stack([dr * np.cos(theta) - r * np.sin(theta),
                         dr * np.sin(theta) + r * np.cos(theta)], axis=1)

    def polar(self, points):
        pts = np.atleast_2d(points)
        dx, dy = pts[:, 0] - self.center, pts[:, 1] - self.center
        return np.hypot(dx, dy), np.arctan2(dy, dx)


def petal_normal(curve: PetalCurve, theta) -> np.ndarray:
    """Unit normal pointing out of the petal interior (tangent rotated by -90 degrees)."""
    t = curve.tangent(theta)
    norm = np.linalg.norm(t, axis=1, keepdims=True)
    if np.any(norm == 0.0):
        raise ValueError("degenerate tangent on the petal curve")
    return np.stack([t[:, 1], -t[:, 0]], axis=1) / norm


def petal_dirichlet(points) -> np.ndarray:
    """Outer boundary data ``0.1 r^4 - 0.01 log(2 r)`` with ``r = |y|``."""
    pts = np.atleast_2d(points)
    r2 = np.sum(pts**2, axis=1)
    return 0.1 * r2**2 - 0.005 * np.log(4.0 * r2)


class PetalSquare(Decomposition):
    """``[-1, 1]^2`` with a petal-shaped inclusion (subdomain 1 inside)."""

    dim = 2
    n_sub = 2

    def __init__(self, curve: PetalCurve | None = None, name: str = "petal-square"):
        self.curve = curve or PetalCurve()
        self.lower = -np.ones(2)
        self.upper = np.ones(2)
        self.name = name
        curve = self.curve

        def level(p):
            rho, theta = curve.polar(p)
            return rho - curve.radius(theta)

        self.interfaces = (
            InterfaceSpec(
                pair=(1, 2),
                point_fn=lambda t: curve.point(-math.pi + 2.0 * math.pi * t),
                normal_fn=lambda p: petal_normal(curve, curve.polar(p)[1]),
                level_fn=level,
            ),
        )
        corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
        self.dirichlet_segments = tuple(
            BoundarySegment(2, corners[k], corners[(k + 1) % 4]) for k in range(4)
        )

    def _labels(self, pts):
        rho, theta = self.curve.polar(pts)
        return np.where(rho <= self.curve.radius(theta), 1, 2)

    def dirichlet_value(self, points):
        return petal_dirichlet(self._as_points(points))

    def hard_constraint(self) -> HardConstraint:
        # rho^2 = 1 + y1^2 y2^2 equals |y|^2 on the box edges and stays >= 1 inside,
        # which keeps the logarithm smooth near the origin.
        def lift(y):
            rho2 = 1.0 + y[0] ** 2 * y[1] ** 2
            return 0.1 * rho2**2 - 0.005 * jnp.log(4.0 * rho2)

        return HardConstraint(
            lam=lambda y: (1.0 - y[0] ** 2) * (1.0 - y[1] ** 2),
            lift=lift,
        )


def distance_and_lift(dec: Decomposition) -> HardConstraint:
    return dec.hard_constraint()


def sample_collocation(dec: Decomposition, m: int, b: int, t: int, seed: int,
                       interface_gap: float = 1e-3) -> CollocationSet:
    """Random PDE, boundary and interface points (``t`` per interface)."""
    if min(m, b, t) <= 0:
        raise ValueError("collocation counts must be positive")
    rng = np.random.default_rng(seed)

    chunks, have = [], 0
    while have < m:
        cand = dec.lower + (dec.upper - dec.lower) * rng.uniform(size=(2 * m, dec.dim))
        interior = np.all((cand > dec.lower) & (cand < dec.upper), axis=1)
        gap = dec.interface_distance(cand)
        keep = interior & (gap >= interface_gap if dec.dim > 1 else gap > 0.0)
        chunks.append(cand[keep])
        have += int(keep.sum())
    pde = np.concatenate(chunks)[:m]

    segs = dec.dirichlet_segments
    if dec.dim == 1:
        which = np.arange(b) % len(segs)
    else:
        weights = np.array([s.length for s in segs])
        which = rng.choice(len(segs), size=b, p=weights / weights.sum())
    bc = np.zeros((b, dec.dim))
    bc_sides = np.zeros(b, dtype=int)
    for k, seg in enumerate(segs):
        sel = np.flatnonzero(which == k)
        if len(sel):
            bc[sel] = seg.sample(rng, len(sel))
            bc_sides[sel] = seg.side

    pts, normals, pairs = [], [], []
    for iface in dec.interfaces:
        p, n = iface.sample(rng, t)
        pts.append(p)
        normals.append(n)
        pairs.append(np.tile(iface.pair, (t, 1)))

    return CollocationSet(
        pde_points=pde,
        pde_sides=dec.labels(pde),
        bc_points=bc,
        bc_sides=bc_sides,
        interface_points=np.concatenate(pts),
        interface_pairs=np.concatenate(pairs),
        interface_normals=np.concatenate(normals),
    )
