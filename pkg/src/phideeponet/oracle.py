"""Reference solutions: conservative finite differences and the petal analytic field.

Both solvers discretize ``div(kappa grad s) = sign * u`` in flux form with
face coefficients equal to the harmonic mean of ``kappa`` along each face.
In 1D the interfaces must sit on grid nodes whenever the solution or the
forcing jumps; each such node then carries the two one-sided values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import splu

from .geometry import IntervalDecomposition, PetalSquare
from .physics import PdeProblem


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class Grid1D:
    lower: float
    upper: float
    n: int

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("need at least 3 nodes")

    @property
    def h(self) -> float:
        return (self.upper - self.lower) / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.lower, self.upper, self.n)

    def node_index(self, y: float) -> int | None:
        k = (y - self.lower) / self.h
        return int(round(k)) if abs(k - round(k)) < 1e-9 else None


@dataclass(frozen=True)
class Solution1D:
    """Nodal solution with left/right limits (distinct only on interface nodes)."""

    grid: Grid1D
    left: np.ndarray
    right: np.ndarray

    @property
    def values(self) -> np.ndarray:
        # Interface nodes belong to the lower-indexed (left) subdomain.
        return self.left


def _cell_harmonic(edges, coeff, a, b):
    """``(b - a) / int_a^b dy / c(y)`` for piecewise-constant ``c`` on ``edges``."""
    total = 0.0
    for k, c in enumerate(coeff):
        lo, hi = max(a, edges[k]), min(b, edges[k + 1])
        if hi > lo:
            total += (hi - lo) / c
    return (b - a) / total


def solve_1d(problem: PdeProblem, u, grid: Grid1D) -> Solution1D:
    """Solve on ``grid``; ``u`` is nodal forcing ``(n,)`` or one-sided limits ``(2, n)``."""
    dec = problem.decomposition
    if not isinstance(dec, IntervalDecomposition):
        raise TypeError("solve_1d needs an interval decomposition")
    if abs(grid.lower - dec.lower[0]) > 1e-12 or abs(grid.upper - dec.upper[0]) > 1e-12:
        raise ValueError("grid must span the decomposition's interval")
    u = np.asarray(u, dtype=float)
    u_left, u_right = (u, u) if u.ndim == 1 else (u[0], u[1])
    n, h = grid.n, grid.h
    if u_left.shape != (n,) or u_right.shape != (n,):
        raise ValueError(f"forcing must have {n} nodal values")

    scale = np.ones(dec.n_sub) if problem.henry is None else np.asarray(problem.henry)
    kappa = np.asarray(problem.kappa)
    jd, jn = problem.jumps(np.array(dec.breaks)[:, None],
                           np.array([i.pair for i in dec.interfaces]).reshape(-1, 2))

    iface_nodes = [grid.node_index(b) for b in dec.breaks]
    trivial = problem.henry is None and not np.any(jd) and not np.any(jn) and np.array_equal(u_left, u_right)
    if any(k is None for k in iface_nodes) and not trivial:
        raise ValueError("interfaces carrying jumps or discontinuous forcing must lie on grid nodes")
    for k, node in enumerate(iface_nodes):
        if node is not None and not 0 < node < n - 1:
            raise ValueError(f"interface {dec.breaks[k]} outside the interior of the grid")

    # v = s / H_q is continuous up to the prescribed jumps; w = v - shift_q is continuous.
    shift = np.concatenate([[0.0], np.cumsum(jd)])
    edges = np.r_[dec.lower[0], dec.breaks, dec.upper[0]]
    y = grid.nodes
    a = np.array([_cell_harmonic(edges, kappa * scale, y[c], y[c + 1]) for c in range(n - 1)])

    rhs = problem.sign * h * h * u_left.copy()
    for k, node in enumerate(iface_nodes):
        if node is not None:
            rhs[node] = problem.sign * h * h * 0.5 * (u_left[node] + u_right[node]) + h * jn[k]

    lower = np.zeros(n)
    diag = np.zeros(n)
    upper = np.zeros(n)
    diag[1:-1] = -(a[1:] + a[:-1])
    lower[1:-1] = a[:-1]
    upper[1:-1] = a[1:]
    end_values = problem.boundary_values(np.array([[grid.lower], [grid.upper]]))
    diag[0] = diag[-1] = 1.0
    rhs[0] = end_values[0] / scale[0] - shift[0]
    rhs[-1] = end_values[1] / scale[-1] - shift[-1]

    banded = np.zeros((3, n))
    banded[0, 1:] = upper[:-1]
    banded[1] = diag
    banded[2, :-1] = lower[1:]
    try:
        w = solve_banded((1, 1), banded, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError("tridiagonal system is singular") from exc

    q_left = dec.labels(y[:, None]) - 1
    q_right = q_left.copy()
    for node in iface_nodes:
        if node is not None:
            q_right[node] += 1
    left = scale[q_left] * (w + shift[q_left])
    right = scale[q_right] * (w + shift[q_right])
    return Solution1D(grid, left, right)


@dataclass(frozen=True)
class Grid2D:
    lower: tuple[float, float]
    upper: tuple[float, float]
    n: int

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("need at least 3 nodes per axis")

    @property
    def h(self) -> float:
        return (self.upper[0] - self.lower[0]) / (self.n - 1)

    @property
    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.linspace(self.lower[0], self.upper[0], self.n),
                np.linspace(self.lower[1], self.upper[1], self.n))

    @property
    def points(self) -> np.ndarray:
        """Nodes flattened with the first coordinate varying slowest, shape (n*n, 2)."""
        xs, ys = self.axes
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=1)


def _face_coefficients(problem: PdeProblem, grid: Grid2D, samples: int = 8):
    """Harmonic mean of ``kappa`` along every x-face (n-1, n) and y-face (n, n-1)."""
    xs, ys = grid.axes
    kappa = np.asarray(problem.kappa)
    frac = (np.arange(samples) + 0.5) / samples

    def harmonic(px, py):
        pts = np.stack([px.ravel(), py.ravel()], axis=1)
        k = kappa[problem.decomposition.labels(pts) - 1].reshape(px.shape)
        return samples / np.sum(1.0 / k, axis=-1)

    fx = xs[:-1, None, None] + frac[None, None, :] * grid.h
    ax = harmonic(np.broadcast_to(fx, (grid.n - 1, grid.n, samples)),
                  np.broadcast_to(ys[None, :, None], (grid.n - 1, grid.n, samples)))
    fy = ys[None, :-1, None] + frac[None, None, :] * grid.h
    ay = harmonic(np.broadcast_to(xs[:, None, None], (grid.n, grid.n - 1, samples)),
                  np.broadcast_to(fy, (grid.n, grid.n - 1, samples)))
    return ax, ay


def assemble_2d(problem: PdeProblem, grid: Grid2D):
    """Sparse operator on interior nodes (row-major in ``(i, j)``) and face coefficients."""
    n, h = grid.n, grid.h
    ax, ay = _face_coefficients(problem, grid)
    m = n - 2
    idx = np.arange(m * m).reshape(m, m)
    rows, cols, vals = [], [], []
    diag = np.zeros((m, m))
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        ii, jj = np.meshgrid(np.arange(1, n - 1), np.arange(1, n - 1), indexing="ij")
        if di:
            coef = ax[np.minimum(ii, ii + di), jj]
        else:
            coef = ay[ii, np.minimum(jj, jj + dj)]
        diag -= coef
        ni, nj = ii + di, jj + dj
        inside = (ni >= 1) & (ni <= n - 2) & (nj >= 1) & (nj <= n - 2)
        rows.append(idx[inside.nonzero()])
        cols.append(idx[ni[inside] - 1, nj[inside] - 1])
        vals.append(coef[inside])
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(diag.ravel())
    mat = sp.csr_matrix((np.concatenate(vals) / h**2, (np.concatenate(rows), np.concatenate(cols))),
                        shape=(m * m, m * m))
    return mat, ax, ay


class Poisson2D:
    """Factorized 2D operator; the LU factors are reused for every forcing."""

    def __init__(self, problem: PdeProblem, grid: Grid2D):
        if problem.henry is not None or problem.jump_value is not None or problem.jump_flux is not None:
            raise NotImplementedError("the 2D solver handles homogeneous jump conditions only")
        self.problem, self.grid = problem, grid
        n, h = grid.n, grid.h
        self.matrix, ax, ay = assemble_2d(problem, grid)
        try:
            self._lu = splu(self.matrix.tocsc())
        except RuntimeError as exc:
            raise SingularSystemError("sparse factorization failed") from exc
        pts = grid.points
        edge = problem.decomposition.on_boundary(pts, tol=1e-9).reshape(n, n)
        s = np.zeros((n, n))
        s[edge] = problem.boundary_values(pts[edge.ravel()])
        self._edge = s
        # Contribution of the known boundary values to each interior equation.
        lift = np.zeros((n - 2, n - 2))
        lift[0, :] += ax[0, 1:-1] * s[0, 1:-1]
        lift[-1, :] += ax[-1, 1:-1] * s[-1, 1:-1]
        lift[:, 0] += ay[1:-1, 0] * s[1:-1, 0]
        lift[:, -1] += ay[1:-1, -1] * s[1:-1, -1]
        self._lift = lift / h**2

    def solve(self, u) -> np.ndarray:
        """Forcing ``(n, n)`` or a batch ``(N, n, n)``; returns nodal solutions of the same shape."""
        n = self.grid.n
        u = np.asarray(u, dtype=float)
        batch = u.reshape(-1, n, n)
        rhs = self.problem.sign * batch[:, 1:-1, 1:-1] - self._lift
        sol = self._lu.solve(rhs.reshape(len(batch), -1).T).T
        if not np.all(np.isfinite(sol)):
            raise SingularSystemError("sparse solve produced non-finite values")
        out = np.repeat(self._edge[None], len(batch), axis=0)
        out[:, 1:-1, 1:-1] = sol.reshape(len(batch), n - 2, n - 2)
        return out.reshape(u.shape)


def solve_2d(problem: PdeProblem, u, grid: Grid2D) -> np.ndarray:
    """Nodal solution of shape ``(n, n)`` indexed ``[i, j]`` for ``(x_i, y_j)``."""
    return Poisson2D(problem, grid).solve(u)


def observed_order(errors, sizes) -> np.ndarray:
    """Pairwise convergence orders ``log(e_k / e_{k+1}) / log(h_k / h_{k+1})``."""
    e = np.asarray(errors, float)
    hs = 1.0 / (np.asarray(sizes, float) - 1.0)
    return np.log(e[:-1] / e[1:]) / np.log(hs[:-1] / hs[1:])


def exponential_closed_form(problem: PdeProblem):
    """Exact solution for the forcing ``u = exp(y)`` in every 1D subdomain.

    Each piece is ``exp(y) / (sign kappa_q) + A_q y + B_q``; the ``2P``
    constants follow from the end values and the two jump conditions
    per interface.  Returns a vectorized ``f(y, side)``.
    """
    dec = problem.decomposition
    P = dec.n_sub
    kappa = np.asarray(problem.kappa)
    scale = np.ones(P) if problem.henry is None else np.asarray(problem.henry)
    c = 1.0 / (problem.sign * kappa)
    breaks = np.array(dec.breaks)
    jd, jn = problem.jumps(breaks[:, None], np.array([i.pair for i in dec.interfaces]).reshape(-1, 2))
    lo, hi = float(dec.lower[0]), float(dec.upper[0])
    ends = problem.boundary_values(np.array([[lo], [hi]]))

    mat = np.zeros((2 * P, 2 * P))
    rhs = np.zeros(2 * P)
    mat[0, [0, 1]] = lo, 1.0
    rhs[0] = ends[0] - c[0] * math.exp(lo)
    last = 2 * (P - 1)
    mat[1, [last, last + 1]] = hi, 1.0
    rhs[1] = ends[1] - c[-1] * math.exp(hi)
    for k, g in enumerate(breaks):
        p, q = 2 * k, 2 * (k + 1)
        e = math.exp(g)
        row = 2 + 2 * k
        # (s_q / H_q) - (s_p / H_p) = j_D
        mat[row, [q, q + 1]] = g / scale[k + 1], 1.0 / scale[k + 1]
        mat[row, [p, p + 1]] = -g / scale[k], -1.0 / scale[k]
        rhs[row] = jd[k] - e * (c[k + 1] / scale[k + 1] - c[k] / scale[k])
        # kappa_q s_q' - kappa_p s_p' = j_N
        mat[row + 1, q] = kappa[k + 1]
        mat[row + 1, p] = -kappa[k]
        rhs[row + 1] = jn[k] - e * (kappa[k + 1] * c[k + 1] - kappa[k] * c[k])
    coef = np.linalg.solve(mat, rhs).reshape(P, 2)

    def f(y, side):
        y = np.asarray(y, dtype=float)
        q = np.asarray(side) - 1
        return c[q] * np.exp(y) + coef[q, 0] * y + coef[q, 1]

    return f


# -- petal analytic field -------------------------------------------------


def _petal_s1(y):
    return y[0] ** 2 + y[1] ** 2


def _petal_s2(y):
    r2 = y[0] ** 2 + y[1] ** 2
    return 0.1 * r2**2 - 0.005 * jnp.log(4.0 * r2)


def petal_analytic(y, side: int) -> float:
    y = np.asarray(y, dtype=float)
    if side == 1:
        return float(_petal_s1(y))
    if side == 2:
        if np.allclose(y, 0.0):
            raise ValueError("the exterior branch is singular at the origin")
        return float(_petal_s2(y))
    raise ValueError("side must be 1 or 2")


@dataclass(frozen=True, eq=False)
class PetalData:
    """Forcing, jumps and boundary data consistent with the analytic petal field."""

    kappa: tuple[float, float]

    @property
    def forcing_params(self) -> tuple[float, float]:
        """``(p1, p2)`` with ``u1 = p1`` and ``u2 = p2 |y|^2`` reproducing the analytic field."""
        return 4.0 * self.kappa[0], 1.6 * self.kappa[1]

    def forcing(self, points, side) -> np.ndarray:
        pts = np.atleast_2d(points)
        side = np.broadcast_to(np.asarray(side), (len(pts),))
        p1, p2 = self.forcing_params
        return np.where(side == 1, p1, p2 * np.sum(pts**2, axis=1))

    def jump_value(self, points, pairs=None) -> np.ndarray:
        pts = jnp.asarray(np.atleast_2d(points))
        return np.asarray(jax.vmap(_petal_s2)(pts) - jax.vmap(_petal_s1)(pts))

    def jump_flux(self, points, pairs=None) -> np.ndarray:
        pts = np.atleast_2d(points)
        normals = PetalSquare().interfaces[0].normals(pts)
        g1 = np.asarray(jax.vmap(jax.grad(_petal_s1))(jnp.asarray(pts)))
        g2 = np.asarray(jax.vmap(jax.grad(_petal_s2))(jnp.asarray(pts)))
        flux = self.kappa[1] * g2 - self.kappa[0] * g1
        return np.sum(flux * normals, axis=1)

    def dirichlet(self, points) -> np.ndarray:
        pts = jnp.asarray(np.atleast_2d(points))
        return np.asarray(jax.vmap(_petal_s2)(pts))


def derived_petal_data(kappa=(4.0, 10.0)) -> PetalData:
    return PetalData(tuple(float(k) for k in kappa))


@jax.tree_util.register_pytree_node_class
@dataclass(frozen=True)
class AnalyticFieldModel:
    """Adapter exposing a two-sided analytic field through the model evaluation protocol."""

    decomposition: object
    sides_fns: tuple
    hard_constraint: None = None

    def tree_flatten(self):
        return (), (self.decomposition, self.sides_fns)

    @classmethod
    def tree_unflatten(cls, aux, children):
        return cls(*aux)

    def coefficients(self, inputs):
        n = int(np.shape(inputs[0])[0]) if len(inputs) else 1
        return jnp.ones((n, 1))

    def trunk_fn(self, sides):
        fns = self.sides_fns

        def f(y, p):
            vals = jnp.stack([fn(y) for fn in fns])
            return vals[p[0].astype(int) - 1][None]

        return f, jnp.asarray(sides, dtype=jnp.float64)[:, None]


def petal_field_model(dec: PetalSquare | None = None) -> AnalyticFieldModel:
    return AnalyticFieldModel(dec or PetalSquare(), (_petal_s1, _petal_s2))
