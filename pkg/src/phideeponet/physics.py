"""PDE, boundary and interface residuals and the training loss.

Problems take the form ``div(kappa_q grad s) = sign * u_q`` in each subdomain
with piecewise-constant ``kappa``.  Across an interface between ``p`` and
``q`` (normal out of ``p``)::

    [v]          = j_D      v = s, or s / H_q for the Henry-law form
    [kappa ds/dn] = j_N

where ``[f] = f_q - f_p``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import jax.numpy as jnp
import numpy as np

from .deeponet import InputFunctionSample, evaluate
from .geometry import CollocationSet, Decomposition


class ResidualDomainError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PdeProblem:
    decomposition: Decomposition
    kappa: tuple[float, ...]
    sign: float = 1.0
    henry: tuple[float, ...] | None = None
    jump_value: Callable | None = None
    jump_flux: Callable | None = None
    dirichlet: Callable | None = None

    def __post_init__(self):
        object.__setattr__(self, "kappa", tuple(float(k) for k in self.kappa))
        if len(self.kappa) != self.decomposition.n_sub or min(self.kappa) <= 0:
            raise ValueError("need one positive kappa per subdomain")
        if self.henry is not None:
            object.__setattr__(self, "henry", tuple(float(h) for h in self.henry))
            if len(self.henry) != self.decomposition.n_sub or min(self.henry) <= 0:
                raise ValueError("need one positive Henry coefficient per subdomain")
        if self.sign not in (1.0, -1.0):
            raise ValueError("sign must be +1 or -1")

    def kappa_of(self, sides) -> np.ndarray:
        return np.asarray(self.kappa)[np.asarray(sides) - 1]

    def scale_of(self, sides) -> np.ndarray:
        if self.henry is None:
            return np.ones(len(np.atleast_1d(sides)))
        return np.asarray(self.henry)[np.asarray(sides) - 1]

    def boundary_values(self, points) -> np.ndarray:
        f = self.dirichlet or self.decomposition.dirichlet_value
        return np.asarray(f(np.atleast_2d(points)), dtype=float)

    def jumps(self, points, pairs) -> tuple[np.ndarray, np.ndarray]:
        pts = np.atleast_2d(points)
        pairs = np.atleast_2d(pairs)
        zero = np.zeros(len(pts))
        jd = zero if self.jump_value is None else np.asarray(self.jump_value(pts, pairs), float)
        jn = zero if self.jump_flux is None else np.asarray(self.jump_flux(pts, pairs), float)
        return jd, jn


@dataclass(frozen=True)
class LossBreakdown:
    pde: float
    bc: float
    int_value: float
    int_flux: float

    @property
    def interface(self) -> float:
        return self.int_value + self.int_flux

    @property
    def total(self) -> float:
        return self.pde + self.bc + self.int_value + self.int_flux

    def as_dict(self) -> dict:
        return {"L_pde": self.pde, "L_bc": self.bc, "L_int_value": self.int_value,
                "L_int_flux": self.int_flux, "total": self.total}


@dataclass(frozen=True)
class LossData:
    """Everything the loss needs besides the model, as dense arrays."""

    inputs: tuple              # per-subdomain sensor values, each (N, m_q)
    forcing: jnp.ndarray       # (N, m) forcing at the PDE points
    colloc: CollocationSet
    pde_kappa: jnp.ndarray     # (m,)
    bc_values: jnp.ndarray     # (b,)
    jump_value: jnp.ndarray    # (t,)
    jump_flux: jnp.ndarray     # (t,)
    kappa_p: jnp.ndarray       # (t,)
    kappa_q: jnp.ndarray
    scale_p: jnp.ndarray       # (t,) Henry coefficients (ones for plain jumps)
    scale_q: jnp.ndarray

    @property
    def n_samples(self) -> int:
        return int(self.forcing.shape[0])


def make_loss_data(problem: PdeProblem, inputs: Sequence, forcing, colloc: CollocationSet) -> LossData:
    forcing = jnp.asarray(forcing, dtype=jnp.float64)
    inputs = tuple(jnp.asarray(u, dtype=jnp.float64) for u in inputs)
    if forcing.ndim != 2 or forcing.shape[1] != len(colloc.pde_points):
        raise ValueError("forcing must have shape (N, m) matching the PDE collocation points")
    if any(u.shape[0] != forcing.shape[0] for u in inputs):
        raise ValueError("every branch input needs one row per sample")
    pairs = colloc.interface_pairs
    jd, jn = problem.jumps(colloc.interface_points, pairs)
    return LossData(
        inputs=inputs,
        forcing=forcing,
        colloc=colloc,
        pde_kappa=jnp.asarray(problem.kappa_of(colloc.pde_sides)),
        bc_values=jnp.asarray(problem.boundary_values(colloc.bc_points)),
        jump_value=jnp.asarray(jd),
        jump_flux=jnp.asarray(jn),
        kappa_p=jnp.asarray(problem.kappa_of(pairs[:, 0])),
        kappa_q=jnp.asarray(problem.kappa_of(pairs[:, 1])),
        scale_p=jnp.asarray(problem.scale_of(pairs[:, 0])),
        scale_q=jnp.asarray(problem.scale_of(pairs[:, 1])),
    )


def residual_arrays(problem: PdeProblem, model, data: LossData) -> dict:
    """All residuals: ``pde`` (N, m), ``bc`` (N, b), ``value`` and ``flux`` (N, t)."""
    c = data.colloc
    coeffs = model.coefficients(data.inputs)
    _, _, lap = evaluate(model, coeffs, c.pde_points, c.pde_sides, order=2)
    r_pde = data.pde_kappa * lap - problem.sign * data.forcing

    s_bc = evaluate(model, coeffs, c.bc_points, c.bc_sides, order=0)
    r_bc = s_bc - data.bc_values

    pts, n = c.interface_points, jnp.asarray(c.interface_normals)
    s_p, g_p = evaluate(model, coeffs, pts, c.interface_pairs[:, 0], order=1)
    s_q, g_q = evaluate(model, coeffs, pts, c.interface_pairs[:, 1], order=1)
    r_val = (s_q / data.scale_q - s_p / data.scale_p) - data.jump_value
    flux_q = data.kappa_q * jnp.einsum("nmd,md->nm", g_q, n)
    flux_p = data.kappa_p * jnp.einsum("nmd,md->nm", g_p, n)
    r_flux = (flux_q - flux_p) - data.jump_flux
    return {"pde": r_pde, "bc": r_bc, "value": r_val, "flux": r_flux}


def loss_terms(problem: PdeProblem, model, data: LossData) -> dict:
    """Mean-squared residuals as jax scalars (traceable)."""
    r = residual_arrays(problem, model, data)
    n = data.n_samples
    t = r["value"].shape[1]
    return {
        "pde": jnp.mean(r["pde"] ** 2),
        "bc": jnp.mean(r["bc"] ** 2),
        "int_value": jnp.sum(r["value"] ** 2) / (n * t),
        "int_flux": jnp.sum(r["flux"] ** 2) / (n * t),
    }


def total_loss(problem: PdeProblem, model, data: LossData) -> LossBreakdown:
    terms = loss_terms(problem, model, data)
    out = LossBreakdown(**{k: float(v) for k, v in terms.items()})
    for name, value in out.as_dict().items():
        if not np.isfinite(value):
            r = residual_arrays(problem, model, data)
            key = {"L_pde": "pde", "L_bc": "bc", "L_int_value": "value", "L_int_flux": "flux"}.get(name, "pde")
            i, j = np.argwhere(~np.isfinite(np.asarray(r[key])))[0]
            raise FloatingPointError(f"non-finite {key} residual at sample {i}, point {j}")
    return out


def rel_l2(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    norm = np.linalg.norm(truth)
    if norm == 0.0:
        raise ZeroDivisionError("relative L2 error undefined for a zero reference")
    return float(np.linalg.norm(pred - truth) / norm)


# -- single-point residuals -----------------------------------------------


def _forcing_at(u: InputFunctionSample, y, q: int) -> float:
    if u.forcing is None:
        raise ValueError("sample carries no pointwise forcing; attach one or use reconstruct_forcing")
    return float(u.forcing(np.asarray(y, float), q))


def pde_residual(problem: PdeProblem, model, u: InputFunctionSample, y) -> float:
    dec = problem.decomposition
    y = np.atleast_1d(np.asarray(y, float))
    if dec.interface_distance(y[None])[0] <= 1e-12:
        raise ResidualDomainError("PDE residual is undefined on an interface")
    q = dec.subdomain_of(y)
    _, _, lap = evaluate(model, model.coefficients(u.batch()), y[None], np.array([q]), order=2)
    return float(problem.kappa[q - 1] * lap[0, 0] - problem.sign * _forcing_at(u, y, q))


def bc_residual(problem: PdeProblem, model, u: InputFunctionSample, y) -> float:
    dec = problem.decomposition
    y = np.atleast_1d(np.asarray(y, float))
    if not dec.on_boundary(y[None])[0]:
        raise ResidualDomainError(f"point {y.tolist()} is not on the external boundary")
    q = dec.subdomain_of(y)
    s = evaluate(model, model.coefficients(u.batch()), y[None], np.array([q]))
    return float(s[0, 0] - problem.boundary_values(y[None])[0])


def interface_residuals(problem: PdeProblem, model, u: InputFunctionSample, y, pair, normal):
    """``(r_value, r_flux)`` from two-sided evaluation at an interface point."""
    dec = problem.decomposition
    p, q = (int(v) for v in pair)
    y = np.atleast_1d(np.asarray(y, float))
    match = [i for i in dec.interfaces if tuple(i.pair) == (p, q)]
    if not match or abs(match[0].level(y[None])[0]) > 1e-9:
        raise ResidualDomainError(f"point {y.tolist()} is not on an interface between {p} and {q}")
    normal = np.asarray(normal, float)
    coeffs = model.coefficients(u.batch())
    s_p, g_p = evaluate(model, coeffs, y[None], np.array([p]), order=1)
    s_q, g_q = evaluate(model, coeffs, y[None], np.array([q]), order=1)
    h = problem.scale_of(np.array([p, q]))
    jd, jn = problem.jumps(y[None], np.array([[p, q]]))
    r_val = float(s_q[0, 0] / h[1] - s_p[0, 0] / h[0] - jd[0])
    r_flux = float((problem.kappa[q - 1] * g_q[0, 0] - problem.kappa[p - 1] * g_p[0, 0]) @ normal - jn[0])
    return r_val, r_flux


def reconstruct_forcing(sensors: Sequence[np.ndarray], values: Sequence[np.ndarray]) -> Callable:
    """Pointwise forcing from sensor values of each subdomain.

    Cubic splines in 1D; bilinear interpolation on tensor sensor grids in 2D.
    """
    from scipy.interpolate import CubicSpline, RegularGridInterpolator

    interps = []
    for xs, vs in zip(sensors, values):
        xs = np.asarray(xs, float)
        vs = np.asarray(vs, float)
        if xs.shape[1] == 1:
            order = np.argsort(xs[:, 0])
            interps.append(CubicSpline(xs[order, 0], vs[order], extrapolate=True))
        else:
            gx, gy = np.unique(xs[:, 0]), np.unique(xs[:, 1])
            if len(gx) * len(gy) != len(xs):
                raise ValueError("2D reconstruction needs sensors on a tensor grid")
            grid = np.full((len(gx), len(gy)), np.nan)
            grid[np.searchsorted(gx, xs[:, 0]), np.searchsorted(gy, xs[:, 1])] = vs
            interps.append(RegularGridInterpolator((gx, gy), grid, bounds_error=False, fill_value=None))

    def forcing(y, q):
        f = interps[q - 1]
        y = np.atleast_1d(y)
        return float(f(y[0]) if len(y) == 1 else f(y[None])[0])

    return forcing
