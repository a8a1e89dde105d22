"""Gaussian-random-field forcing with a squared-exponential covariance.

Samples are ``mean + L z`` where ``L`` is the Cholesky factor of the jittered
kernel matrix and ``z`` is standard normal from numpy's PCG64 generator
(ziggurat normals).  Row ``i`` of a draw depends only on ``(seed, i)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

DEFAULT_JITTER = 1e-8


class CholeskyError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class GrfConfig:
    mean: float
    length_scale: float
    sensor_points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.sensor_points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        object.__setattr__(self, "sensor_points", pts)
        if self.length_scale <= 0:
            raise ValueError("length scale must be positive")
        if len(pts) < 1:
            raise ValueError("need at least one sensor")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise ValueError("sensor points must be pairwise distinct")


def kernel_matrix(points, length_scale: float, other=None) -> np.ndarray:
    """``K[i, j] = exp(-|x_i - x_j|^2 / (2 l^2))``."""
    if length_scale <= 0:
        raise ValueError("length scale must be positive")
    a = np.asarray(points, dtype=float)
    a = a[:, None] if a.ndim == 1 else a
    b = a if other is None else np.asarray(other, dtype=float)
    b = b[:, None] if b.ndim == 1 else b
    d2 = cdist(a, b, "sqeuclidean")
    return np.exp(-d2 / (2.0 * length_scale**2))


@dataclass(frozen=True, eq=False)
class GrfSampler:
    config: GrfConfig
    chol: np.ndarray
    jitter: float


def build_sampler(config: GrfConfig, jitter: float = DEFAULT_JITTER) -> GrfSampler:
    k = kernel_matrix(config.sensor_points, config.length_scale)
    k[np.diag_indices_from(k)] += jitter
    try:
        chol = np.linalg.cholesky(k)
    except np.linalg.LinAlgError as exc:
        raise CholeskyError(
            f"kernel matrix not positive definite with jitter {jitter:g}; try a larger jitter") from exc
    return GrfSampler(config, chol, jitter)


def sample(sampler: GrfSampler, seed: int, count: int) -> np.ndarray:
    """``count`` draws of shape ``(count, n_sensors)``."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((count, sampler.chol.shape[0]))
    return sampler.config.mean + z @ sampler.chol.T


@dataclass(frozen=True, eq=False)
class TensorGridSampler:
    """Exact draws on a tensor grid via the separable kernel ``k(x) k(y)``.

    The covariance is ``(Kx + eps I) kron (Ky + eps I)``, so memory stays
    linear in the number of grid lines instead of quadratic in grid nodes.
    """

    mean: float
    length_scale: float
    xs: np.ndarray
    ys: np.ndarray
    chol_x: np.ndarray
    chol_y: np.ndarray

    def sample(self, seed: int, count: int) -> np.ndarray:
        """Draws of shape ``(count, len(xs), len(ys))``."""
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((count, len(self.xs), len(self.ys)))
        return self.mean + np.matmul(np.matmul(self.chol_x, z), self.chol_y.T)


def build_tensor_sampler(mean: float, length_scale: float, xs, ys,
                         jitter: float = DEFAULT_JITTER) -> TensorGridSampler:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    chols = []
    for axis in (xs, ys):
        k = kernel_matrix(axis, length_scale)
        k[np.diag_indices_from(k)] += jitter
        try:
            chols.append(np.linalg.cholesky(k))
        except np.linalg.LinAlgError as exc:
            raise CholeskyError(f"1D kernel factorization failed with jitter {jitter:g}") from exc
    return TensorGridSampler(mean, length_scale, xs, ys, chols[0], chols[1])
