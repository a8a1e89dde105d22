"""The six interface benchmarks and their default (desk-scale) settings."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..geometry import Decomposition, DiagonalSquare, IntervalDecomposition, PetalSquare
from ..oracle import derived_petal_data
from ..physics import PdeProblem

BENCHMARK_IDS = ("B1", "B2", "B3", "B4", "B5", "B6")
DESK_FRACTION = 5
DESK_FLOOR = 80


class ConfigError(ValueError):
    """Invalid benchmark or run configuration."""


@dataclass(frozen=True, eq=False)
class BenchmarkInstance:
    id: str
    problem: PdeProblem
    forcing: str                 # "grf", "grf-piecewise", "grf-2d" or "petal"
    mean: float
    length_scale: float
    sensors: tuple               # per-subdomain sensor coordinates (m_q, d)
    n_train: int
    n_test: int
    m: int
    b: int
    t: int
    grid_n: int
    title: str = ""

    @property
    def decomposition(self) -> Decomposition:
        return self.problem.decomposition

    @property
    def dim(self) -> int:
        return self.decomposition.dim

    @property
    def sensor_counts(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.sensors)

    @property
    def n_sensors(self) -> int:
        return sum(self.sensor_counts)

    def describe(self) -> dict:
        return {
            "id": self.id,
            "title": self.title,
            "forcing": self.forcing,
            "kappa": list(self.problem.kappa),
            "henry": None if self.problem.henry is None else list(self.problem.henry),
            "sign": self.problem.sign,
            "mean": self.mean,
            "length_scale": self.length_scale,
            "sensor_counts": list(self.sensor_counts),
            "n_train": self.n_train,
            "n_test": self.n_test,
            "collocation": {"m": self.m, "b": self.b, "t": self.t},
            "grid_n": self.grid_n,
        }


def _split_sensors(dec: Decomposition, points: np.ndarray) -> tuple:
    labels = dec.labels(points)
    return tuple(points[labels == q] for q in range(1, dec.n_sub + 1))


def interval_sensors(dec: IntervalDecomposition, total: int, piecewise: bool) -> tuple:
    """Equispaced sensors; per subdomain (cell-centred, proportional to length) when ``piecewise``."""
    lo, hi = float(dec.lower[0]), float(dec.upper[0])
    if not piecewise:
        return _split_sensors(dec, np.linspace(lo, hi, total)[:, None])
    lengths = dec.lengths
    counts = np.floor(total * lengths / lengths.sum()).astype(int)
    counts[np.argsort(-(total * lengths / lengths.sum() - counts))[: total - counts.sum()]] += 1
    edges = np.r_[lo, dec.breaks, hi]
    return tuple((a + (b - a) * (np.arange(c) + 0.5) / c)[:, None]
                 for a, b, c in zip(edges[:-1], edges[1:], counts))


def grid_sensor_indices(grid_n: int, per_axis: int) -> np.ndarray:
    """Node indices of a ``per_axis`` sensor lattice inside a ``grid_n`` grid (2, 7, ... for 20 of 101)."""
    if not 1 <= per_axis <= grid_n - 2:
        raise ConfigError(f"cannot place {per_axis} sensors per axis on a {grid_n}-node grid")
    return np.floor((np.arange(per_axis) + 0.5) * (grid_n - 1) / per_axis).astype(int)


def petal_sensors(dec: PetalSquare, per_side: int, seed: int = 0) -> tuple:
    rng = np.random.default_rng(seed)
    out = []
    for q in (1, 2):
        pts = np.empty((0, 2))
        while len(pts) < per_side:
            cand = rng.uniform(-1.0, 1.0, size=(4 * per_side, 2))
            inside = np.all(np.abs(cand) < 1.0, axis=1) & (dec.labels(cand) == q)
            inside &= np.abs(dec.interface_distance(cand)) > 1e-2
            pts = np.concatenate([pts, cand[inside]])
        out.append(pts[:per_side])
    return tuple(out)


def _scaled(n_paper: int, paper_scale: bool) -> int:
    return n_paper if paper_scale else max(n_paper // DESK_FRACTION, DESK_FLOOR)


def get_benchmark(bench_id: str, paper_scale: bool = False, sensors: int | None = None,
                  n_train: int | None = None, mean: float | None = None,
                  length_scale: float | None = None) -> BenchmarkInstance:
    """Build one of B1..B6.  ``sensors`` is the total count (per axis on the B3 lattice, per side for B6)."""
    bid = bench_id.upper()
    if bid not in BENCHMARK_IDS:
        raise ConfigError(f"unknown benchmark {bench_id!r}; choose from {', '.join(BENCHMARK_IDS)}")
    if bid in ("B1", "B2", "B4", "B5"):
        breaks = (0.5,) if bid in ("B1", "B5") else (0.2, 0.4, 0.6, 0.8)
        dec = IntervalDecomposition(breaks, name=bid)
        kappa, henry, counts, title = {
            "B1": ((5.0, 0.1), None, (1000, 250), "1D, single interface"),
            "B2": ((2.0, 0.1, 0.5, 2.0, 0.7), None, (5000, 500), "1D, four interfaces"),
            "B4": ((1.0, 5.0, 1.0, 2.0, 5.0), None, (10000, 1000), "1D, four interfaces, piecewise input"),
            "B5": ((2.0, 1.0), (1.0, 2.0), (5000, 500), "1D, Henry-law jump"),
        }[bid]
        piecewise = bid in ("B4", "B5")
        inst = BenchmarkInstance(
            id=bid, problem=PdeProblem(dec, kappa, henry=henry),
            forcing="grf-piecewise" if piecewise else "grf", mean=1.0, length_scale=0.2,
            sensors=interval_sensors(dec, sensors or 100, piecewise),
            n_train=_scaled(counts[0], paper_scale), n_test=counts[1],
            m=100, b=2, t=10, grid_n=201, title=title)
    elif bid == "B3":
        dec = DiagonalSquare(name=bid)
        n = 101
        idx = grid_sensor_indices(n, sensors or 20)
        axis = np.linspace(0.0, 1.0, n)[idx]
        gx, gy = np.meshgrid(axis, axis, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
        inst = BenchmarkInstance(
            id=bid, problem=PdeProblem(dec, (1.0, 0.2)), forcing="grf-2d", mean=1.0,
            length_scale=0.2, sensors=_split_sensors(dec, pts),
            n_train=_scaled(1000, paper_scale), n_test=250, m=400, b=80, t=10, grid_n=n,
            title="2D, diagonal interface")
    else:
        dec = PetalSquare(name=bid)
        kappa = (4.0, 10.0)
        data = derived_petal_data(kappa)
        problem = PdeProblem(dec, kappa, jump_value=data.jump_value, jump_flux=data.jump_flux,
                             dirichlet=data.dirichlet)
        inst = BenchmarkInstance(
            id=bid, problem=problem, forcing="petal", mean=float("nan"), length_scale=float("nan"),
            sensors=petal_sensors(dec, sensors or 20), n_train=80, n_test=1,
            m=400, b=80, t=10, grid_n=101, title="2D, petal interface")
    changes = {}
    if n_train is not None:
        if n_train < 1:
            raise ConfigError("n_train must be positive")
        changes["n_train"] = int(n_train)
    if mean is not None:
        changes["mean"] = float(mean)
    if length_scale is not None:
        if length_scale <= 0:
            raise ConfigError("length scale must be positive")
        changes["length_scale"] = float(length_scale)
    return replace(inst, **changes) if changes else inst
