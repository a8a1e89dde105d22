"""Dataset generation: input functions, collocation sets and reference solutions.

Every array is a deterministic function of ``(benchmark arguments, seed)``.
On disk a dataset is a directory of comma-separated text files (17
significant digits, so values round-trip exactly) plus ``manifest.json``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from ..geometry import CollocationSet, sample_collocation
from ..grf import GrfConfig, build_sampler, build_tensor_sampler, sample
from ..oracle import Grid1D, Grid2D, Poisson2D, petal_analytic, solve_1d
from .registry import BenchmarkInstance, get_benchmark

FORMAT_VERSION = 1
PETAL_RANGE = (2.0, 20.0)
PETAL_EXCLUSION = 0.5


@dataclass(frozen=True, eq=False)
class Split:
    inputs: tuple                 # per-subdomain sensor values, each (N, m_q)
    forcing: np.ndarray | None    # (N, m) at the PDE collocation points
    truth: np.ndarray | None      # (N, G) at the evaluation points
    params: np.ndarray | None = None   # (N, 2) forcing parameters for the petal benchmark

    @property
    def size(self) -> int:
        return int(self.inputs[0].shape[0])


@dataclass(frozen=True, eq=False)
class Dataset:
    bench: BenchmarkInstance
    bench_args: dict
    seed: int
    colloc: CollocationSet
    eval_points: np.ndarray
    eval_sides: np.ndarray
    train: Split
    test: Split


def _child_seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def make_collocation(bench: BenchmarkInstance, seed: int) -> CollocationSet:
    dec = bench.decomposition
    base = sample_collocation(dec, bench.m, bench.b, bench.t, seed)
    if bench.forcing != "grf-2d":
        return base
    # PDE points on off-diagonal interior grid nodes, where the forcing is sampled exactly.
    n = bench.grid_n
    ii, jj = np.meshgrid(np.arange(1, n - 1), np.arange(1, n - 1), indexing="ij")
    keep = ii != jj
    nodes = np.stack([ii[keep], jj[keep]], axis=1)
    pick = np.random.default_rng(seed + 1).choice(len(nodes), size=bench.m, replace=False)
    pde = nodes[np.sort(pick)] / (n - 1.0)
    return CollocationSet(pde, dec.labels(pde), base.bc_points, base.bc_sides,
                          base.interface_points, base.interface_pairs, base.interface_normals)


def evaluation_points(bench: BenchmarkInstance) -> np.ndarray:
    n = bench.grid_n
    if bench.dim == 1:
        return Grid1D(float(bench.decomposition.lower[0]), float(bench.decomposition.upper[0]), n).nodes[:, None]
    return Grid2D(tuple(bench.decomposition.lower), tuple(bench.decomposition.upper), n).points


# -- per-family generators ------------------------------------------------


def _draw(points: np.ndarray, mean: float, ls: float, seed: int, count: int) -> np.ndarray:
    uniq, inv = np.unique(points, axis=0, return_inverse=True)
    sampler = build_sampler(GrfConfig(mean, ls, uniq))
    return sample(sampler, seed, count)[:, inv.ravel()]


def _interval_split(bench, colloc, seed, count, with_truth, with_forcing):
    dec, problem = bench.decomposition, bench.problem
    grid = Grid1D(float(dec.lower[0]), float(dec.upper[0]), bench.grid_n)
    y = grid.nodes[:, None]
    P = dec.n_sub
    pde = colloc.pde_points
    forcing = np.zeros((count, len(pde)))
    u_left = np.zeros((count, len(y)))
    u_right = np.zeros((count, len(y)))
    inputs = []
    iface_nodes = {grid.node_index(b): k for k, b in enumerate(dec.breaks)}
    if bench.forcing == "grf":
        pts = np.concatenate([*bench.sensors, pde, y])
        u = _draw(pts, bench.mean, bench.length_scale, seed, count)
        off = 0
        for s in bench.sensors:
            inputs.append(u[:, off:off + len(s)])
            off += len(s)
        forcing = u[:, off:off + len(pde)]
        u_left = u_right = u[:, off + len(pde):]
    else:
        edges = np.r_[dec.lower[0], dec.breaks, dec.upper[0]]
        seeds = _child_seeds(seed, P)
        for q in range(1, P + 1):
            in_pde = colloc.pde_sides == q
            nodes = (y[:, 0] >= edges[q - 1] - 1e-12) & (y[:, 0] <= edges[q] + 1e-12)
            pts = np.concatenate([bench.sensors[q - 1], pde[in_pde], y[nodes]])
            u = _draw(pts, bench.mean, bench.length_scale, seeds[q - 1], count)
            ms, mp = len(bench.sensors[q - 1]), int(in_pde.sum())
            inputs.append(u[:, :ms])
            forcing[:, in_pde] = u[:, ms:ms + mp]
            vals = u[:, ms + mp:]
            idx = np.flatnonzero(nodes)
            for col, i in enumerate(idx):
                k = iface_nodes.get(i)
                # An interface node takes its left limit from the lower side.
                if k is None or k + 1 == q:
                    u_left[:, i] = vals[:, col]
                if k is None or k + 2 == q:
                    u_right[:, i] = vals[:, col]
    truth = None
    if with_truth:
        truth = np.stack([solve_1d(problem, np.stack([u_left[k], u_right[k]]), grid).values
                          for k in range(count)])
    return Split(tuple(inputs), forcing if with_forcing else None, truth)


def _square_split(bench, colloc, seed, count, with_truth, with_forcing):
    n = bench.grid_n
    grid = Grid2D(tuple(bench.decomposition.lower), tuple(bench.decomposition.upper), n)
    xs, ys = grid.axes
    u = build_tensor_sampler(bench.mean, bench.length_scale, xs, ys).sample(seed, count)
    inputs = []
    for s in bench.sensors:
        idx = np.rint(s * (n - 1)).astype(int)
        inputs.append(u[:, idx[:, 0], idx[:, 1]])
    pidx = np.rint(colloc.pde_points * (n - 1)).astype(int)
    forcing = u[:, pidx[:, 0], pidx[:, 1]]
    truth = Poisson2D(bench.problem, grid).solve(u).reshape(count, -1) if with_truth else None
    return Split(tuple(inputs), forcing if with_forcing else None, truth)


def petal_held_out(bench: BenchmarkInstance) -> tuple[float, float]:
    """Forcing parameters whose solution is the analytic petal field."""
    k1, k2 = bench.problem.kappa
    return 4.0 * k1, 1.6 * k2


def petal_training_pairs(bench: BenchmarkInstance, seed: int, count: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    star = np.array(petal_held_out(bench))
    out = np.empty((0, 2))
    while len(out) < count:
        cand = rng.uniform(*PETAL_RANGE, size=(2 * count, 2))
        out = np.concatenate([out, cand[np.linalg.norm(cand - star, axis=1) > PETAL_EXCLUSION]])
    return out[:count]


def petal_forcing(params: np.ndarray, points: np.ndarray, sides: np.ndarray) -> np.ndarray:
    r2 = np.sum(np.atleast_2d(points) ** 2, axis=1)
    return np.where(np.asarray(sides)[None] == 1, params[:, :1], params[:, 1:] * r2[None])


def _petal_split(bench, colloc, params, with_truth, with_forcing, eval_points, eval_sides):
    inputs = tuple(petal_forcing(params, s, np.full(len(s), q))
                   for q, s in enumerate(bench.sensors, start=1))
    forcing = petal_forcing(params, colloc.pde_points, colloc.pde_sides) if with_forcing else None
    truth = None
    if with_truth:
        star = np.array(petal_held_out(bench))
        if not np.allclose(params, star[None]):
            raise ValueError("reference solutions exist only for the held-out forcing pair")
        field = np.array([petal_analytic(p, q) for p, q in zip(eval_points, eval_sides)])
        truth = np.repeat(field[None], len(params), axis=0)
    return Split(inputs, forcing, truth, params)


def make_split(bench: BenchmarkInstance, colloc: CollocationSet, seed: int, count: int,
               with_truth: bool, with_forcing: bool, eval_points=None, eval_sides=None,
               params=None) -> Split:
    if bench.forcing in ("grf", "grf-piecewise"):
        return _interval_split(bench, colloc, seed, count, with_truth, with_forcing)
    if bench.forcing == "grf-2d":
        return _square_split(bench, colloc, seed, count, with_truth, with_forcing)
    if params is None:
        params = petal_training_pairs(bench, seed, count)
    return _petal_split(bench, colloc, params, with_truth, with_forcing, eval_points, eval_sides)


def generate_dataset(bench_args: dict | str, seed: int, out_dir: str | None = None) -> Dataset:
    """Build (and optionally write) the train/test dataset for one benchmark."""
    args = {"bench_id": bench_args} if isinstance(bench_args, str) else dict(bench_args)
    bench = get_benchmark(**args)
    s_colloc, s_train, s_test = _child_seeds(seed, 3)
    colloc = make_collocation(bench, s_colloc)
    pts = evaluation_points(bench)
    sides = bench.decomposition.labels(pts)
    train = make_split(bench, colloc, s_train, bench.n_train, with_truth=False, with_forcing=True,
                       eval_points=pts, eval_sides=sides)
    test_params = np.array([petal_held_out(bench)]) if bench.forcing == "petal" else None
    test = make_split(bench, colloc, s_test, bench.n_test, with_truth=True, with_forcing=False,
                      eval_points=pts, eval_sides=sides, params=test_params)
    ds = Dataset(bench, args, seed, colloc, pts, sides, train, test)
    if out_dir is not None:
        write_dataset(ds, out_dir)
    return ds


# -- persistence ----------------------------------------------------------


def _save(path, arr):
    np.savetxt(path, np.atleast_2d(arr), fmt="%.17g", delimiter=",")


def _load(path, cols=None):
    arr = np.loadtxt(path, delimiter=",", ndmin=2)
    return arr if cols is None else arr.reshape(-1, cols)


def write_dataset(ds: Dataset, out_dir: str) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    files = {}

    def put(name, arr):
        _save(os.path.join(out_dir, name), arr)
        files[name] = list(np.atleast_2d(arr).shape)

    c = ds.colloc
    put("colloc_pde.csv", np.column_stack([c.pde_points, c.pde_sides]))
    put("colloc_bc.csv", np.column_stack([c.bc_points, c.bc_sides]))
    put("colloc_interface.csv", np.column_stack([c.interface_points, c.interface_pairs, c.interface_normals]))
    put("eval_points.csv", np.column_stack([ds.eval_points, ds.eval_sides]))
    for q, s in enumerate(ds.bench.sensors, start=1):
        put(f"sensors_q{q}.csv", s)
    for name, split in (("train", ds.train), ("test", ds.test)):
        for q, u in enumerate(split.inputs, start=1):
            put(f"{name}_inputs_q{q}.csv", u)
        if split.forcing is not None:
            put(f"{name}_forcing.csv", split.forcing)
        if split.truth is not None:
            put(f"{name}_truth.csv", split.truth)
        if split.params is not None:
            put(f"{name}_params.csv", split.params)
    manifest = {
        "format_version": FORMAT_VERSION,
        "benchmark": ds.bench.describe(),
        "bench_args": ds.bench_args,
        "seed": ds.seed,
        "child_seeds": dict(zip(("collocation", "train", "test"), _child_seeds(ds.seed, 3))),
        "files": files,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_dataset(out_dir: str) -> Dataset:
    with open(os.path.join(out_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format in {out_dir}")
    args = manifest["bench_args"]
    bench = get_benchmark(**args)
    d = bench.dim
    path = lambda name: os.path.join(out_dir, name)  # noqa: E731
    pde = _load(path("colloc_pde.csv"))
    bc = _load(path("colloc_bc.csv"))
    itf = _load(path("colloc_interface.csv"))
    colloc = CollocationSet(pde[:, :d], pde[:, d].astype(int), bc[:, :d], bc[:, d].astype(int),
                            itf[:, :d], itf[:, d:d + 2].astype(int), itf[:, d + 2:])
    ev = _load(path("eval_points.csv"))

    def split(name):
        files = manifest["files"]
        inputs = tuple(_load(path(f"{name}_inputs_q{q}.csv"), files[f"{name}_inputs_q{q}.csv"][1])
                       for q in range(1, bench.decomposition.n_sub + 1))
        get = lambda key: (_load(path(f"{name}_{key}.csv"), files[f"{name}_{key}.csv"][1])  # noqa: E731
                           if f"{name}_{key}.csv" in files else None)
        return Split(inputs, get("forcing"), get("truth"), get("params"))

    return Dataset(bench, args, int(manifest["seed"]), colloc, ev[:, :d], ev[:, d].astype(int),
                   split("train"), split("test"))
