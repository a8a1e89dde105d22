"""Training runs, evaluation, OOD sweeps, ablations and oracle self-checks."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..deeponet import make_baseline, make_phi_deeponet, model_to_json, predict
from ..geometry import DiagonalSquare, IntervalDecomposition, sample_collocation
from ..optim import TrainConfig, TrainHistory, train
from ..oracle import (Grid1D, Grid2D, assemble_2d, derived_petal_data, exponential_closed_form,
                      observed_order, petal_field_model, solve_1d, solve_2d)
from ..physics import PdeProblem, loss_terms, make_loss_data, rel_l2
from .data import Dataset, generate_dataset, make_split
from .registry import ConfigError, get_benchmark

VARIANTS = ("se", "ce", "nce", "deeponet")
ABLATION_AXES = ("n_train", "trunk_depth", "sensors", "latent_dim")


@dataclass(frozen=True)
class RunOptions:
    variant: str = "nce"
    latent_dim: int = 3
    hard_bc: bool = True
    trunk_depth: int = 3
    width: int = 64

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown embedding {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if self.variant == "se" and self.latent_dim != 1:
            object.__setattr__(self, "latent_dim", 1)
        if self.latent_dim < 1 or self.trunk_depth < 1 or self.width < 1:
            raise ConfigError("latent dimension, trunk depth and width must be positive")


@dataclass
class RunResult:
    benchmark: str
    variant: str
    latent_dim: int
    seed: int
    mean_rel_l2: float
    median_rel_l2: float
    errors: list
    train_seconds: float
    initial_loss: dict
    final_loss: dict
    untrained_mean_rel_l2: float
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def write(self, out_dir: str):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "result.json"), "w") as fh:
            fh.write(self.to_json() + "\n")
        with open(os.path.join(out_dir, "errors.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample", "rel_l2"])
            for i, e in enumerate(self.errors):
                w.writerow([i, repr(float(e))])


def input_shift_for(ds: Dataset) -> float:
    """Training-set mean of all sensor values, subtracted before the branch networks."""
    return float(np.mean(np.concatenate([u.ravel() for u in ds.train.inputs])))


def build_model(ds: Dataset, options: RunOptions, seed: int):
    bench = ds.bench
    trunk = (options.width,) * options.trunk_depth
    shift = input_shift_for(ds)
    if options.variant == "deeponet":
        return make_baseline(bench.decomposition, bench.n_sensors, width=options.width,
                             trunk_widths=trunk, hard_bc=options.hard_bc, seed=seed, input_shift=shift)
    return make_phi_deeponet(bench.decomposition, bench.sensor_counts, options.variant,
                             options.latent_dim, width=options.width, trunk_widths=trunk,
                             hard_bc=options.hard_bc, seed=seed, input_shift=shift)


def training_data(ds: Dataset):
    return make_loss_data(ds.bench.problem, ds.train.inputs, ds.train.forcing, ds.colloc)


def evaluate_split(model, ds: Dataset, split: str = "test") -> np.ndarray:
    part = ds.test if split == "test" else ds.train
    if part.truth is None:
        raise ConfigError(f"the {split} split carries no reference solutions")
    pred = np.asarray(predict(model, part.inputs, ds.eval_points, ds.eval_sides))
    return np.array([rel_l2(p, t) for p, t in zip(pred, part.truth)])


def _loss_dict(terms) -> dict:
    d = {k: float(v) for k, v in terms.items()}
    d["total"] = sum(d.values())
    return d


def run_benchmark(bench_args, options: RunOptions, config: TrainConfig, seed: int | None = None,
                  dataset: Dataset | None = None, out_dir: str | None = None):
    """Train and evaluate one model; returns ``(RunResult, model, history)``.

    Without an explicit dataset one is generated from the same seed used
    for the network initialization.
    """
    seed = config.seed if seed is None else int(seed)
    config = replace(config, seed=seed)
    ds = dataset if dataset is not None else generate_dataset(bench_args, seed)
    model = build_model(ds, options, seed)
    data = training_data(ds)
    untrained = evaluate_split(model, ds)
    initial = _loss_dict(loss_terms(ds.bench.problem, model, data))
    model, history = train(model, ds.bench.problem, data, config)
    errors = evaluate_split(model, ds)
    result = RunResult(
        benchmark=ds.bench.id,
        variant=options.variant,
        latent_dim=options.latent_dim,
        seed=seed,
        mean_rel_l2=float(np.mean(errors)),
        median_rel_l2=float(np.median(errors)),
        errors=[float(e) for e in errors],
        train_seconds=float(history.seconds[-1]) if history.seconds else 0.0,
        initial_loss=initial,
        final_loss=_loss_dict(asdict(history.final)),
        untrained_mean_rel_l2=float(np.mean(untrained)),
        config={"options": asdict(options), "train": asdict(config), "bench_args": ds.bench_args,
                "dataset_seed": ds.seed, "n_train": ds.train.size, "n_test": ds.test.size,
                "epoch_of_final": history.epoch_of_final},
    )
    if out_dir is not None:
        write_run(out_dir, result, model, history)
    return result, model, history


def write_run(out_dir: str, result: RunResult, model, history: TrainHistory):
    os.makedirs(out_dir, exist_ok=True)
    result.write(out_dir)
    history.to_csv(os.path.join(out_dir, "history.csv"))
    with open(os.path.join(out_dir, "model.json"), "w") as fh:
        fh.write(model_to_json(model, result.benchmark))


# -- OOD sweep ------------------------------------------------------------


def ood_sweep(model, ds: Dataset, mus, length_scales, count: int | None = None) -> np.ndarray:
    """Mean test rel-L2 for every ``(mu, l_s)``; rows follow ``mus``, columns ``length_scales``."""
    if ds.bench.id not in ("B1", "B2"):
        raise ConfigError("OOD sweeps are defined for B1 and B2")
    base_ls = ds.bench.length_scale
    if any(ls > base_ls + 1e-12 for ls in length_scales):
        raise ConfigError(f"length scales above the training value {base_ls} are not swept")
    from .data import _child_seeds
    test_seed = _child_seeds(ds.seed, 3)[2]
    n = ds.bench.n_test if count is None else int(count)
    grid = np.zeros((len(mus), len(length_scales)))
    for i, mu in enumerate(mus):
        for j, ls in enumerate(length_scales):
            bench = get_benchmark(**{**ds.bench_args, "mean": mu, "length_scale": ls})
            split = make_split(bench, ds.colloc, test_seed, n, with_truth=True, with_forcing=False)
            pred = np.asarray(predict(model, split.inputs, ds.eval_points, ds.eval_sides))
            grid[i, j] = np.mean([rel_l2(p, t) for p, t in zip(pred, split.truth)])
    return grid


def write_grid_csv(path: str, mus, length_scales, grid: np.ndarray):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mu"] + [f"ls={ls!r}" for ls in length_scales])
        for mu, row in zip(mus, grid):
            w.writerow([repr(float(mu))] + [repr(float(v)) for v in row])


# -- ablation -------------------------------------------------------------


def ablate(axis: str, values, bench_id: str, options: RunOptions, config: TrainConfig,
           seeds=(0,), paper_scale: bool = False, out_dir: str | None = None) -> list[dict]:
    """One run per (value, seed); returns rows ``{value, seed, mean_rel_l2, median_rel_l2}``."""
    if axis not in ABLATION_AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}; choose from {', '.join(ABLATION_AXES)}")
    rows = []
    for value in values:
        args = {"bench_id": bench_id, "paper_scale": paper_scale}
        opts = options
        if axis == "n_train":
            args["n_train"] = int(value)
        elif axis == "sensors":
            args["sensors"] = int(value)
        elif axis == "trunk_depth":
            opts = replace(options, trunk_depth=int(value))
        else:
            opts = replace(options, latent_dim=int(value))
        for seed in seeds:
            res, _, _ = run_benchmark(args, opts, config, seed=seed)
            rows.append({"value": value, "seed": seed, "mean_rel_l2": res.mean_rel_l2,
                         "median_rel_l2": res.median_rel_l2})
    if out_dir is not None:
        write_ablation(out_dir, axis, rows)
    return rows


def summarize_ablation(rows: list[dict]) -> list[tuple]:
    values = list(dict.fromkeys(r["value"] for r in rows))
    return [(v, float(np.mean([r["mean_rel_l2"] for r in rows if r["value"] == v]))) for v in values]


def write_ablation(out_dir: str, axis: str, rows: list[dict]):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, f"ablation_{axis}_runs.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([axis, "seed", "mean_rel_l2", "median_rel_l2"])
        for r in rows:
            w.writerow([r["value"], r["seed"], repr(r["mean_rel_l2"]), repr(r["median_rel_l2"])])
    with open(os.path.join(out_dir, f"ablation_{axis}.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([axis, "mean_rel_l2"])
        for v, m in summarize_ablation(rows):
            w.writerow([v, repr(m)])


# -- oracle self-checks ---------------------------------------------------


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    kind: str  # "min" (value >= threshold) or "max" (value <= threshold)

    @property
    def passed(self) -> bool:
        return self.value >= self.threshold if self.kind == "min" else self.value <= self.threshold


def _one_sided_errors(problem, n_list):
    exact = exponential_closed_form(problem)
    errs = []
    for n in n_list:
        grid = Grid1D(float(problem.decomposition.lower[0]), float(problem.decomposition.upper[0]), n)
        y = grid.nodes
        sol = solve_1d(problem, np.exp(y), grid)
        left = problem.decomposition.labels(y[:, None])
        right = left.copy()
        for b in problem.decomposition.breaks:
            right[grid.node_index(b)] += 1
        errs.append(max(np.max(np.abs(sol.left - exact(y, left))),
                        np.max(np.abs(sol.right - exact(y, right)))))
    return np.array(errs)


def check_1d_convergence(problem: PdeProblem, n_list=(51, 101, 201)) -> tuple[np.ndarray, np.ndarray]:
    errs = _one_sided_errors(problem, n_list)
    return errs, observed_order(errs, n_list)


def manufactured_b3(kappa=(1.0, 0.2)):
    """``s_q = (x2 - x1) sin(pi x1) sin(pi x2) / kappa_q`` and its continuous forcing."""
    pi = np.pi

    def forcing(p):
        x, y = p[:, 0], p[:, 1]
        sxy = np.sin(pi * x) * np.sin(pi * y)
        return (-2 * pi**2 * (y - x) * sxy
                + 2 * pi * (np.sin(pi * x) * np.cos(pi * y) - np.cos(pi * x) * np.sin(pi * y)))

    def exact(p):
        x, y = p[:, 0], p[:, 1]
        k = np.where(y <= x, kappa[0], kappa[1])
        return (y - x) * np.sin(pi * x) * np.sin(pi * y) / k

    return forcing, exact


def check_2d_convergence(kappa=(1.0, 0.2), n_list=(33, 65, 129)) -> tuple[np.ndarray, np.ndarray]:
    problem = PdeProblem(DiagonalSquare(), kappa)
    forcing, exact = manufactured_b3(kappa)
    errs = []
    for n in n_list:
        grid = Grid2D((0.0, 0.0), (1.0, 1.0), n)
        pts = grid.points
        s = solve_2d(problem, forcing(pts).reshape(n, n), grid)
        errs.append(np.max(np.abs(s.ravel() - exact(pts))))
    errs = np.array(errs)
    return errs, observed_order(errs, n_list)


def textbook_laplacian_2d(n: int):
    import scipy.sparse as sp
    m, h = n - 2, 1.0 / (n - 1)
    t = sp.diags([np.ones(m - 1), -2 * np.ones(m), np.ones(m - 1)], [-1, 0, 1])
    eye = sp.identity(m)
    return ((sp.kron(t, eye) + sp.kron(eye, t)) / h**2).tocsr()


def petal_residuals(n_points: int = 100, n_interface: int = 200, seed: int = 0) -> dict:
    """Largest PDE, interface and boundary residuals of the analytic petal field.

    Uses the batched residuals behind the training loss, with ``n_points``
    PDE points per side, ``n_interface`` interface and ``n_points`` boundary points.
    """
    from ..geometry import CollocationSet
    from ..physics import residual_arrays

    bench = get_benchmark("B6")
    problem, dec = bench.problem, bench.decomposition
    data = derived_petal_data(problem.kappa)
    rng = np.random.default_rng(seed)
    pde = []
    for q in (1, 2):
        pts = np.empty((0, 2))
        while len(pts) < n_points:
            c = rng.uniform(-1, 1, size=(4 * n_points, 2))
            ok = (dec.labels(c) == q) & (dec.interface_distance(c) > 1e-3)
            pts = np.concatenate([pts, c[ok]])
        pde.append(pts[:n_points])
    pde = np.concatenate(pde)
    sides = dec.labels(pde)
    base = sample_collocation(dec, 1, n_points, n_interface, seed)
    colloc = CollocationSet(pde, sides, base.bc_points, base.bc_sides, base.interface_points,
                            base.interface_pairs, base.interface_normals)
    ld = make_loss_data(problem, (np.zeros((1, 1)),), data.forcing(pde, sides)[None], colloc)
    r = residual_arrays(problem, petal_field_model(dec), ld)
    return {k: float(np.max(np.abs(np.asarray(v)))) for k, v in
            (("pde", r["pde"]), ("value", r["value"]), ("flux", r["flux"]), ("bc", r["bc"]))}


def oracle_check(bench_id: str) -> list[Check]:
    bench = get_benchmark(bench_id)
    checks: list[Check] = []
    dec = bench.decomposition
    if isinstance(dec, IntervalDecomposition):
        errs, order = check_1d_convergence(bench.problem)
        checks.append(Check("1d observed order (exp forcing, n=51/101/201)", float(order.min()), 1.8, "min"))
        checks.append(Check("1d max error at n=201", float(errs[-1]), 1e-4, "max"))
        # Uniform coefficients: the flux-form scheme is the textbook (1, -2, 1) stencil.
        uniform = PdeProblem(dec, (1.0,) * dec.n_sub)
        grid = Grid1D(0.0, 1.0, 201)
        y = grid.nodes
        u = np.cos(3 * y)
        from scipy.linalg import solve_banded
        n, h = grid.n, grid.h
        ab = np.zeros((3, n - 2))
        ab[0, 1:], ab[1], ab[2, :-1] = 1.0, -2.0, 1.0
        ref = solve_banded((1, 1), ab, h * h * u[1:-1])
        got = solve_1d(uniform, u, grid).values[1:-1]
        checks.append(Check("1d uniform-kappa equals textbook solve", float(np.max(np.abs(got - ref))), 1e-12, "max"))
    elif isinstance(dec, DiagonalSquare):
        errs, order = check_2d_convergence(bench.problem.kappa)
        checks.append(Check("2d observed order (manufactured, n=33/65/129)", float(order.min()), 1.5, "min"))
        mat, _, _ = assemble_2d(PdeProblem(dec, (1.0, 1.0)), Grid2D((0.0, 0.0), (1.0, 1.0), 33))
        diff = abs(mat - textbook_laplacian_2d(33)).max()
        checks.append(Check("2d uniform-kappa operator equals 5-point Laplacian", float(diff), 1e-9, "max"))
    else:
        r = petal_residuals()
        checks.append(Check("petal |pde residual| (100 pts/side)", r["pde"], 1e-8, "max"))
        checks.append(Check("petal |value jump residual| (200 pts)", r["value"], 1e-10, "max"))
        checks.append(Check("petal |flux jump residual| (200 pts)", r["flux"], 1e-10, "max"))
        checks.append(Check("petal |bc residual| (100 pts)", r["bc"], 1e-10, "max"))
    return checks


def write_oracle_report(path: str, bench_id: str, checks: list[Check]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["benchmark", "check", "value", "threshold", "kind", "passed"])
        for c in checks:
            w.writerow([bench_id, c.name, repr(c.value), repr(c.threshold), c.kind, c.passed])
