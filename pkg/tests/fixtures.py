"""Small shared fixtures for the test modules."""

from functools import lru_cache

import numpy as np

from phideeponet.bench.runner import RunOptions, run_benchmark
from phideeponet.deeponet import make_phi_deeponet
from phideeponet.geometry import IntervalDecomposition, sample_collocation
from phideeponet.optim import TrainConfig
from phideeponet.physics import PdeProblem, make_loss_data


def tiny_problem(seed=0, n_samples=2, m=5, hard_bc=False):
    """Two subdomains, K=2, hidden widths 4, ``m`` PDE points."""
    dec = IntervalDecomposition((0.5,))
    problem = PdeProblem(dec, (5.0, 0.1))
    model = make_phi_deeponet(dec, (3, 3), "nce", 2, width=2, branch_widths=(4,), trunk_widths=(4,),
                              hard_bc=hard_bc, seed=seed)
    colloc = sample_collocation(dec, m, 2, 3, seed=seed + 1)
    rng = np.random.default_rng(seed + 2)
    inputs = (rng.normal(size=(n_samples, 3)), rng.normal(size=(n_samples, 3)))
    forcing = rng.normal(size=(n_samples, m))
    return problem, model, make_loss_data(problem, inputs, forcing, colloc)


DESK = TrainConfig(learning_rate=5e-3, epochs=2000)


def desk_run(bench_id, variant="nce", seed=0, n_train=None):
    """Desk-scale run shared across test modules: ``(RunResult, model)``."""
    return _desk_run(bench_id, variant, seed, n_train)


@lru_cache(maxsize=None)
def _desk_run(bench_id, variant, seed, n_train):
    args = {"bench_id": bench_id} if n_train is None else {"bench_id": bench_id, "n_train": n_train}
    result, model, _ = run_benchmark(args, RunOptions(variant=variant), DESK, seed=seed)
    return result, model
