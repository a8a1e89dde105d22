"""Command-line entry point: ``phideeponet <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _bench_args(ns) -> dict:
    args = {"bench_id": ns.benchmark.upper(), "paper_scale": bool(getattr(ns, "paper_scale", False))}
    for key in ("sensors", "n_train"):
        if getattr(ns, key, None) is not None:
            args[key] = getattr(ns, key)
    return args


def _dataset(ns):
    from .data import generate_dataset, load_dataset
    if getattr(ns, "data", None):
        ds = load_dataset(ns.data)
        if ds.bench.id != ns.benchmark.upper():
            from .registry import ConfigError
            raise ConfigError(f"dataset in {ns.data} is {ds.bench.id}, not {ns.benchmark}")
        return ds
    return generate_dataset(_bench_args(ns), ns.data_seed if ns.data_seed is not None else ns.seed)


def _load_model(path: str, ds):
    from ..deeponet import model_from_json
    from .registry import ConfigError
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read model file: {exc}")
    doc = json.loads(text)
    if doc.get("benchmark") not in (None, ds.bench.id):
        raise ConfigError(f"model was trained on {doc['benchmark']}, not {ds.bench.id}")
    return model_from_json(text, ds.bench.decomposition)


def _write_errors(path: str, errors):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "rel_l2"])
        for i, e in enumerate(errors):
            w.writerow([i, repr(float(e))])


# -- subcommands ----------------------------------------------------------


def cmd_generate(ns) -> int:
    from .data import generate_dataset
    ds = generate_dataset(_bench_args(ns), ns.seed, ns.out)
    print(json.dumps({"benchmark": ds.bench.id, "out": ns.out, "n_train": ds.train.size,
                      "n_test": ds.test.size, "sensors": list(ds.bench.sensor_counts)}))
    return EXIT_OK


def cmd_train(ns) -> int:
    from ..deeponet import predict
    from ..optim import TrainConfig
    from . import plots
    from .runner import RunOptions, run_benchmark

    options = RunOptions(variant=ns.embedding, latent_dim=ns.latent_dim, hard_bc=ns.hard_bc,
                         trunk_depth=ns.trunk_depth, width=ns.width)
    config = TrainConfig(learning_rate=ns.lr, epochs=ns.epochs, optimizer=ns.optimizer, seed=ns.seed)
    ds = _dataset(ns)
    result, model, history = run_benchmark(ds.bench_args, options, config, seed=ns.seed,
                                           dataset=ds, out_dir=ns.out)
    if not ns.no_figures:
        plots.plot_history(history, os.path.join(ns.out, "loss_curve.png"))
        plots.plot_error_histogram(result.errors, os.path.join(ns.out, "error_histogram.png"),
                                   f"{result.benchmark} {result.variant}")
        pred = np.asarray(predict(model, ds.test.inputs, ds.eval_points, ds.eval_sides))
        plots.plot_predictions(ds.eval_points, ds.eval_sides, ds.test.truth, pred,
                               os.path.join(ns.out, "predictions.png"))
    print(json.dumps({"benchmark": result.benchmark, "variant": result.variant,
                      "latent_dim": result.latent_dim, "seed": result.seed,
                      "mean_rel_l2": result.mean_rel_l2, "median_rel_l2": result.median_rel_l2,
                      "final_total_loss": result.final_loss["total"], "out": ns.out}))
    return EXIT_OK


def cmd_evaluate(ns) -> int:
    from . import plots
    from .runner import evaluate_split
    ds = _dataset(ns)
    model = _load_model(ns.model, ds)
    errors = evaluate_split(model, ds, ns.split)
    summary = {"benchmark": ds.bench.id, "split": ns.split, "count": int(len(errors)),
               "mean_rel_l2": float(np.mean(errors)), "median_rel_l2": float(np.median(errors))}
    if ns.out:
        os.makedirs(ns.out, exist_ok=True)
        _write_errors(os.path.join(ns.out, f"{ns.split}_errors.csv"), errors)
        with open(os.path.join(ns.out, f"{ns.split}_summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        if not ns.no_figures:
            plots.plot_error_histogram(errors, os.path.join(ns.out, f"{ns.split}_error_histogram.png"))
    print(json.dumps(summary))
    return EXIT_OK


def cmd_ood(ns) -> int:
    from . import plots
    from .runner import ood_sweep, write_grid_csv
    ds = _dataset(ns)
    model = _load_model(ns.model, ds)
    grid = ood_sweep(model, ds, ns.mu, ns.ls, ns.count)
    os.makedirs(ns.out, exist_ok=True)
    write_grid_csv(os.path.join(ns.out, "ood.csv"), ns.mu, ns.ls, grid)
    if not ns.no_figures:
        plots.plot_ood(ns.mu, ns.ls, grid, os.path.join(ns.out, "ood_heatmap.png"))
    print(json.dumps({"mu": ns.mu, "ls": ns.ls, "mean_rel_l2": grid.tolist()}))
    return EXIT_OK


def cmd_ablate(ns) -> int:
    from ..optim import TrainConfig
    from . import plots
    from .runner import RunOptions, ablate, summarize_ablation
    options = RunOptions(variant=ns.embedding, latent_dim=ns.latent_dim, hard_bc=ns.hard_bc,
                         trunk_depth=ns.trunk_depth, width=ns.width)
    config = TrainConfig(learning_rate=ns.lr, epochs=ns.epochs, optimizer=ns.optimizer)
    rows = ablate(ns.axis, ns.values, ns.benchmark.upper(), options, config, seeds=ns.seeds,
                  paper_scale=ns.paper_scale, out_dir=ns.out)
    if not ns.no_figures:
        plots.plot_ablation(ns.axis, rows, os.path.join(ns.out, f"ablation_{ns.axis}.png"))
    print(json.dumps({"axis": ns.axis, "summary": summarize_ablation(rows)}))
    return EXIT_OK


def cmd_oracle_check(ns) -> int:
    from .runner import oracle_check, write_oracle_report
    checks = oracle_check(ns.benchmark)
    for c in checks:
        rel = ">=" if c.kind == "min" else "<="
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.value:.6g} ({rel} {c.threshold:g})")
    if ns.out:
        os.makedirs(ns.out, exist_ok=True)
        write_oracle_report(os.path.join(ns.out, f"oracle_{ns.benchmark.upper()}.csv"),
                            ns.benchmark.upper(), checks)
    return EXIT_OK if all(c.passed for c in checks) else 1


# -- parser ---------------------------------------------------------------


def _add_bench(p, with_scale=True):
    from .registry import BENCHMARK_IDS
    p.add_argument("--benchmark", required=True, type=str.upper, choices=BENCHMARK_IDS)
    if with_scale:
        p.add_argument("--paper-scale", action="store_true", help="use the full-size sample counts")
        p.add_argument("--sensors", type=int, help="override the sensor count")
        p.add_argument("--n-train", type=int, help="override the number of training samples")


def _add_data(p):
    p.add_argument("--data", help="dataset directory written by 'generate' (default: regenerate)")
    p.add_argument("--data-seed", type=int, help="seed for a regenerated dataset (default: --seed)")


def _add_model_opts(p):
    p.add_argument("--embedding", default="nce", choices=("se", "ce", "nce", "deeponet"))
    p.add_argument("--latent-dim", type=int, default=3)
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--optimizer", default="adam", choices=("adam", "soap"))
    p.add_argument("--hard-bc", type=_on_off, default=True, metavar="on|off")
    p.add_argument("--trunk-depth", type=int, default=3)
    p.add_argument("--width", type=int, default=64)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phideeponet",
                                     description="Interface-problem neural operators: data, training, evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a benchmark dataset")
    _add_bench(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train and evaluate one model")
    _add_bench(p)
    _add_data(p)
    _add_model_opts(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="relative L2 errors of a saved model")
    _add_bench(p)
    _add_data(p)
    p.add_argument("--model", required=True)
    p.add_argument("--split", default="test", choices=("test",))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ood", help="error grid over GRF mean and length scale")
    _add_bench(p)
    _add_data(p)
    p.add_argument("--model", required=True)
    p.add_argument("--mu", type=_floats, required=True)
    p.add_argument("--ls", type=_floats, required=True)
    p.add_argument("--count", type=int, help="test samples per cell (default: benchmark N_test)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_ood)

    p = sub.add_parser("ablate", help="sweep one setting, one run per value and seed")
    p.add_argument("--benchmark", default="B1", type=str.upper)
    p.add_argument("--axis", required=True, choices=("n_train", "trunk_depth", "sensors", "latent_dim"))
    p.add_argument("--values", type=_ints, required=True)
    p.add_argument("--seeds", type=_ints, default=[0])
    p.add_argument("--paper-scale", action="store_true")
    _add_model_opts(p)
    p.add_argument("--out", default=".")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("oracle-check", help="validate the reference solvers for a benchmark")
    _add_bench(p, with_scale=False)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv=None) -> int:
    from ..optim import TrainingDivergenceError
    from .registry import ConfigError

    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        return ns.func(ns)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
