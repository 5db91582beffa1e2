"""Experiment drivers behind the ``pcbench`` subcommands.

Every driver takes a :class:`KeyValueConfig`, an output directory and a seed,
writes its CSV files there and returns a small summary for the run manifest.
Floats are written with ``repr`` so reruns produce byte-identical files.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import data as datasets
from . import model, theory
from .config import KeyValueConfig
from .errors import DivergenceError, NonFiniteGradientError, OverflowInLayerError
from .inference import InferenceConfig, analytic_dln_inference, run_inference
from .learning import (
    METRIC_COLUMNS,
    MetricWriter,
    OptimState,
    TrainConfig,
    apply_update,
    bp_train_step,
    pc_train_step,
    pc_weight_gradient,
    steps_to_threshold,
    train,
)
from .model import Batch, NetworkSpec
from .numerics import Rng, sym_eigvals

TRAINING_FAILURES = (DivergenceError, OverflowInLayerError, NonFiniteGradientError, FloatingPointError)

CSV_SCHEMAS = {
    "train": {"metrics.csv": METRIC_COLUMNS},
    "energy-check": {"energy_check.csv": ("step", "numerical", "theoretical", "gap")},
    "saddle-escape": {
        "saddle_escape.csv": ("algorithm", "run", "step", "loss", "energy", "grad_norm"),
        "saddle_summary.csv": (
            "algorithm", "run", "steps_to_threshold", "final_loss", "loss_lambda_min", "energy_lambda_min"
        ),
        "plateaus.csv": (
            "plateau", "start_step", "length", "loss", "rank", "pc_escape_steps", "bp_escape_steps", "escaped"
        ),
    },
    "cond-scan": {
        "cond_scan.csv": ("width", "depth", "parameterisation", "variant", "seed", "lambda_min", "lambda_max", "kappa")
    },
    "ratio-scan": {"ratio_scan.csv": ("width", "depth", "parameterisation", "seed", "step", "loss", "energy", "ratio")},
    "transfer-grid": {
        "transfer_grid.csv": ("sweep", "value", "lr", "beta", "min_loss", "diverged"),
        "transfer_argmin.csv": ("sweep", "value", "lr", "beta", "min_loss"),
    },
    "fwd-stability": {
        "fwd_stability.csv": ("setting", "activation", "depth", "seed", "layer", "mean_norm", "relative_norm")
    },
    "cosine-1mlp": {
        "cosine_1mlp.csv": ("init", "batch", "algorithm", "cosine", "distance", "skipped"),
        "cosine_summary.csv": ("algorithm", "batch", "mean_cosine", "n"),
    },
}


# --- shared plumbing -----------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _map_cells(fn: Callable, cells: list, workers: int) -> list:
    """Evaluate grid cells, optionally in a process pool; results keep cell order."""
    if workers <= 1 or len(cells) <= 1:
        return [fn(cell) for cell in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, cells))


def spec_from_config(cfg: KeyValueConfig, **overrides) -> NetworkSpec:
    """Network spec from ``widths`` or from ``input_width/hidden_width/n_hidden/output_width``."""
    if "widths" in cfg:
        spec = NetworkSpec.from_config(cfg)
    else:
        hidden = cfg.get_int("hidden_width")
        n_hidden = cfg.get_int("n_hidden")
        widths = [cfg.get_int("input_width", hidden)] + [hidden] * n_hidden + [cfg.get_int("output_width", hidden)]
        spec = NetworkSpec.create(
            widths,
            activation=cfg.get_str("activation", "linear"),
            parameterisation=cfg.get_str("parameterisation", "SP"),
            resnet=cfg.get_bool("resnet", False),
            activity_decay=cfg.get_float("activity_decay", 0.0),
            init_scale=cfg.get_optional_float("init_scale"),
            kaiming_uniform=cfg.get_bool("kaiming_uniform", False),
        )
    return spec.with_(**overrides) if overrides else spec


def inference_from_config(cfg: KeyValueConfig, default_steps: int = 20, n_hidden: int | None = None) -> InferenceConfig:
    """``inference_steps = auto`` means one step per hidden layer."""
    raw = cfg.get_str("inference_steps", str(default_steps))
    if raw.lower() == "auto":
        if n_hidden is None:
            raise ValueError("inference_steps = auto needs a network spec")
        steps = n_hidden
    else:
        steps = int(raw)
    return InferenceConfig(
        solver=cfg.get_str("solver", "gd"),
        step_size=cfg.get_float("step_size", 0.1),
        max_steps=steps,
        grad_tol=cfg.get_float("grad_tol", 1e-6),
        halving_schedule=cfg.get_int("halving_schedule", 0),
    )


def train_config_from_config(cfg: KeyValueConfig, seed: int, infer: InferenceConfig) -> TrainConfig:
    return TrainConfig(
        algorithm=cfg.get_str("algorithm", "pc"),
        epochs=cfg.get_int("epochs", 1),
        batch_size=cfg.get_int("batch_size", 64),
        lr=cfg.get_float("lr", 1e-3),
        optimiser=cfg.get_str("optimiser", "sgd"),
        inference=infer,
        analytic_inference=cfg.get_bool("analytic_inference", False),
        eval_period=cfg.get_int("eval_period", 100),
        seed=seed,
    )


def _mnist_paths(cfg: KeyValueConfig, split: str) -> tuple[Path, Path]:
    prefix = "train" if split == "train" else "t10k"
    key = "mnist" if split == "train" else "mnist_test"
    if f"{key}_images" in cfg:
        return Path(cfg.get_str(f"{key}_images")), Path(cfg.get_str(f"{key}_labels"))
    root = Path(cfg.get_str("mnist_dir"))
    return root / f"{prefix}-images-idx3-ubyte", root / f"{prefix}-labels-idx1-ubyte"


def load_datasets(cfg: KeyValueConfig, spec: NetworkSpec, rng: Rng) -> tuple[datasets.Dataset, datasets.Dataset | None]:
    """Train and optional test split named by the ``dataset`` key."""
    name = cfg.get_str("dataset", "toy_regression")
    n_train = cfg.get_int("n_train", 640)
    n_test = cfg.get_int("n_test", 0)
    if name == "toy_regression":
        train_set = datasets.toy_regression(n_train, rng)
        test_set = datasets.toy_regression(n_test, rng) if n_test else None
    elif name == "linear_teacher":
        full = datasets.linear_teacher(n_train + n_test, spec.widths[0], spec.widths[-1], rng, cfg.get_float("noise", 0.0))
        train_set = full.subset(np.arange(n_train))
        test_set = full.subset(np.arange(n_train, n_train + n_test)) if n_test else None
    elif name == "mnist_like":
        train_set = datasets.mnist_like(n_train, rng, spec.widths[0], spec.widths[-1])
        test_set = datasets.mnist_like(n_test, rng, spec.widths[0], spec.widths[-1]) if n_test else None
    elif name == "mnist":
        standardise = cfg.get_bool("standardise", True)
        train_set = datasets.load_mnist_idx(*_mnist_paths(cfg, "train"), standardise=standardise)
        test_set = datasets.load_mnist_idx(*_mnist_paths(cfg, "test"), standardise=standardise)
        subset = cfg.get_int("train_subset", 0)
        if subset:
            train_set = train_set.subset(rng.permutation(len(train_set))[:subset])
    else:
        raise ValueError(f"unknown dataset '{name}'")
    if train_set.inputs.shape[1] != spec.widths[0] or train_set.targets.shape[1] != spec.widths[-1]:
        raise ValueError(
            f"dataset '{name}' has shape {train_set.inputs.shape[1]}->{train_set.targets.shape[1]}, "
            f"network expects {spec.widths[0]}->{spec.widths[-1]}"
        )
    return train_set, test_set


def _first_batch(dataset: datasets.Dataset, size: int) -> Batch:
    n = min(size, len(dataset))
    return Batch(dataset.inputs[:n], dataset.targets[:n])


# --- train ---------------------------------------------------------------------------


def cmd_train(cfg: KeyValueConfig, out: Path, seed: int) -> dict:
    """Train a PCN or its backprop baseline and dump metrics plus final weights."""
    rng = Rng(seed)
    spec = spec_from_config(cfg)
    train_set, test_set = load_datasets(cfg, spec, rng.child(0))
    tcfg = train_config_from_config(cfg, seed, inference_from_config(cfg, 20, spec.n_hidden))
    weights = model.init_weights(spec, rng.child(1))
    writer = MetricWriter(out / "metrics.csv", record_wallclock=cfg.get_bool("record_wallclock", False))
    max_steps = cfg.get_int("max_steps", 0) or None
    weights, rows = train(spec, weights, train_set, tcfg, rng.child(2), test_set, writer, max_steps)
    np.savez(out / "weights.npz", **{f"W{layer}": w for layer, w in enumerate(weights, start=1)})
    train_rows = [r for r in rows if r["split"] == "train"]
    test_rows = [r for r in rows if r["split"] == "test"]
    summary = {"steps": len(train_rows), "final_train_loss": train_rows[-1]["loss"] if train_rows else None}
    if test_rows:
        summary["final_test_loss"] = test_rows[-1]["loss"]
        summary["final_test_accuracy"] = test_rows[-1]["accuracy"]
    return summary


# --- energy check --------------------------------------------------------------------


def _relative_gap(numerical: float, theoretical: float) -> float:
    diff = abs(numerical - theoretical)
    return diff / abs(theoretical) if theoretical != 0 else diff


def cmd_energy_check(cfg: KeyValueConfig, out: Path, seed: int) -> dict:
    """Compare the energy after inference with the closed-form equilibrated energy during PC training."""
    rng = Rng(seed)
    spec = spec_from_config(cfg)
    if not spec.is_linear:
        raise ValueError("energy-check needs a linear network")
    if "dataset" not in cfg:
        cfg = KeyValueConfig({**cfg.as_dict(), "dataset": "linear_teacher"})
    train_set, _ = load_datasets(cfg, spec, rng.child(0))
    mode = cfg.get_str("inference", "gd")
    infer = inference_from_config(cfg, 500)
    lr = cfg.get_float("lr", 1e-3)
    steps = cfg.get_int("train_steps", 100)
    period = max(1, cfg.get_int("log_period", 10))
    batch_size = cfg.get_int("batch_size", 64)
    weights = model.init_weights(spec, rng.child(1))
    optim = OptimState(cfg.get_str("optimiser", "sgd"), lr)
    order = rng.child(2)
    rows = []
    step = 0
    while step <= steps:
        for batch in datasets.batches(train_set, batch_size, order):
            if step > steps:
                break
            if mode == "analytic":
                z = analytic_dln_inference(spec, weights, batch)
            else:
                z0, _ = model.forward(spec, weights, batch.x)
                z, _ = run_inference(spec, weights, z0, batch, infer)
            numerical, _ = model.energy(spec, weights, z, batch)
            if step % period == 0 or step == steps:
                theoretical = theory.equilibrated_energy(spec, weights, batch)
                rows.append((step, numerical, theoretical, _relative_gap(numerical, theoretical)))
            grads = model.weight_gradient(spec, weights, z, batch)
            weights, optim = apply_update(weights, grads, optim)
            step += 1
    write_csv(out / "energy_check.csv", CSV_SCHEMAS["energy-check"]["energy_check.csv"], rows)
    gaps = [r[3] for r in rows]
    return {"logged_steps": len(rows), "max_gap": max(gaps), "median_gap": float(np.median(gaps))}


# --- saddle escape -------------------------------------------------------------------


def _origin_lambda_mins(spec: NetworkSpec, batch: Batch, max_params: int = 2000) -> tuple[float | None, float | None]:
    if model.n_params(spec) > max_params or spec.has_skips or not spec.is_linear:
        return None, None
    if not np.allclose(spec.premultipliers, 1.0):
        return None, None
    loss_eig = sym_eigvals(theory.loss_hessian_origin(batch, spec))
    energy_eig = sym_eigvals(theory.energy_hessian_origin(batch, spec))
    return float(loss_eig[0]), float(energy_eig[0])


def _run_until(spec, weights, train_set, tcfg: TrainConfig, rng: Rng, max_steps: int, threshold: float):
    """SGD run that stops at the first batch loss below ``threshold``."""
    optim = OptimState(tcfg.optimiser, tcfg.lr)
    trace = []
    step = 0
    try:
        while step < max_steps:
            for batch in datasets.batches(train_set, tcfg.batch_size, rng):
                if tcfg.algorithm == "pc":
                    weights, optim, metrics = pc_train_step(spec, weights, batch, tcfg, None, optim)
                else:
                    weights, optim, metrics = bp_train_step(spec, weights, batch, tcfg, optim)
                trace.append((step, metrics["loss"], metrics["energy"], metrics["grad_norm"]))
                step += 1
                if metrics["loss"] < threshold or step >= max_steps:
                    return weights, trace
    except TRAINING_FAILURES:
        trace.append((step, math.inf, math.inf, math.inf))
    return weights, trace


def _saddle_escape_sgd(cfg: KeyValueConfig, out: Path, seed: int) -> dict:
    spec = spec_from_config(cfg)
    if spec.init_scale is None:
        spec = spec.with_(init_scale=cfg.get_float("sigma", 5e-2))
    n_runs = cfg.get_int("n_seeds", 3)
    max_steps = cfg.get_int("max_steps", 5000)
    threshold = cfg.get_float("threshold", 0.01)
    infer = inference_from_config(cfg, 20)
    trace_rows, summary_rows = [], []
    reached = {"pc": [], "bp": []}
    for run in range(n_runs):
        rng = Rng(seed).child(run)
        train_set, _ = load_datasets(cfg, spec, rng.child(0))
        init = model.init_weights(spec, rng.child(1))
        loss_min, energy_min = _origin_lambda_mins(spec, train_set.as_batch())
        for algorithm in ("pc", "bp"):
            tcfg = TrainConfig(
                algorithm=algorithm,
                batch_size=cfg.get_int("batch_size", 64),
                lr=cfg.get_float("lr", 0.4),
                optimiser=cfg.get_str("optimiser", "sgd"),
                inference=infer,
                analytic_inference=cfg.get_bool("analytic_inference", False),
                seed=seed,
            )
            _, trace = _run_until(spec, [w.copy() for w in init], train_set, tcfg, rng.child(2), max_steps, threshold)
            trace_rows.extend((algorithm, run, *row) for row in trace)
            hit = steps_to_threshold([row[1] for row in trace], threshold)
            reached[algorithm].append(hit)
            summary_rows.append((algorithm, run, hit, trace[-1][1], loss_min, energy_min))
    schema = CSV_SCHEMAS["saddle-escape"]
    write_csv(out / "saddle_escape.csv", schema["saddle_escape.csv"], trace_rows)
    write_csv(out / "saddle_summary.csv", schema["saddle_summary.csv"], summary_rows)
    pc_faster = [
        p is not None and (b is None or p < b) for p, b in zip(reached["pc"], reached["bp"])
    ]
    return {"pc_steps": reached["pc"], "bp_steps": reached["bp"], "pc_faster_runs": int(sum(pc_faster))}


def find_plateaus(losses: Sequence[float], min_length: int = 50, tol: float = 1e-4) -> list[tuple[int, int]]:
    """``(start, length)`` of runs of at least ``min_length`` steps with ``|loss change| < tol``.

    A run of ``k`` small changes spans ``k + 1`` consecutive steps.
    """
    flat = np.abs(np.diff(np.asarray(losses, dtype=float))) < tol
    runs, start = [], None
    for i, is_flat in enumerate(np.append(flat, False)):
        if is_flat and start is None:
            start = i
        elif not is_flat and start is not None:
            if i - start >= min_length:
                runs.append((start, i - start))
            start = None
    return runs


def _full_batch_bp(spec, weights, batch, lr, steps, snapshot_at=()):
    losses, snaps = [], {}
    wanted = set(snapshot_at)
    for step in range(steps):
        if step in wanted:
            snaps[step] = [w.copy() for w in weights]
        loss, grads = model.mse_loss_and_bp_gradient(spec, weights, batch)
        losses.append(loss)
        weights = [w - lr * g for w, g in zip(weights, grads)]
    return losses, snaps


def _end_to_end_rank(spec, weights, tol=1e-2) -> int:
    sv = np.linalg.svd(theory.end_to_end_map(spec, weights), compute_uv=False)
    return int(np.sum(sv > tol * max(1.0, sv[0])))


def _saddle_escape_matrix_completion(cfg: KeyValueConfig, out: Path, seed: int) -> dict:
    rng = Rng(seed)
    size = cfg.get_int("size", 10)
    target, mask = datasets.matrix_completion_task(
        rng.child(0), size=size, rank=cfg.get_int("rank", 3), n_masked=cfg.get_int("n_masked", 20)
    )
    batch = datasets.matrix_completion_batch(target, mask)
    hidden = cfg.get_int("hidden_width", 100)
    spec = NetworkSpec.create(
        [size] + [hidden] * cfg.get_int("n_hidden", 3) + [size], "linear", "SP", init_scale=cfg.get_float("sigma", 5e-3)
    )
    lr = cfg.get_float("lr", 1e-2)
    bp_steps = cfg.get_int("bp_steps", 60000)
    restart_steps = cfg.get_int("restart_steps", 200)
    drop = cfg.get_float("escape_drop", 0.1)
    min_saddle_loss = cfg.get_float("min_saddle_loss", 1e-2)
    log_period = max(1, cfg.get_int("log_period", 10))
    init = model.init_weights(spec, rng.child(1))

    losses, _ = _full_batch_bp(spec, [w.copy() for w in init], batch, lr, bp_steps)
    # the task is exactly solvable, so a flat stretch at near-zero loss is the minimum, not a saddle
    plateaus = [
        (start, length)
        for start, length in find_plateaus(losses, cfg.get_int("plateau_steps", 50), cfg.get_float("plateau_tol", 1e-4))
        if float(np.median(losses[start : start + length + 1])) > min_saddle_loss
    ]
    mids = [start + length // 2 for start, length in plateaus]
    _, snaps = _full_batch_bp(spec, [w.copy() for w in init], batch, lr, max(mids, default=-1) + 1, mids)

    trace_rows = [("bp", 0, step, loss, loss, "") for step, loss in enumerate(losses) if step % log_period == 0]
    plateau_rows = []
    use_analytic = cfg.get_str("inference", "analytic") == "analytic"
    infer = inference_from_config(cfg, 200)
    for idx, ((start, length), mid) in enumerate(zip(plateaus, mids)):
        weights = snaps[mid]
        loss0 = losses[mid]
        pc_loss = []
        for step in range(restart_steps + 1):
            grads, metrics = pc_weight_gradient(spec, weights, batch, infer, analytic=use_analytic)
            pc_loss.append(metrics["loss"])
            trace_rows.append(("pc", idx + 1, mid + step, metrics["loss"], metrics["energy"], metrics["grad_norm"]))
            weights = [w - lr * g for w, g in zip(weights, grads)]
        pc_escape = next((s for s, v in enumerate(pc_loss) if v <= (1.0 - drop) * loss0), None)
        bp_escape = next((s - mid for s in range(mid, len(losses)) if losses[s] <= (1.0 - drop) * loss0), None)
        plateau_rows.append(
            (idx + 1, start, length, loss0, _end_to_end_rank(spec, snaps[mid]), pc_escape, bp_escape, pc_escape is not None)
        )
    schema = CSV_SCHEMAS["saddle-escape"]
    write_csv(out / "saddle_escape.csv", schema["saddle_escape.csv"], trace_rows)
    write_csv(out / "plateaus.csv", schema["plateaus.csv"], plateau_rows)
    return {
        "n_plateaus": len(plateaus),
        "pc_escape_steps": [r[5] for r in plateau_rows],
        "bp_escape_steps": [r[6] for r in plateau_rows],
        "all_escaped": bool(plateau_rows) and all(r[7] for r in plateau_rows),
    }


def cmd_saddle_escape(cfg: KeyValueConfig, out: Path, seed: int) -> dict:
    """PC versus BP from near a saddle: SGD on toy regression or the matrix-completion study."""
    task = cfg.get_str("task", "chain")
    if task == "matrix_completion":
        return _saddle_escape_matrix_completion(cfg, out, seed)
    if task == "chain":
        defaults = {"hidden_width": "1", "input_width": "1", "output_width": "1", "n_hidden": "5"}
        cfg = KeyValueConfig({**defaults, **cfg.as_dict()})
        return _saddle_escape_sgd(cfg, out, seed)
    if task == "network":
        return _saddle_escape_sgd(cfg, out, seed)
    raise ValueError(f"unknown saddle-escape task '{task}'")


# --- conditioning scan ---------------------------------------------------------------


def _cond_cell(cell):
    width, depth, param, variant, seed_index, stream_seed, activation = cell
    resnet = variant == "pc_resnet"
    spec = NetworkSpec.create([width] * (depth + 2), activation, param, resnet=resnet)
    weights = model.init_weights(spec, Rng(stream_seed))
    cond = theory.condition_number(theory.assemble_activity_hessian(spec, weights, variant))
    return (width, depth, param, variant, seed_index, cond.lambda_min, cond.lambda_max, cond.kappa)


def cmd_cond_scan(cfg: KeyValueConfig, out: Path, seed: int) -> dict:
    """Extreme eigenvalues and condition number of the activity Hessian at initialisation."""
    widths = cfg.get_list("widths", int, [2, 4, 8, 16, 32, 64])
    depths = cfg.get_list("depths", int, [2, 4, 8, 16, 32, 64])
    params = cfg.get_list("parameterisations", str, ["SP"])
    variants = cfg.get_list("variants", str, ["pc_fc"])
    n_seeds = cfg.get_int("n_seeds", 3)
    if not widths or not depths or not params or not variants:
        raise ValueError("cond-scan grids must be nonempty")
    for variant in variants:
        if variant not in theory.HESSIAN_VARIANTS:
            raise ValueError(f"unknown Hessian variant '{variant}'")
    too_big = [(n, h) for n in widths for h in depths if n * h > 8192]
    if too_big:
        raise ValueError(f"grid cells exceed N*H <= 8192: {too_big[:3]}")
    base = Rng(seed)
    cells = [
        (n, h, p, v, s, base.child(s).seed, cfg.get_str("activation", "linear"))
        for p in params
        for v in variants
        for h in depths
        for n in widths
        for s in range(n_seeds)
    ]
    rows = _map_cells(_cond_cell, cells, cfg.get_int("workers", 1))
    write_csv(out / "cond_scan.csv", CSV_SCHEMAS["cond-scan"]["cond_scan.csv"], rows)
    return {"cells": len(rows), "max_kappa": max(r[7] for r in rows)}


# --- loss / energy ratio -------------------------------------------------------------


def cmd_ratio_scan(cfg: KeyValueConfig, out: Path, seed: int) -> dict:
    """Ratio of the MSE loss to the equilibrated energy for linear residual networks."""
    widths = cfg.get_list("widths", int, [8, 32, 128, 512])
    depths = cfg.get_list("depths", int, [2, 4])
    param = cfg.get_str("parameterisation", "muPC")
    n_seeds = cfg.get_int("n_seeds", 1)
    batch_size = cfg.get_int("batch_size", 64)
    train_steps = cfg.get_int("train_steps", 0)
    lr = cfg.get_float("lr", 1e-1)
    rows = []
    for h in depths:
        for n in widths:
            n_in = cfg.get_int("input_width", n)
            n_out = cfg.get_int("output_width", n)
            spec = NetworkSpec.create([n_in] + [n] * h + [n_out], "linear", param, resnet=cfg.get_bool("resnet", True))
            for s in range(n_seeds):
                rng = Rng(seed).child(s)
                weights = model.init_weights(spec, rng.child(0))
                data_rng = rng.child(1)
                optim = OptimState("sgd", lr)
                for step in range(train_steps + 1):
                    batch = Batch(data_rng.normal(size=(batch_size, n_in)), data_rng.normal(size=(batch_size, n_out)))
                    loss = theory.mse_from_weights(spec, weights, batch)
                    f_star = theory.equilibrated_energy(spec, weights, batch)
                    rows.append((n, h, param, s, step, loss, f_star, loss / f_star))
                    if step < train_steps:
                        grads = theory.equilibrated_energy_gradient(spec, weights, batch)
                        weights, optim = apply_update(weights, grads, optim)
    write_csv(out / "ratio_scan.csv", CSV_SCHEMAS["ratio-scan"]["ratio_scan.csv"], rows)
    return {"rows": len(rows), "max_ratio_at_init": max(r[7] for r in rows if r[4] == 0)}


# --- hyperparameter transfer ---------------------------------------------------------


def _transfer_cell(cell):
    cfg_items, sweep, value, lr, beta, seed = cell
    cfg = KeyValueConfig(dict(cfg_items))
    overrides = {"hidden_width" if sweep == "width" else "n_hidden": str(value), "lr": repr(lr), "step_size": repr(beta)}
    cfg = KeyValueConfig({**cfg.as_dict(), **overrides})
    spec = spec_from_config(cfg)
    infer = inference_from_config(
        KeyValueConfig({"inference_steps": "auto", "grad_tol": "0", **cfg.as_dict()}), n_hidden=spec.n_hidden
    )
    tcfg = TrainConfig(
        algorithm=cfg.get_str("algorithm", "pc"),
        epochs=cfg.get_int("epochs", 1),
        batch_size=cfg.get_int("batch_size", 64),
        lr=lr,
        optimiser=cfg.get_str("optimiser", "adam"),
        inference=infer,
        eval_period=0,
        seed=seed,
    )
    rng = Rng(seed)
    train_set, _ = load_datasets(cfg, spec, rng.child(0))
    weights = model.init_weights(spec, rng.child(1))
    max_steps = cfg.get_int("max_steps", 0) or None
    try:
        _, rows = train(spec, weights, train_set, tcfg, rng.child(2), max_steps=max_steps)
        losses = [r["loss"] for r in rows if r["split"] == "train"]
        min_loss = float(np.min(losses))
        diverged = not np.isfinite(min_loss)
    except TRAINING_FAILURES:
        min_loss, diverged = math.inf, True
    if diverged:
        min_loss = math.inf
    return (sweep, value, lr, beta, min_loss, diverged)


def cmd_transfer_grid(cfg: KeyValueConfig, out: Path, seed: int) -> dict:
    """Minimum training loss over a weight/activity learning-rate grid per width or depth."""
    lrs = cfg.get_list("lrs", float)
    betas = cfg.get_list("betas", float)
    sweep = cfg.get_str("sweep", "depth")
    if sweep not in ("depth", "width"):
        raise ValueError("sweep must be 'depth' or 'width'")
    values = cfg.get_list("sweep_values", int)
    if not lrs or not betas or not values:
        raise ValueError("transfer-grid grids must be nonempty")
    items = tuple(sorted(cfg.as_dict().items()))
    cells = [(items, sweep, v, lr, beta, seed) for v in values for lr in lrs for beta in betas]
    rows = _map_cells(_transfer_cell, cells, cfg.get_int("workers", 1))
    write_csv(out / "transfer_grid.csv", CSV_SCHEMAS["transfer-grid"]["transfer_grid.csv"], rows)
    best_rows = []
    for v in values:
        cands = [r for r in rows if r[1] == v and np.isfinite(r[4])]
        if cands:
            best = min(cands, key=lambda r: r[4])
            best_rows.append((sweep, v, best[2], best[3], best[4]))
    write_csv(out / "transfer_argmin.csv", CSV_SCHEMAS["transfer-grid"]["transfer_argmin.csv"], best_rows)
    return {"cells": len(rows), "argmin": [(r[1], r[2], r[3]) for r in best_rows]}


# --- forward stability ---------------------------------------------------------------


def _parse_setting(setting: str) -> tuple[str, bool]:
    param, _, arch = setting.partition("-")
    if arch not in ("fc", "resnet"):
        raise ValueError(f"setting '{setting}' must look like '<parameterisation>-fc' or '<parameterisation>-resnet'")
    return param, arch == "resnet"


def forward_norms(spec: NetworkSpec, weights, x: np.ndarray) -> list[float]:
    """Mean L2 norm of each hidden activity over the batch rows."""
    hidden, _ = model.forward(spec, weights, x)
    return [float(np.mean(np.linalg.norm(z, axis=1))) for z in hidden]


def cmd_fwd_stability(cfg: KeyValueConfig, out: Path, seed: int) -> dict:
    """Per-layer activity norms of the feedforward pass at initialisation."""
    settings = cfg.get_list("settings", str, ["muPC-resnet", "SP-fc"])
    activations = cfg.get_list("activations", str, ["linear", "tanh", "relu"])
    depths = cfg.get_list("depths", int, [8, 16, 32, 64])
    width = cfg.get_int("width", 128)
    n_in = cfg.get_int("input_width", width)
    n_out = cfg.get_int("output_width", 10)
    batch_size = cfg.get_int("batch_size", 64)
    n_seeds = cfg.get_int("n_seeds", 3)
    kaiming = cfg.get_str("sp_init", "kaiming_uniform") == "kaiming_uniform"
    rows = []
    for setting in settings:
        param, resnet = _parse_setting(setting)
        for activation in activations:
            for depth in depths:
                spec = NetworkSpec.create(
                    [n_in] + [width] * depth + [n_out],
                    activation,
                    param,
                    resnet=resnet,
                    kaiming_uniform=kaiming and param == "SP",
                )
                for s in range(n_seeds):
                    rng = Rng(seed).child(s)
                    x = rng.child(0).normal(size=(batch_size, n_in))
                    input_norm = float(np.mean(np.linalg.norm(x, axis=1)))
                    norms = forward_norms(spec, model.init_weights(spec, rng.child(1)), x)
                    rows.extend(
                        (setting, activation, depth, s, layer, norm, norm / input_norm)
                        for layer, norm in enumerate(norms, start=1)
                    )
    write_csv(out / "fwd_stability.csv", CSV_SCHEMAS["fwd-stability"]["fwd_stability.csv"], rows)
    return {"rows": len(rows)}


# --- cosine similarity on the one-hidden-unit network --------------------------------


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def cmd_cosine_1mlp(cfg: KeyValueConfig, out: Path, seed: int) -> dict:
    """Alignment of PC, BP and damped-Newton updates with the direction to the nearest solution."""
    n_inits = cfg.get_int("n_inits", 10)
    n_batches = cfg.get_int("n_batches", 5)
    batch_size = cfg.get_int("batch_size", 64)
    lr = cfg.get_float("lr", 0.2)
    damping = cfg.get_float("damping", 2.0)
    infer = inference_from_config(cfg, 20)
    spec = NetworkSpec.create([1, 1, 1], "linear", "SP")
    rng = Rng(seed)
    train_set = datasets.toy_regression(batch_size * n_batches, rng.child(0))
    slope = float(np.mean(train_set.targets / train_set.inputs))
    fixed_init = np.array(cfg.get_list("init_weights", float)) if "init_weights" in cfg else None
    if fixed_init is not None and fixed_init.shape != (2,):
        raise ValueError("init_weights needs exactly two values")
    rows = []
    for init in range(n_inits):
        w0 = fixed_init.copy() if fixed_init is not None else rng.child(init + 1).uniform(-1.0, 1.0, size=2)
        for algorithm in ("pc", "bp", "trn"):
            w = w0.copy()
            for b in range(n_batches):
                idx = np.arange(b * batch_size, (b + 1) * batch_size)
                batch = Batch(train_set.inputs[idx], train_set.targets[idx])
                weights = [np.array([[w[0]]]), np.array([[w[1]]])]
                if algorithm == "pc":
                    grads, _ = pc_weight_gradient(spec, weights, batch, infer)
                    update = -np.array([grads[0].item(), grads[1].item()])
                else:
                    _, grads = model.mse_loss_and_bp_gradient(spec, weights, batch)
                    g = np.array([grads[0].item(), grads[1].item()])
                    if algorithm == "bp":
                        update = -g
                    else:
                        hess = theory.single_unit_loss_hessian(w[0], w[1], batch.x, batch.y)
                        update = theory.trn_update(g, hess, 1.0 / damping)
                target = np.array(theory.nearest_solution_single_unit(w[0], w[1], slope))
                direction = target - w
                distance = float(np.linalg.norm(direction))
                if distance < 1e-12 or np.linalg.norm(update) == 0:
                    rows.append((init, b, algorithm, None, distance, True))
                else:
                    rows.append((init, b, algorithm, _cosine(direction, update), distance, False))
                w = w + lr * update
    summary_rows = []
    for algorithm in ("pc", "bp", "trn"):
        for b in range(n_batches):
            vals = [r[3] for r in rows if r[2] == algorithm and r[1] == b and not r[5]]
            summary_rows.append((algorithm, b, float(np.mean(vals)) if vals else None, len(vals)))
    schema = CSV_SCHEMAS["cosine-1mlp"]
    write_csv(out / "cosine_1mlp.csv", schema["cosine_1mlp.csv"], rows)
    write_csv(out / "cosine_summary.csv", schema["cosine_summary.csv"], summary_rows)
    means = {
        a: float(np.mean([r[3] for r in rows if r[2] == a and not r[5]] or [np.nan])) for a in ("pc", "bp", "trn")
    }
    return {"mean_cosine": means}


SUBCOMMANDS = {
    "train": cmd_train,
    "energy-check": cmd_energy_check,
    "saddle-escape": cmd_saddle_escape,
    "cond-scan": cmd_cond_scan,
    "ratio-scan": cmd_ratio_scan,
    "transfer-grid": cmd_transfer_grid,
    "fwd-stability": cmd_fwd_stability,
    "cosine-1mlp": cmd_cosine_1mlp,
}
