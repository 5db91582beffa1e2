"""Outer-loop training: PC and backprop steps with SGD or Adam."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import model
from .errors import NonFiniteGradientError
from .inference import InferenceConfig, analytic_dln_inference, run_inference
from .model import Batch, NetworkSpec, Weights

METRIC_COLUMNS = ("step", "split", "loss", "energy", "accuracy", "grad_norm", "wallclock_ms")


@dataclass
class OptimState:
    """Optimiser hyperparameters plus Adam moment buffers."""

    kind: str = "sgd"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimiser '{self.kind}'")
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")


@dataclass(frozen=True)
class TrainConfig:
    algorithm: str = "pc"
    epochs: int = 1
    batch_size: int = 64
    lr: float = 1e-3
    optimiser: str = "sgd"
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    analytic_inference: bool = False
    eval_period: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ("pc", "bp"):
            raise ValueError(f"unknown algorithm '{self.algorithm}'")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


def _check_grads(grads: Weights) -> None:
    for layer, g in enumerate(grads, start=1):
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(layer)


def sgd_step(weights: Weights, grads: Weights, lr: float) -> Weights:
    """``W_l <- W_l - lr * g_l``."""
    _check_grads(grads)
    return [w - lr * g for w, g in zip(weights, grads)]


def adam_step(weights: Weights, grads: Weights, state: OptimState) -> tuple[Weights, OptimState]:
    """Bias-corrected Adam. Returns new weights and a new state."""
    _check_grads(grads)
    m_prev = state.m or [np.zeros_like(w) for w in weights]
    v_prev = state.v or [np.zeros_like(w) for w in weights]
    t = state.step + 1
    m = [state.beta1 * mi + (1 - state.beta1) * g for mi, g in zip(m_prev, grads)]
    v = [state.beta2 * vi + (1 - state.beta2) * g**2 for vi, g in zip(v_prev, grads)]
    c1 = 1 - state.beta1**t
    c2 = 1 - state.beta2**t
    new = [w - state.lr * (mi / c1) / (np.sqrt(vi / c2) + state.eps) for w, mi, vi in zip(weights, m, v)]
    return new, OptimState(state.kind, state.lr, state.beta1, state.beta2, state.eps, t, m, v)


def apply_update(weights: Weights, grads: Weights, state: OptimState) -> tuple[Weights, OptimState]:
    if state.kind == "adam":
        return adam_step(weights, grads, state)
    return sgd_step(weights, grads, state.lr), state


def grad_norm(grads: Weights) -> float:
    return float(np.sqrt(sum(float(np.sum(g**2)) for g in grads)))


def pc_weight_gradient(
    spec: NetworkSpec,
    weights: Weights,
    batch: Batch,
    infer_cfg: InferenceConfig,
    analytic: bool = False,
) -> tuple[Weights, dict]:
    """Forward-initialise, run inference, and return the weight gradient at the final activities."""
    z0, pred = model.forward(spec, weights, batch.x)
    energy_pre, _ = model.energy(spec, weights, z0, batch)
    loss = _mse(pred, batch)
    if analytic:
        z = analytic_dln_inference(spec, weights, batch)
        steps = 0
    else:
        z, trace = run_inference(spec, weights, z0, batch, infer_cfg)
        steps = trace.steps
    energy, _ = model.energy(spec, weights, z, batch)
    grads = model.weight_gradient(spec, weights, z, batch)
    return grads, {
        "loss": loss,
        "energy_pre": energy_pre,
        "energy": energy,
        "accuracy": _accuracy(pred, batch.y),
        "inference_steps": steps,
        "grad_norm": grad_norm(grads),
    }


def pc_train_step(
    spec: NetworkSpec,
    weights: Weights,
    batch: Batch,
    train_cfg: TrainConfig,
    infer_cfg: InferenceConfig | None,
    optim: OptimState,
) -> tuple[Weights, OptimState, dict]:
    """One PC update. Metrics refer to the weights before the update."""
    infer_cfg = infer_cfg or train_cfg.inference
    grads, metrics = pc_weight_gradient(spec, weights, batch, infer_cfg, train_cfg.analytic_inference)
    new, optim = apply_update(weights, grads, optim)
    return new, optim, metrics


def bp_train_step(
    spec: NetworkSpec, weights: Weights, batch: Batch, train_cfg: TrainConfig, optim: OptimState
) -> tuple[Weights, OptimState, dict]:
    """One backprop update. Metrics refer to the weights before the update."""
    loss, grads = model.mse_loss_and_bp_gradient(spec, weights, batch)
    _, pred = model.forward(spec, weights, batch.x)
    new, optim = apply_update(weights, grads, optim)
    metrics = {
        "loss": loss,
        "energy_pre": loss,
        "energy": loss,
        "accuracy": _accuracy(pred, batch.y),
        "inference_steps": 0,
        "grad_norm": grad_norm(grads),
    }
    return new, optim, metrics


def evaluate(spec: NetworkSpec, weights: Weights, inputs: np.ndarray, targets: np.ndarray) -> tuple[float, float]:
    """MSE loss and argmax accuracy on a dataset."""
    batch = Batch(inputs, targets)
    _, pred = model.forward(spec, weights, batch.x)
    loss = 0.5 * float(np.sum((batch.y - pred) ** 2)) / batch.size
    return loss, _accuracy(pred, batch.y)


def _mse(pred: np.ndarray, batch: Batch) -> float:
    residual = batch.y - pred
    if batch.mask is not None:
        residual = residual * batch.mask
    return 0.5 * float(np.sum(residual**2)) / batch.effective_size


def _accuracy(pred: np.ndarray, targets: np.ndarray) -> float:
    return float(np.mean(np.argmax(pred, axis=1) == np.argmax(targets, axis=1)))


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


class MetricWriter:
    """Appends metric rows to a CSV file with a fixed header.

    Wallclock is left blank unless ``record_wallclock`` is set, so reruns with
    the same seed give byte-identical files.
    """

    def __init__(self, path: str | Path | None, record_wallclock: bool = False):
        self.rows: list[dict] = []
        self.record_wallclock = record_wallclock
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(METRIC_COLUMNS)

    def write(self, **row) -> None:
        record = {col: row.get(col, "") for col in METRIC_COLUMNS}
        self.rows.append(record)
        if self.path is not None:
            cells = [_cell(record[c]) for c in METRIC_COLUMNS]
            if not self.record_wallclock:
                cells[METRIC_COLUMNS.index("wallclock_ms")] = ""
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(cells)


def train(
    spec: NetworkSpec,
    weights: Weights,
    train_data,
    cfg: TrainConfig,
    rng,
    test_data=None,
    writer: MetricWriter | None = None,
    max_steps: int | None = None,
) -> tuple[Weights, list[dict]]:
    """Run ``cfg.epochs`` of PC or BP training over shuffled mini-batches.

    ``train_data`` and ``test_data`` are :class:`pcbench.data.Dataset` objects.
    Train rows are logged every step; test rows every ``eval_period`` steps and
    at the end.
    """
    from .data import batches

    optim = OptimState(cfg.optimiser, cfg.lr)
    writer = writer or MetricWriter(None)
    start = time.perf_counter()
    step = 0

    def elapsed_ms():
        return round(1000.0 * (time.perf_counter() - start), 3)

    def log_test():
        if test_data is None:
            return
        loss, acc = evaluate(spec, weights, test_data.inputs, test_data.targets)
        writer.write(step=step, split="test", loss=loss, accuracy=acc, wallclock_ms=elapsed_ms())

    for _ in range(cfg.epochs):
        for batch in batches(train_data, cfg.batch_size, rng):
            if cfg.algorithm == "pc":
                weights, optim, metrics = pc_train_step(spec, weights, batch, cfg, None, optim)
            else:
                weights, optim, metrics = bp_train_step(spec, weights, batch, cfg, optim)
            writer.write(
                step=step,
                split="train",
                loss=metrics["loss"],
                energy=metrics["energy"],
                accuracy=metrics["accuracy"],
                grad_norm=metrics["grad_norm"],
                wallclock_ms=elapsed_ms(),
            )
            step += 1
            if cfg.eval_period and step % cfg.eval_period == 0:
                log_test()
            if max_steps is not None and step >= max_steps:
                log_test()
                return weights, writer.rows
    if not (cfg.eval_period and step % cfg.eval_period == 0):
        log_test()
    return weights, writer.rows


def steps_to_threshold(losses: Iterable[float], threshold: float) -> int | None:
    """Index of the first loss strictly below ``threshold``, or ``None``."""
    for idx, value in enumerate(losses):
        if value < threshold:
            return idx
    return None
