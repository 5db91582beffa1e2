"""Inference: minimising the energy over the free activities."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model
from .errors import DivergenceError, UnsupportedSpecError
from .model import Activities, Batch, NetworkSpec, Weights
from .numerics import solve_linear

DIVERGENCE_ENERGY = 1e12
SOLVERS = ("gd", "heun")


@dataclass(frozen=True)
class InferenceConfig:
    """Solver settings. ``step_size`` is the GD rate or the Heun ``dt``."""

    solver: str = "gd"
    step_size: float = 0.1
    max_steps: int = 20
    grad_tol: float = 1e-6
    halving_schedule: int = 0

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver '{self.solver}', expected one of {SOLVERS}")
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if self.grad_tol < 0:
            raise ValueError("grad_tol must be >= 0")
        if self.halving_schedule < 0:
            raise ValueError("halving_schedule must be >= 0")


@dataclass
class InferenceTrace:
    """Energy and max-norm activity gradient after every accepted update.

    The state before the first update is kept in ``initial_energy`` and
    ``initial_grad_norm`` so that each list has exactly ``steps`` entries.
    """

    energies: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    steps: int = 0
    converged: bool = False
    step_size: float = 0.0
    initial_energy: float = float("nan")
    initial_grad_norm: float = float("nan")
    halvings: int = 0

    @property
    def final_energy(self) -> float:
        return self.energies[-1] if self.energies else self.initial_energy

    def to_csv(self, path: str | Path) -> None:
        """Write ``step,energy,grad_norm`` with the initial state as step 0."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step", "energy", "grad_norm"])
            writer.writerow([0, repr(self.initial_energy), repr(self.initial_grad_norm)])
            for step, (e, g) in enumerate(zip(self.energies, self.grad_norms), start=1):
                writer.writerow([step, repr(e), repr(g)])


def _max_norm(grads: Activities) -> float:
    return max((float(np.max(np.abs(g))) for g in grads if g.size), default=0.0)


def _run(spec, weights, activities, batch, cfg: InferenceConfig, clamp_output: bool, make_step):
    """Shared solver loop.

    An update that raises the energy is rejected and the step size halved, at
    most ``cfg.halving_schedule`` times; rejected updates still use up one of
    the ``max_steps`` iterations. Energies above ``DIVERGENCE_ENERGY`` abort.
    """
    z = [np.array(a, dtype=float, copy=True) for a in activities]
    step_size = cfg.step_size
    step_fn = make_step(step_size)
    energy, grads = model.energy_and_activity_gradient(spec, weights, z, batch, clamp_output)
    trace = InferenceTrace(initial_energy=energy, initial_grad_norm=_max_norm(grads))
    if trace.initial_grad_norm < cfg.grad_tol:
        trace.converged = True
    for iteration in range(1, cfg.max_steps + 1):
        if trace.converged:
            break
        candidate = step_fn(z, grads)
        e, g = model.energy_and_activity_gradient(spec, weights, candidate, batch, clamp_output, validate=False)
        if e > energy and trace.halvings < cfg.halving_schedule:
            trace.halvings += 1
            step_size /= 2
            step_fn = make_step(step_size)
            continue
        if not np.isfinite(e) or e > DIVERGENCE_ENERGY:
            raise DivergenceError(iteration, e)
        z, energy, grads = candidate, e, g
        trace.energies.append(e)
        trace.grad_norms.append(_max_norm(g))
        trace.steps += 1
        trace.converged = trace.grad_norms[-1] < cfg.grad_tol
    trace.step_size = step_size
    return z, trace


def gd_inference(
    spec: NetworkSpec,
    weights: Weights,
    activities: Activities,
    batch: Batch,
    cfg: InferenceConfig,
    clamp_output: bool = True,
) -> tuple[Activities, InferenceTrace]:
    """Gradient descent on the activities: ``z <- z - beta * dF/dz``."""

    def make_step(beta):
        def step(z, grads):
            return [zi - beta * gi for zi, gi in zip(z, grads)]

        return step

    return _run(spec, weights, activities, batch, cfg, clamp_output, make_step)


def heun_inference(
    spec: NetworkSpec,
    weights: Weights,
    activities: Activities,
    batch: Batch,
    cfg: InferenceConfig,
    clamp_output: bool = True,
) -> tuple[Activities, InferenceTrace]:
    """Fixed-step Heun integration of the gradient flow ``dz/dt = -dF/dz``."""

    def make_step(dt):
        def step(z, grads):
            pred = [zi - dt * gi for zi, gi in zip(z, grads)]
            _, slope = model.energy_and_activity_gradient(spec, weights, pred, batch, clamp_output, validate=False)
            return [zi - 0.5 * dt * (gi + gp) for zi, gi, gp in zip(z, grads, slope)]

        return step

    return _run(spec, weights, activities, batch, cfg, clamp_output, make_step)


def run_inference(
    spec: NetworkSpec,
    weights: Weights,
    activities: Activities,
    batch: Batch,
    cfg: InferenceConfig,
    clamp_output: bool = True,
) -> tuple[Activities, InferenceTrace]:
    solver = gd_inference if cfg.solver == "gd" else heun_inference
    return solver(spec, weights, activities, batch, cfg, clamp_output)


def forward_activities(spec: NetworkSpec, weights: Weights, batch: Batch) -> Activities:
    hidden, _ = model.forward(spec, weights, batch.x)
    return hidden


def analytic_dln_inference(spec: NetworkSpec, weights: Weights, batch: Batch) -> Activities:
    """Exact minimiser ``z* = H_z^{-1} b`` for linear networks (skips allowed).

    With a target mask each sample only sees its observed outputs, so the
    system is solved sample by sample.
    """
    from .theory import activity_system, layer_maps

    if not spec.is_linear:
        raise UnsupportedSpecError("closed-form inference requires a linear network")
    if spec.n_hidden == 0:
        return []
    hess, rhs = activity_system(spec, weights, batch)
    if batch.mask is None:
        sol = solve_linear(hess, rhs.T).T
    else:
        out_map = layer_maps(spec, weights)[-1]
        last = slice(hess.shape[0] - spec.widths[-2], hess.shape[0])
        sol = np.empty_like(rhs)
        for i, observed in enumerate(batch.mask):
            h_i = hess.copy()
            h_i[last, last] -= out_map.T @ ((1.0 - observed)[:, None] * out_map)
            b_i = rhs[i].copy()
            b_i[last] -= ((1.0 - observed) * batch.y[i]) @ out_map
            sol[i] = solve_linear(h_i, b_i)
    out, pos = [], 0
    for layer in range(1, spec.depth):
        width = spec.widths[layer]
        out.append(sol[:, pos : pos + width].copy())
        pos += width
    return out
