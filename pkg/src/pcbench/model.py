"""Network specifications, initialisation, the PC energy and its local gradients.

Layer ``l`` (1-based, ``l = 1..L``) predicts ``z_l`` from the previous state as
``a_l W_l phi_l(z_{l-1}) + tau_l z_{l-1}`` where ``phi_1`` is the identity (the
input is not passed through the nonlinearity). ``z_0 = x`` and ``z_L = y`` are
clamped; ``z_1..z_H`` with ``H = L - 1`` are free.

Arrays are batched row-wise: activities have shape ``(B, N_l)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .config import KeyValueConfig
from .errors import OverflowInLayerError, ShapeError
from .numerics import Rng

ACTIVATIONS = ("linear", "tanh", "relu")
PARAMETERISATIONS = ("SP", "muPC", "orthogonal")

Weights = list  # list of np.ndarray, W_l with shape (N_l, N_{l-1})
Activities = list  # list of np.ndarray, z_l with shape (B, N_l)


def mupc_premultipliers(widths: Sequence[int]) -> tuple[float, ...]:
    """Layer scalings of the muPC parameterisation.

    Input layer ``N_0^{-1/2}``, hidden layers ``(N_{l-1} L)^{-1/2}``, output ``1/N_{L-1}``.
    """
    depth = len(widths) - 1
    out = []
    for layer in range(1, depth + 1):
        fan_in = widths[layer - 1]
        if layer == 1:
            out.append(fan_in**-0.5)
        elif layer == depth:
            out.append(1.0 / fan_in)
        else:
            out.append((fan_in * depth) ** -0.5)
    return tuple(out)


def resnet_skips(widths: Sequence[int]) -> tuple[int, ...]:
    """Identity skips on every hidden-to-hidden layer whose widths match."""
    depth = len(widths) - 1
    return tuple(
        int(1 < layer < depth and widths[layer] == widths[layer - 1]) for layer in range(1, depth + 1)
    )


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture plus parameterisation of a fully connected PCN.

    ``init_scale`` switches on origin initialisation: every entry is drawn from
    ``N(0, init_scale**2)`` regardless of the parameterisation.
    """

    widths: tuple[int, ...]
    activation: str = "linear"
    parameterisation: str = "SP"
    skips: tuple[int, ...] | None = None
    premultipliers: tuple[float, ...] | None = None
    init_std: tuple[float, ...] | None = None
    activity_decay: float = 0.0
    init_scale: float | None = None
    kaiming_uniform: bool = False

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 2:
            raise ShapeError("a network needs at least an input and an output width")
        if any(w < 1 for w in widths):
            raise ShapeError(f"all widths must be >= 1, got {widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{self.activation}', expected one of {ACTIVATIONS}")
        if self.parameterisation not in PARAMETERISATIONS:
            raise ValueError(
                f"unknown parameterisation '{self.parameterisation}', expected one of {PARAMETERISATIONS}"
            )
        if self.activity_decay < 0:
            raise ValueError("activity_decay must be >= 0")
        depth = len(widths) - 1

        skips = tuple(int(s) for s in self.skips) if self.skips is not None else (0,) * depth
        if len(skips) != depth or any(s not in (0, 1) for s in skips):
            raise ShapeError(f"skips must be {depth} flags in {{0, 1}}")
        for layer, tau in enumerate(skips, start=1):
            if tau and widths[layer] != widths[layer - 1]:
                raise ShapeError(f"skip at layer {layer} needs equal widths, got {widths[layer - 1]} -> {widths[layer]}")
        object.__setattr__(self, "skips", skips)

        expected_a = mupc_premultipliers(widths) if self.parameterisation == "muPC" else (1.0,) * depth
        if self.premultipliers is None:
            object.__setattr__(self, "premultipliers", expected_a)
        else:
            a = tuple(float(v) for v in self.premultipliers)
            if len(a) != depth:
                raise ShapeError(f"premultipliers must have {depth} entries")
            if self.parameterisation == "muPC" and not np.allclose(a, expected_a, rtol=1e-12, atol=0):
                raise ValueError("muPC premultipliers must follow the muPC scaling table")
            object.__setattr__(self, "premultipliers", a)

        if self.parameterisation == "muPC":
            expected_std = (1.0,) * depth
        else:
            expected_std = tuple(widths[layer - 1] ** -0.5 for layer in range(1, depth + 1))
        if self.init_std is None:
            object.__setattr__(self, "init_std", expected_std)
        else:
            std = tuple(float(v) for v in self.init_std)
            if len(std) != depth:
                raise ShapeError(f"init_std must have {depth} entries")
            object.__setattr__(self, "init_std", std)

    @classmethod
    def create(
        cls,
        widths: Sequence[int],
        activation: str = "linear",
        parameterisation: str = "SP",
        resnet: bool = False,
        **kwargs,
    ) -> "NetworkSpec":
        """Build a spec, optionally with the standard residual skip pattern."""
        skips = resnet_skips(widths) if resnet else None
        return cls(tuple(widths), activation, parameterisation, skips=skips, **kwargs)

    @property
    def depth(self) -> int:
        """Number of weight layers ``L``."""
        return len(self.widths) - 1

    @property
    def n_hidden(self) -> int:
        return self.depth - 1

    @property
    def is_linear(self) -> bool:
        return self.activation == "linear"

    @property
    def has_skips(self) -> bool:
        return any(self.skips)

    def with_(self, **changes) -> "NetworkSpec":
        return replace(self, **changes)

    def to_config(self) -> KeyValueConfig:
        cfg = KeyValueConfig()
        cfg.set("widths", self.widths)
        cfg.set("activation", self.activation)
        cfg.set("parameterisation", self.parameterisation)
        cfg.set("skips", self.skips)
        cfg.set("premultipliers", [repr(a) for a in self.premultipliers])
        cfg.set("init_std", [repr(s) for s in self.init_std])
        cfg.set("activity_decay", repr(self.activity_decay))
        cfg.set("init_scale", "none" if self.init_scale is None else repr(self.init_scale))
        cfg.set("kaiming_uniform", self.kaiming_uniform)
        return cfg

    @classmethod
    def from_config(cls, cfg: KeyValueConfig) -> "NetworkSpec":
        widths = cfg.get_list("widths", int)
        parameterisation = cfg.get_str("parameterisation", "SP")
        if "skips" in cfg:
            skips = tuple(cfg.get_list("skips", int))
        else:
            skips = resnet_skips(widths) if cfg.get_bool("resnet", False) else None
        premult = tuple(cfg.get_list("premultipliers", float)) if "premultipliers" in cfg else None
        init_std = tuple(cfg.get_list("init_std", float)) if "init_std" in cfg else None
        return cls(
            tuple(widths),
            activation=cfg.get_str("activation", "linear"),
            parameterisation=parameterisation,
            skips=skips,
            premultipliers=premult,
            init_std=init_std,
            activity_decay=cfg.get_float("activity_decay", 0.0),
            init_scale=cfg.get_optional_float("init_scale"),
            kaiming_uniform=cfg.get_bool("kaiming_uniform", False),
        )


@dataclass
class Batch:
    """Input/target pair with an optional 0/1 mask over target entries.

    Reductions divide by ``effective_size``: the sample count, or with a mask
    the number of observed target entries divided by the output width.
    """

    x: np.ndarray
    y: np.ndarray
    mask: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if self.x.shape[0] != self.y.shape[0] or self.x.shape[0] < 1:
            raise ShapeError(f"x has {self.x.shape[0]} rows but y has {self.y.shape[0]}")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=float)
            if self.mask.shape != self.y.shape:
                raise ShapeError("mask must match the target shape")

    @property
    def size(self) -> int:
        return self.x.shape[0]

    @property
    def effective_size(self) -> float:
        if self.mask is None:
            return float(self.size)
        return float(self.mask.sum()) / self.y.shape[1]


def _phi(name: str, z: np.ndarray) -> np.ndarray:
    if name == "linear":
        return z
    if name == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _dphi(name: str, z: np.ndarray) -> np.ndarray:
    if name == "linear":
        return np.ones_like(z)
    if name == "tanh":
        return 1.0 - np.tanh(z) ** 2
    return (z > 0).astype(float)


def layer_input(spec: NetworkSpec, layer: int, prev: np.ndarray) -> np.ndarray:
    """``phi_l(z_{l-1})``; the first layer sees the raw input."""
    return prev if layer == 1 else _phi(spec.activation, prev)


def _orthogonal(rows: int, cols: int, rng: Rng) -> np.ndarray:
    tall = rows >= cols
    g = rng.normal(size=(rows, cols) if tall else (cols, rows))
    q, r = np.linalg.qr(g)
    q = q * np.where(np.diag(r) < 0, -1.0, 1.0)
    return q if tall else q.T


def init_weights(spec: NetworkSpec, rng: Rng) -> Weights:
    """Draw weights according to the spec's parameterisation."""
    weights = []
    for layer in range(1, spec.depth + 1):
        rows, cols = spec.widths[layer], spec.widths[layer - 1]
        if spec.init_scale is not None:
            w = spec.init_scale * rng.normal(size=(rows, cols))
        elif spec.parameterisation == "orthogonal":
            w = _orthogonal(rows, cols, rng)
        elif spec.kaiming_uniform:
            bound = cols**-0.5
            w = rng.uniform(-bound, bound, size=(rows, cols))
        else:
            w = spec.init_std[layer - 1] * rng.normal(size=(rows, cols))
        weights.append(w)
    return weights


def check_weights(spec: NetworkSpec, weights: Weights) -> None:
    if len(weights) != spec.depth:
        raise ShapeError(f"expected {spec.depth} weight matrices, got {len(weights)}")
    for layer, w in enumerate(weights, start=1):
        expected = (spec.widths[layer], spec.widths[layer - 1])
        if np.shape(w) != expected:
            raise ShapeError(f"W_{layer} has shape {np.shape(w)}, expected {expected}")


def _check_activities(spec: NetworkSpec, activities: Activities, batch_size: int, n_free: int) -> None:
    if len(activities) != n_free:
        raise ShapeError(f"expected {n_free} activity arrays, got {len(activities)}")
    for layer, z in enumerate(activities, start=1):
        if z.shape != (batch_size, spec.widths[layer]):
            raise ShapeError(f"z_{layer} has shape {z.shape}, expected {(batch_size, spec.widths[layer])}")


def forward(spec: NetworkSpec, weights: Weights, x: np.ndarray) -> tuple[Activities, np.ndarray]:
    """Feedforward pass; returns hidden activities ``z_1..z_H`` and the prediction."""
    check_weights(spec, weights)
    z = np.atleast_2d(np.asarray(x, dtype=float))
    if z.shape[1] != spec.widths[0]:
        raise ShapeError(f"input width {z.shape[1]} != {spec.widths[0]}")
    states = []
    with np.errstate(over="ignore", invalid="ignore"):
        for layer in range(1, spec.depth + 1):
            a = spec.premultipliers[layer - 1]
            nxt = a * layer_input(spec, layer, z) @ weights[layer - 1].T
            if spec.skips[layer - 1]:
                nxt = nxt + z
            if not np.all(np.isfinite(nxt)):
                raise OverflowInLayerError(layer)
            states.append(nxt)
            z = nxt
    return states[:-1], states[-1]


def prediction_errors(
    spec: NetworkSpec, weights: Weights, activities: Activities, batch: Batch, clamp_output: bool = True
) -> list[np.ndarray]:
    """Per-layer errors ``eps_l = z_l - a_l W_l phi_l(z_{l-1}) - tau_l z_{l-1}``.

    With ``clamp_output=False`` the last entry of ``activities`` is the free output.
    """
    check_weights(spec, weights)
    n_free = spec.n_hidden if clamp_output else spec.depth
    _check_activities(spec, activities, batch.size, n_free)
    return _errors(spec, weights, activities, batch, clamp_output)


def _errors(spec, weights, activities, batch, clamp_output):
    states = [batch.x, *activities] + ([batch.y] if clamp_output else [])
    errors = []
    for layer in range(1, spec.depth + 1):
        prev, cur = states[layer - 1], states[layer]
        pred = spec.premultipliers[layer - 1] * layer_input(spec, layer, prev) @ weights[layer - 1].T
        if spec.skips[layer - 1]:
            pred = pred + prev
        errors.append(cur - pred)
    if clamp_output and batch.mask is not None:
        errors[-1] = errors[-1] * batch.mask
    return errors


def _energy_terms(spec, errors, activities, batch) -> list[float]:
    denom = batch.effective_size
    per_layer = [0.5 * float(np.sum(e**2)) / denom for e in errors]
    if spec.activity_decay:
        for layer, z in enumerate(activities[: spec.n_hidden], start=1):
            per_layer[layer - 1] += 0.5 * spec.activity_decay * float(np.sum(z**2)) / denom
    return per_layer


def _activity_grads(spec, weights, errors, activities) -> Activities:
    grads = []
    for layer, z in enumerate(activities, start=1):
        g = errors[layer - 1].copy()
        if layer < spec.depth:
            nxt = errors[layer]
            back = spec.premultipliers[layer] * nxt @ weights[layer]
            g -= _dphi(spec.activation, z) * back
            if spec.skips[layer]:
                g -= nxt
            if spec.activity_decay:
                g += spec.activity_decay * z
        grads.append(g)
    return grads


def energy(
    spec: NetworkSpec, weights: Weights, activities: Activities, batch: Batch, clamp_output: bool = True
) -> tuple[float, list[float]]:
    """Batch-mean energy and its per-layer breakdown (which sums to the total).

    Activity decay ``alpha/2 ||z_l||^2`` is added to the term of hidden layer ``l``.
    """
    errors = prediction_errors(spec, weights, activities, batch, clamp_output)
    per_layer = _energy_terms(spec, errors, activities, batch)
    return float(sum(per_layer)), per_layer


def activity_gradient(
    spec: NetworkSpec, weights: Weights, activities: Activities, batch: Batch, clamp_output: bool = True
) -> Activities:
    """Per-sample gradient of the energy with respect to each free activity.

    This is the gradient of the batch-summed energy, so each row only depends on
    its own sample and inference step sizes do not depend on the batch size.
    """
    errors = prediction_errors(spec, weights, activities, batch, clamp_output)
    return _activity_grads(spec, weights, errors, activities)


def energy_and_activity_gradient(
    spec: NetworkSpec,
    weights: Weights,
    activities: Activities,
    batch: Batch,
    clamp_output: bool = True,
    validate: bool = True,
) -> tuple[float, Activities]:
    """Energy and activity gradient from a single pass over the errors.

    ``validate=False`` skips shape checks for callers that already ran them.
    """
    if validate:
        errors = prediction_errors(spec, weights, activities, batch, clamp_output)
    else:
        errors = _errors(spec, weights, activities, batch, clamp_output)
    total = float(sum(_energy_terms(spec, errors, activities, batch)))
    return total, _activity_grads(spec, weights, errors, activities)


def weight_gradient(
    spec: NetworkSpec, weights: Weights, activities: Activities, batch: Batch, clamp_output: bool = True
) -> Weights:
    """``dF/dW_l = -(a_l / B) sum_i eps_{l,i} phi_l(z_{l-1,i})^T`` at fixed activities."""
    errors = prediction_errors(spec, weights, activities, batch, clamp_output)
    states = [batch.x, *activities]
    denom = batch.effective_size
    return [
        -(spec.premultipliers[layer - 1] / denom) * errors[layer - 1].T @ layer_input(spec, layer, states[layer - 1])
        for layer in range(1, spec.depth + 1)
    ]


def mse_loss(spec: NetworkSpec, weights: Weights, batch: Batch) -> float:
    _, pred = forward(spec, weights, batch.x)
    r = batch.y - pred
    if batch.mask is not None:
        r = r * batch.mask
    return 0.5 * float(np.sum(r**2)) / batch.effective_size


def mse_loss_and_bp_gradient(spec: NetworkSpec, weights: Weights, batch: Batch) -> tuple[float, Weights]:
    """MSE loss ``(1/2B) sum ||y - f(x)||^2`` and its gradient by reverse-mode differentiation."""
    hidden, pred = forward(spec, weights, batch.x)
    states = [batch.x, *hidden]
    r = batch.y - pred
    if batch.mask is not None:
        r = r * batch.mask
    denom = batch.effective_size
    loss = 0.5 * float(np.sum(r**2)) / denom
    delta = -r / denom  # dL/d(output) per sample
    grads: list[np.ndarray] = [None] * spec.depth
    with np.errstate(over="ignore", invalid="ignore"):
        for layer in range(spec.depth, 0, -1):
            a = spec.premultipliers[layer - 1]
            prev = states[layer - 1]
            inp = layer_input(spec, layer, prev)
            grads[layer - 1] = a * delta.T @ inp
            if layer > 1:
                back = a * delta @ weights[layer - 1]
                back = back * _dphi(spec.activation, prev)
                if spec.skips[layer - 1]:
                    back = back + delta
                delta = back
    for layer, g in enumerate(grads, start=1):
        if not np.all(np.isfinite(g)):
            raise OverflowInLayerError(layer)
    return loss, grads


def flatten(weights: Weights) -> np.ndarray:
    """Concatenate row-major ``vec(W_l)`` for ``l = 1..L``."""
    return np.concatenate([np.ravel(w) for w in weights])


def unflatten(spec: NetworkSpec, theta: np.ndarray) -> Weights:
    out, pos = [], 0
    for layer in range(1, spec.depth + 1):
        shape = (spec.widths[layer], spec.widths[layer - 1])
        size = shape[0] * shape[1]
        out.append(np.asarray(theta[pos : pos + size], dtype=float).reshape(shape))
        pos += size
    if pos != np.size(theta):
        raise ShapeError(f"parameter vector has {np.size(theta)} entries, expected {pos}")
    return out


def n_params(spec: NetworkSpec) -> int:
    return sum(spec.widths[l] * spec.widths[l - 1] for l in range(1, spec.depth + 1))
