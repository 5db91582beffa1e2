"""Closed-form results for linear PCNs.

Covers the equilibrated energy and its rescaling matrix, weight Hessians at
the origin, zero-rank saddle checks, the block-tridiagonal activity Hessian,
conditioning diagnostics, the damped Newton baseline and the one-hidden-unit
network used in the cosine experiment.

Premultipliers and skips enter every formula through the effective layer maps
``M_l = a_l W_l + tau_l I``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import model
from .errors import DegenerateDataWarning, PCBenchError, ShapeError, UnsupportedSpecError
from .model import Batch, NetworkSpec, Weights
from .numerics import kron, numerical_hessian, solve_linear, sym_eigvals

EIG_TOL = 1e-8
GRAD_TOL = 1e-10
HESSIAN_VARIANTS = ("pc_fc", "pc_resnet", "ep")


class UndefinedRatioError(PCBenchError, ZeroDivisionError):
    """The loss/energy ratio is undefined because the energy is zero."""


class NotCriticalError(PCBenchError, ValueError):
    """The supplied point is not a critical point (or minimum) as required."""


def _require_linear(spec: NetworkSpec) -> None:
    if not spec.is_linear:
        raise UnsupportedSpecError("closed forms require a linear network")


def layer_maps(spec: NetworkSpec, weights: Weights, skips: Sequence[int] | None = None) -> list[np.ndarray]:
    """Effective linear maps ``a_l W_l + tau_l I`` for ``l = 1..L``."""
    model.check_weights(spec, weights)
    skips = spec.skips if skips is None else skips
    maps = []
    for layer, w in enumerate(weights, start=1):
        m = spec.premultipliers[layer - 1] * np.asarray(w, dtype=float)
        if skips[layer - 1]:
            m = m + np.eye(m.shape[0])
        maps.append(m)
    return maps


def _partial_products(maps: list[np.ndarray]) -> list[np.ndarray]:
    """``[M_{L:1}, M_{L:2}, ..., M_{L:L}]`` where ``M_{L:l} = M_L ... M_l``."""
    out = [None] * len(maps)
    acc = np.eye(maps[-1].shape[0])
    for idx in range(len(maps) - 1, -1, -1):
        acc = acc @ maps[idx]
        out[idx] = acc
    return out


def end_to_end_map(spec: NetworkSpec, weights: Weights) -> np.ndarray:
    _require_linear(spec)
    return _partial_products(layer_maps(spec, weights))[0]


def rescaling_S(spec: NetworkSpec, weights: Weights) -> np.ndarray:
    """``S = I + sum_{l=2}^{L} M_{L:l} M_{L:l}^T``."""
    _require_linear(spec)
    prods = _partial_products(layer_maps(spec, weights))
    s = np.eye(spec.widths[-1])
    for p in prods[1:]:
        s += p @ p.T
    return s


def _residuals(spec: NetworkSpec, weights: Weights, batch: Batch) -> np.ndarray:
    if batch.mask is not None:
        raise UnsupportedSpecError("closed forms do not support masked targets")
    return batch.y - batch.x @ end_to_end_map(spec, weights).T


def equilibrated_energy(spec: NetworkSpec, weights: Weights, batch: Batch) -> float:
    """Energy at the exact inference equilibrium: ``(1/2B) sum r_i^T S^{-1} r_i``."""
    r = _residuals(spec, weights, batch)
    s = rescaling_S(spec, weights)
    return 0.5 * float(np.sum(r * solve_linear(s, r.T).T)) / batch.size


def mse_from_weights(spec: NetworkSpec, weights: Weights, batch: Batch) -> float:
    r = _residuals(spec, weights, batch)
    return 0.5 * float(np.sum(r**2)) / batch.size


def loss_energy_ratio(spec: NetworkSpec, weights: Weights, batch: Batch) -> float:
    """``L(theta) / F*(theta)``; at least 1 because ``S >= I``."""
    f_star = equilibrated_energy(spec, weights, batch)
    if f_star == 0.0:
        raise UndefinedRatioError("equilibrated energy is zero (perfect fit)")
    return mse_from_weights(spec, weights, batch) / f_star


# --- weight Hessians at the origin -------------------------------------------------


def _require_plain_dln(spec: NetworkSpec) -> None:
    _require_linear(spec)
    if spec.has_skips:
        raise UnsupportedSpecError("origin Hessians are defined for networks without skips")


def _layer_offsets(spec: NetworkSpec) -> list[int]:
    offsets = [0]
    for layer in range(1, spec.depth + 1):
        offsets.append(offsets[-1] + spec.widths[layer] * spec.widths[layer - 1])
    return offsets


def _cross_block_first_two(spec: NetworkSpec, batch: Batch) -> np.ndarray:
    """Mixed block ``d^2 / dvec(W_1) dvec(W_2)`` of ``-(1/B) sum y^T a_2 W_2 a_1 W_1 x``."""
    n0, n1, n2 = spec.widths[0], spec.widths[1], spec.widths[2]
    sigma_xy = batch.x.T @ batch.y / batch.size  # (n0, n2)
    # kron(I, Sigma_xy) has rows (b, c) and columns (b', a); W_2 is vectorised as (a, b').
    block = kron(np.eye(n1), sigma_xy).reshape(n1 * n0, n1, n2).transpose(0, 2, 1).reshape(n1 * n0, n2 * n1)
    return -spec.premultipliers[0] * spec.premultipliers[1] * block


def loss_hessian_origin(batch: Batch, spec: NetworkSpec) -> np.ndarray:
    """Hessian of the MSE loss at ``theta = 0`` over all row-major weight entries."""
    _require_plain_dln(spec)
    offsets = _layer_offsets(spec)
    hess = np.zeros((offsets[-1], offsets[-1]))
    if spec.depth == 2:
        block = _cross_block_first_two(spec, batch)
        hess[offsets[0] : offsets[1], offsets[1] : offsets[2]] = block
        hess[offsets[1] : offsets[2], offsets[0] : offsets[1]] = block.T
    return hess


def energy_hessian_origin(batch: Batch, spec: NetworkSpec) -> np.ndarray:
    """Hessian of the equilibrated energy at ``theta = 0``.

    Equals the loss Hessian plus the last diagonal block ``-Sigma_yy kron I``.
    """
    if not np.any(batch.y):
        warnings.warn("all-zero targets: the origin is not a strict saddle", DegenerateDataWarning, stacklevel=2)
    hess = loss_hessian_origin(batch, spec)
    offsets = _layer_offsets(spec)
    sigma_yy = batch.y.T @ batch.y / batch.size
    last = -(spec.premultipliers[-1] ** 2) * kron(sigma_yy, np.eye(spec.widths[-2]))
    hess[offsets[-2] :, offsets[-2] :] += last
    return hess


# --- saddle analysis ----------------------------------------------------------------


@dataclass(frozen=True)
class SaddleReport:
    location: str
    grad_norm: float
    lambda_min: float
    lambda_max: float
    quadratic_coefficient: float
    verdict: str  # "strict", "non-strict" or "not-critical"


def equilibrated_energy_gradient(spec: NetworkSpec, weights: Weights, batch: Batch) -> Weights:
    """Gradient of ``F*`` via the weight gradient at the exact equilibrium."""
    from .inference import analytic_dln_inference

    z_star = analytic_dln_inference(spec, weights, batch)
    return model.weight_gradient(spec, weights, z_star, batch)


def zero_rank_direction(spec: NetworkSpec) -> Weights:
    """Rectangular identity on the output weights, zero elsewhere."""
    out = [np.zeros((spec.widths[l], spec.widths[l - 1])) for l in range(1, spec.depth + 1)]
    out[-1] = np.eye(spec.widths[-1], spec.widths[-2])
    return out


def zero_rank_coefficient(spec: NetworkSpec, weights: Weights, batch: Batch) -> float:
    """Predicted ``d^2 F* / d delta^2 / 2`` along :func:`zero_rank_direction`.

    Equals ``-(a_L^2 / 2B) sum_i y_i^T E A E^T y_i`` with ``E`` the rectangular
    identity and ``A = I + sum_{l=2}^{L-1} M_{L-1:l} M_{L-1:l}^T``.
    """
    _require_linear(spec)
    maps = layer_maps(spec, weights)[:-1]
    a_mat = np.eye(spec.widths[-2])
    if len(maps) > 1:
        for p in _partial_products(maps)[1:]:
            a_mat += p @ p.T
    e = np.eye(spec.widths[-1], spec.widths[-2])
    proj = batch.y @ e
    return -(spec.premultipliers[-1] ** 2) * 0.5 * float(np.sum(proj * (proj @ a_mat))) / batch.size


def zero_rank_saddle_check(
    spec: NetworkSpec,
    weights: Weights,
    batch: Batch,
    direction: Weights | None = None,
    deltas: Sequence[float] = (1e-2, -1e-2, 1e-3, -1e-3),
    hessian_max_params: int = 60,
    location: str = "zero-rank",
) -> SaddleReport:
    """Probe ``F*`` along ``theta + delta * direction`` and classify the point.

    The quadratic coefficient comes from a least-squares fit of
    ``F*(theta + delta d) - F*(theta) = c1 delta + c2 delta^2``. Extreme Hessian
    eigenvalues are filled from finite differences for small networks and are
    NaN otherwise.
    """
    _require_plain_dln(spec)
    direction = zero_rank_direction(spec) if direction is None else direction
    grad = equilibrated_energy_gradient(spec, weights, batch)
    grad_norm = float(np.linalg.norm(model.flatten(grad)))

    theta0 = model.flatten(weights)
    step = model.flatten(direction)

    def f(theta):
        return equilibrated_energy(spec, model.unflatten(spec, theta), batch)

    f0 = f(theta0)
    d = np.asarray(deltas, dtype=float)
    rise = np.array([f(theta0 + delta * step) - f0 for delta in d])
    design = np.stack([d, d**2], axis=1)
    (_, c2), *_ = np.linalg.lstsq(design, rise, rcond=None)

    lam_min = lam_max = float("nan")
    if theta0.size <= hessian_max_params:
        eig = sym_eigvals(numerical_hessian(f, theta0))
        lam_min, lam_max = float(eig[0]), float(eig[-1])

    norm2 = float(step @ step)
    curvature = 2.0 * c2 / norm2 if norm2 > 0 else 0.0
    if grad_norm > GRAD_TOL:
        verdict = "not-critical"
    elif curvature < -EIG_TOL or (np.isfinite(lam_min) and lam_min < -EIG_TOL):
        verdict = "strict"
    else:
        verdict = "non-strict"
    return SaddleReport(location, grad_norm, lam_min, lam_max, float(c2), verdict)


def origin_saddle_report(spec: NetworkSpec, batch: Batch) -> SaddleReport:
    """Classify the origin of the equilibrated energy from its analytic Hessian."""
    eig = sym_eigvals(energy_hessian_origin(batch, spec))
    lam_min, lam_max = float(eig[0]), float(eig[-1])
    verdict = "strict" if lam_min < -EIG_TOL else "non-strict"
    return SaddleReport("origin", 0.0, lam_min, lam_max, float("nan"), verdict)


# --- activity Hessian ---------------------------------------------------------------


def _variant_skips(spec: NetworkSpec, variant: str) -> tuple[int, ...]:
    if variant == "pc_fc":
        return (0,) * spec.depth
    if variant == "pc_resnet":
        return spec.skips if spec.has_skips else model.resnet_skips(spec.widths)
    return spec.skips


def activity_system(
    spec: NetworkSpec,
    weights: Weights,
    batch: Batch | None = None,
    variant: str | None = None,
    nudge: float = 0.0,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Activity Hessian ``H_z`` and the per-sample constant ``b`` (rows) with ``grad = H_z z - b``.

    ``variant=None`` uses the spec's own skips. ``"ep"`` builds the
    equilibrium-propagation Hessian over ``z_1..z_L`` with nudging strength ``nudge``.
    """
    _require_linear(spec)
    variant = variant or ("pc_resnet" if spec.has_skips else "pc_fc")
    if variant not in HESSIAN_VARIANTS:
        raise ValueError(f"unknown Hessian variant '{variant}', expected one of {HESSIAN_VARIANTS}")
    if variant == "ep":
        return _ep_system(spec, weights, batch, nudge)
    maps = layer_maps(spec, weights, _variant_skips(spec, variant))
    sizes = spec.widths[1:-1]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    hess = np.zeros((offsets[-1], offsets[-1]))
    for idx in range(len(sizes)):
        sl = slice(offsets[idx], offsets[idx + 1])
        nxt = maps[idx + 1]
        hess[sl, sl] = np.eye(sizes[idx]) + nxt.T @ nxt + spec.activity_decay * np.eye(sizes[idx])
        if idx > 0:
            prev = slice(offsets[idx - 1], offsets[idx])
            hess[sl, prev] = -maps[idx]
            hess[prev, sl] = -maps[idx].T
    rhs = None
    if batch is not None and sizes:
        rhs = np.zeros((batch.size, offsets[-1]))
        rhs[:, offsets[0] : offsets[1]] += batch.x @ maps[0].T
        rhs[:, offsets[-2] : offsets[-1]] += batch.y @ maps[-1]
    return hess, rhs


def _ep_system(spec, weights, batch, nudge):
    maps = layer_maps(spec, weights, (0,) * spec.depth)
    sizes = spec.widths[1:]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    hess = np.zeros((offsets[-1], offsets[-1]))
    for idx, size in enumerate(sizes):
        sl = slice(offsets[idx], offsets[idx + 1])
        hess[sl, sl] = np.eye(size) * (1.0 + (nudge if idx == len(sizes) - 1 else 0.0))
        if idx > 0:
            prev = slice(offsets[idx - 1], offsets[idx])
            hess[sl, prev] = -maps[idx]
            hess[prev, sl] = -maps[idx].T
    rhs = None
    if batch is not None:
        rhs = np.zeros((batch.size, offsets[-1]))
        rhs[:, : offsets[1]] += batch.x @ maps[0].T
        rhs[:, offsets[-2] :] += nudge * batch.y
    return hess, rhs


def assemble_activity_hessian(
    spec: NetworkSpec, weights: Weights, variant: str | None = None, nudge: float = 0.0
) -> np.ndarray:
    """Dense symmetric activity Hessian (see :func:`activity_system`)."""
    return activity_system(spec, weights, None, variant, nudge)[0]


class Conditioning(NamedTuple):
    kappa: float
    lambda_min: float
    lambda_max: float
    positive_definite: bool


def condition_number(h: np.ndarray) -> Conditioning:
    """``|lambda_max| / |lambda_min|`` of a symmetric matrix, with a PD flag."""
    eig = sym_eigvals(h)
    lo, hi = float(eig[0]), float(eig[-1])
    kappa = abs(hi) / abs(lo) if lo != 0 else float("inf")
    return Conditioning(kappa, lo, hi, lo > 0)


def spectrum_extremes_diag_block(spec: NetworkSpec, weights: Weights) -> tuple[float, float]:
    """Extreme eigenvalues of ``D = blockdiag(I + a_{l+1}^2 W_{l+1}^T W_{l+1})``."""
    model.check_weights(spec, weights)
    if spec.n_hidden == 0:
        raise ShapeError("network has no hidden layers")
    lo, hi = np.inf, -np.inf
    for layer in range(2, spec.depth + 1):
        m = spec.premultipliers[layer - 1] * np.asarray(weights[layer - 1])
        eig = sym_eigvals(np.eye(m.shape[1]) + m.T @ m)
        lo, hi = min(lo, eig[0]), max(hi, eig[-1])
    return float(lo), float(hi)


def trn_update(grad: np.ndarray, hess: np.ndarray, alpha: float) -> np.ndarray:
    """Damped Newton step ``-(H + I/alpha)^{-1} g``."""
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    hess = np.asarray(hess, dtype=float)
    return -solve_linear(hess + np.eye(hess.shape[0]) / alpha, np.asarray(grad, dtype=float))


# --- linear chains ------------------------------------------------------------------


def chain_rescaling(weights: Sequence[float]) -> float:
    """``s = 1 + sum_{l=2}^{L} (w_L ... w_l)^2`` for a unit-width chain."""
    w = [float(v) for v in weights]
    s, acc = 1.0, 1.0
    for value in reversed(w[1:]):
        acc *= value
        s += acc**2
    return s


def chain_minimum_flatness(
    spec: NetworkSpec, weights: Weights, batch: Batch, fit_tol: float = 1e-8
) -> tuple[np.ndarray, np.ndarray, float]:
    """Finite-difference Hessians of ``F*`` and the loss at a perfect-fit chain, plus ``s``.

    At such minima ``H_F* = H_L / s``.
    """
    _require_plain_dln(spec)
    if any(w != 1 for w in spec.widths):
        raise UnsupportedSpecError("flatness check is defined for unit-width chains")
    if not np.allclose(spec.premultipliers, 1.0):
        raise UnsupportedSpecError("flatness check assumes unit premultipliers")
    if np.max(np.abs(_residuals(spec, weights, batch))) > fit_tol:
        raise NotCriticalError("weights do not fit the data exactly")
    theta = model.flatten(weights)

    def f_star(t):
        return equilibrated_energy(spec, model.unflatten(spec, t), batch)

    def loss(t):
        return mse_from_weights(spec, model.unflatten(spec, t), batch)

    s = chain_rescaling(theta)
    return numerical_hessian(f_star, theta), numerical_hessian(loss, theta), s


# --- one-hidden-unit network --------------------------------------------------------


def single_unit_equilibrium(w1: float, w2: float, x: float, y: float) -> tuple[float, float]:
    """Equilibrium activity and energy of the scalar network ``x -> z -> y``.

    ``z* = (w1 x + w2 y) / (1 + w2^2)`` and ``F* = (y - w2 w1 x)^2 / (2 (1 + w2^2))``.
    """
    z = (w1 * x + w2 * y) / (1.0 + w2**2)
    return z, 0.5 * (y - w2 * w1 * x) ** 2 / (1.0 + w2**2)


def nearest_solution_single_unit(w1: float, w2: float, slope: float, tol: float = 1e-12) -> tuple[float, float]:
    """Closest point to ``(w1, w2)`` on the solution set ``u * v = slope``.

    Stationary points of the squared distance solve
    ``u^4 - w1 u^3 + slope w2 u - slope^2 = 0``; real roots are polished by
    Newton steps and the nearest candidate is returned.
    """
    if slope == 0:
        raise ValueError("slope must be nonzero")
    coeffs = np.array([1.0, -w1, 0.0, slope * w2, -(slope**2)])
    deriv = np.polyder(coeffs)
    candidates = []
    for root in np.roots(coeffs):
        if abs(root.imag) > 1e-6 * max(1.0, abs(root)):
            continue
        u = root.real
        for _ in range(50):
            du = np.polyval(coeffs, u) / np.polyval(deriv, u) if np.polyval(deriv, u) != 0 else 0.0
            u -= du
            if abs(du) < tol:
                break
        if u != 0:
            candidates.append(u)
    if not candidates:
        raise ArithmeticError("no real stationary point found")
    best = min(candidates, key=lambda u: (u - w1) ** 2 + (slope / u - w2) ** 2)
    return float(best), float(slope / best)


def single_unit_loss_hessian(w1: float, w2: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Hessian of ``(1/2B) sum (y - w2 w1 x)^2`` with respect to ``(w1, w2)``."""
    x = np.ravel(np.asarray(x, dtype=float))
    y = np.ravel(np.asarray(y, dtype=float))
    sxx = float(np.mean(x * x))
    sxy = float(np.mean(x * y))
    cross = 2.0 * w1 * w2 * sxx - sxy
    return np.array([[w2 * w2 * sxx, cross], [cross, w1 * w1 * sxx]])
