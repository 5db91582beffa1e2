"""Dense linear algebra kernels and small numerical utilities."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy import linalg as sla
from scipy.linalg import lapack

from .errors import EvaluationError, NumericalRankError, ShapeError

SYMMETRY_RTOL = 1e-10
MAX_CONDITION = 1e12


def _as_square(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {m.shape}")
    return m


def _check_symmetric(m: np.ndarray) -> None:
    scale = max(np.max(np.abs(m)), 1.0) if m.size else 1.0
    if m.size and np.max(np.abs(m - m.T)) > SYMMETRY_RTOL * scale:
        raise ShapeError("matrix is not symmetric")


def sym_eigvals(m: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of a symmetric matrix (LAPACK ``syevd``)."""
    m = _as_square(m)
    _check_symmetric(m)
    if not np.all(np.isfinite(m)):
        raise ShapeError("matrix has non-finite entries")
    return np.linalg.eigvalsh(0.5 * (m + m.T))


def jacobi_eigvals(m: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> np.ndarray:
    """Ascending eigenvalues by cyclic Jacobi rotations.

    Slower than :func:`sym_eigvals` but independent of LAPACK, so it serves as a
    cross-check. Stops once the off-diagonal Frobenius mass drops below
    ``tol`` times the Frobenius norm of the input.
    """
    a = _as_square(m).copy()
    _check_symmetric(a)
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    target = tol * max(np.linalg.norm(a), np.finfo(float).tiny)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                # entries this small cannot keep the off-diagonal mass above target
                if abs(apq) <= 0.1 * target / n:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                cp = a[:, p].copy()
                cq = a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
    return np.sort(np.diag(a))


def solve_linear(m: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``m x = b``; Cholesky when ``m`` is SPD, partial-pivot LU otherwise.

    ``b`` may be a vector or a matrix of right-hand sides (one per column).
    Raises :class:`NumericalRankError` when the 1-norm condition estimate
    exceeds 1e12.
    """
    m = _as_square(m)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != m.shape[0]:
        raise ShapeError(f"rhs has {b.shape[0]} rows, matrix has {m.shape[0]}")
    anorm = np.linalg.norm(m, 1)
    symmetric = np.allclose(m, m.T, rtol=0.0, atol=SYMMETRY_RTOL * max(anorm, 1.0))
    if symmetric:
        chol, info = lapack.dpotrf(m, lower=False)
        if info == 0:
            rcond, _ = lapack.dpocon(chol, anorm)
            _check_rcond(rcond)
            return sla.cho_solve((chol, False), b)
    lu, piv, info = lapack.dgetrf(m)
    if info > 0:
        raise NumericalRankError("matrix is exactly singular", condition=np.inf)
    rcond, _ = lapack.dgecon(lu, anorm)
    _check_rcond(rcond)
    return sla.lu_solve((lu, piv), b)


def _check_rcond(rcond: float) -> None:
    cond = np.inf if rcond == 0 else 1.0 / rcond
    if cond > MAX_CONDITION:
        raise NumericalRankError(f"matrix is near-singular (condition ~ {cond:.3e})", condition=cond)


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product; block ``(i, j)`` equals ``a[i, j] * b``."""
    return np.kron(np.atleast_2d(a), np.atleast_2d(b))


def numerical_hessian(
    f: Callable[[np.ndarray], float],
    point: Sequence[float],
    step: float | None = None,
) -> np.ndarray:
    """Central second differences of ``f`` at ``point``, symmetrised.

    The default step for coordinate ``i`` is ``1e-4 * max(1, |point_i|)``.
    """
    x0 = np.asarray(point, dtype=float).ravel().copy()
    n = x0.size
    if step is not None and step <= 0:
        raise ValueError("step must be positive")
    h = np.full(n, step) if step is not None else 1e-4 * np.maximum(1.0, np.abs(x0))

    def ev(x: np.ndarray) -> float:
        val = float(f(x))
        if not np.isfinite(val):
            raise EvaluationError(f"objective is not finite near the evaluation point ({val})")
        return val

    f0 = ev(x0)
    hess = np.empty((n, n))
    for i in range(n):
        e_i = np.zeros(n)
        e_i[i] = h[i]
        hess[i, i] = (ev(x0 + e_i) - 2.0 * f0 + ev(x0 - e_i)) / h[i] ** 2
        for j in range(i + 1, n):
            e_j = np.zeros(n)
            e_j[j] = h[j]
            val = (
                ev(x0 + e_i + e_j) - ev(x0 + e_i - e_j) - ev(x0 - e_i + e_j) + ev(x0 - e_i - e_j)
            ) / (4.0 * h[i] * h[j])
            hess[i, j] = hess[j, i] = val
    return 0.5 * (hess + hess.T)


def numerical_gradient(f: Callable[[np.ndarray], float], point: Sequence[float], step: float = 1e-6) -> np.ndarray:
    """Central first differences of ``f`` at ``point``."""
    x0 = np.asarray(point, dtype=float).ravel().copy()
    grad = np.empty_like(x0)
    for i in range(x0.size):
        h = step * max(1.0, abs(x0[i]))
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (f(xp) - f(xm)) / (2.0 * h)
    return grad


class Rng:
    """Seeded random stream on numpy's counter-based Philox generator.

    Philox output is specified bit-for-bit across platforms, so equal seeds
    yield identical draws everywhere.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(key=self.seed & 0xFFFFFFFFFFFFFFFF))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def normal(self, size=None, loc: float = 0.0, scale: float = 1.0):
        return self._gen.normal(loc, scale, size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low: int, high: int | None = None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def child(self, index: int) -> "Rng":
        """Independent stream for sub-task ``index`` (e.g. one grid cell)."""
        return Rng((self.seed * 1_000_003 + 7919 * (index + 1)) & 0x7FFFFFFFFFFFFFFF)
