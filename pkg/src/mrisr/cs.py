"""Measurement matrices and sparse-recovery solvers.

Two solvers are provided for the underdetermined recovery problem: a greedy
orthogonal matching pursuit (``omp_solve``) and an iterative shrinkage-
thresholding solver (``ista_solve``) for the l1-regularized least-squares
form.  Both are bit-deterministic for identical inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import DivergenceError, InfeasibleError, RankDeficiencyError
from .image import _freeze


@dataclass(frozen=True, eq=False)
class MeasurementMatrix:
    """Seeded Gaussian projection with i.i.d. N(0, 1/m) entries.

    The stream is documented so matrices reproduce across platforms:
    NumPy PCG64 seeded with ``seed``, one row-major ``standard_normal``
    draw of shape (m, n), scaled by 1/sqrt(m).
    """

    entries: np.ndarray
    seed: int

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        if e.ndim != 2:
            raise ValueError("measurement matrix must be 2-D")
        if e.shape[0] > e.shape[1]:
            raise ValueError(f"need m <= n, got shape {e.shape}")
        object.__setattr__(self, "entries", _freeze(e))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def n(self) -> int:
        return self.entries.shape[1]

    @property
    def sampling_rate(self) -> float:
        return self.m / self.n


def gaussian_matrix(m: int, n: int, seed: int) -> MeasurementMatrix:
    """Deterministic m x n Gaussian measurement matrix for a given seed."""
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    entries = rng.standard_normal((m, n)) / math.sqrt(m)
    return MeasurementMatrix(entries, seed)


@dataclass(frozen=True, eq=False)
class SparseCode:
    """Solver output: coefficients, their support, and residual diagnostics."""

    coefficients: np.ndarray
    support: tuple
    residual_norm: float
    iterations: int

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=np.float64)
        object.__setattr__(self, "coefficients", _freeze(c))
        object.__setattr__(self, "support", tuple(int(i) for i in self.support))
        object.__setattr__(self, "residual_norm", float(self.residual_norm))
        object.__setattr__(self, "iterations", int(self.iterations))


def _code_from(coeffs: np.ndarray, residual_norm: float, iterations: int) -> SparseCode:
    support = tuple(np.flatnonzero(coeffs))
    return SparseCode(coeffs, support, residual_norm, iterations)


def omp_solve(
    A: np.ndarray, y: np.ndarray, max_sparsity: int, residual_tol: float = 1e-12
) -> SparseCode:
    """Greedy orthogonal matching pursuit.

    Repeatedly selects the column most correlated with the residual and
    re-solves least squares on the grown support, stopping once the
    residual norm drops to ``residual_tol`` or the support reaches
    ``max_sparsity``.  After each step the residual is orthogonal to the
    selected columns (up to least-squares roundoff).
    """
    A = np.asarray(A, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    m, n = A.shape
    if y.shape[0] != m:
        raise ValueError(f"A is {A.shape} but y has length {y.shape[0]}")
    col_norms = np.linalg.norm(A, axis=0)
    if np.any(col_norms == 0):
        raise ValueError("A has zero columns")
    if not 1 <= max_sparsity <= m:
        raise ValueError(f"max_sparsity must be in [1, rows(A)], got {max_sparsity}")

    coeffs = np.zeros(n)
    residual = y.copy()
    rnorm = float(np.linalg.norm(residual))
    if rnorm <= residual_tol:
        return _code_from(coeffs, rnorm, 0)

    selected: list = []
    iterations = 0
    for _ in range(max_sparsity):
        corr = A.T @ residual
        j = int(np.argmax(np.abs(corr)))
        if abs(corr[j]) <= 1e-14 * max(1.0, rnorm) or j in selected:
            break
        selected.append(j)
        sub = A[:, selected]
        sol, _, rank, _ = np.linalg.lstsq(sub, y, rcond=None)
        if rank < len(selected):
            raise RankDeficiencyError(selected)
        residual = y - sub @ sol
        rnorm = float(np.linalg.norm(residual))
        iterations += 1
        if rnorm <= residual_tol:
            break

    if selected:
        coeffs[selected] = sol
    return _code_from(coeffs, rnorm, iterations)


def soft_threshold(x: np.ndarray, t: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def lipschitz_bound(A: np.ndarray, steps: int = 50) -> float:
    """Upper bound on the largest squared singular value of ``A``.

    50 deterministic power-iteration steps on A^T A, inflated by 1% to stay
    a valid step-size bound even when the iteration has not fully converged.
    """
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[1]
    v = np.ones(n) + 1e-3 * np.arange(n)  # deterministic, unlikely to be orthogonal
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(steps):
        w = A.T @ (A @ v)
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 1e-12
        est = nw  # Rayleigh quotient for unit v
        v = w / nw
    return est * 1.01


def gram_lipschitz(G: np.ndarray, steps: int = 50) -> float:
    """Upper bound on the largest eigenvalue of a PSD Gram matrix."""
    G = np.asarray(G, dtype=np.float64)
    n = G.shape[0]
    v = np.ones(n) + 1e-3 * np.arange(n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(steps):
        w = G @ v
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 1e-12
        est = nw
        v = w / nw
    return est * 1.01


def ista_solve(
    A: np.ndarray,
    y: np.ndarray,
    lam: float,
    max_iter: int = 1000,
    tol: float = 1e-8,
    x0: np.ndarray | None = None,
) -> SparseCode:
    """Iterative shrinkage-thresholding for min 0.5||y - A a||^2 + lam*||a||_1.

    Step size is 1/L with L bounded via :func:`lipschitz_bound`; the
    objective is checked to be non-increasing each step (a violation or any
    non-finite value raises :class:`DivergenceError`).  Convergence is
    declared when the max-abs coefficient change drops below ``tol``.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    A = np.asarray(A, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    n = A.shape[1]
    L = lipschitz_bound(A)
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=np.float64).copy()

    def objective(v):
        r = y - A @ v
        return 0.5 * float(r @ r) + lam * float(np.abs(v).sum())

    prev_obj = objective(x)
    iterations = 0
    for _ in range(max_iter):
        grad = A.T @ (A @ x - y)
        x_new = soft_threshold(x - grad / L, lam / L)
        if not np.all(np.isfinite(x_new)):
            raise DivergenceError("non-finite iterate; step size too large")
        obj = objective(x_new)
        if obj > prev_obj + 1e-10:
            raise DivergenceError(
                f"objective increased by {obj - prev_obj:.3e}; step size too large"
            )
        delta = float(np.max(np.abs(x_new - x))) if n else 0.0
        x = x_new
        prev_obj = obj
        iterations += 1
        if delta < tol:
            break

    rnorm = float(np.linalg.norm(y - A @ x))
    return _code_from(x, rnorm, iterations)


def ric_estimate(A: np.ndarray, s: int) -> float:
    """Exact restricted-isometry constant of order ``s`` by enumeration.

    Test utility only: scans singular values of every s-column submatrix,
    so the budget check rejects C(n, s) > 1e6.
    """
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[1]
    if not 1 <= s <= n:
        raise ValueError(f"need 1 <= s <= n, got s={s}")
    if math.comb(n, s) > 10**6:
        raise InfeasibleError(
            f"C({n}, {s}) = {math.comb(n, s)} submatrices exceed the brute-force budget"
        )
    gram = A.T @ A
    delta = 0.0
    for cols in combinations(range(n), s):
        sub = gram[np.ix_(cols, cols)]
        eigs = np.linalg.eigvalsh(sub)
        delta = max(delta, float(eigs[-1] - 1.0), float(1.0 - eigs[0]))
    return delta
