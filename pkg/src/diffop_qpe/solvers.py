"""
Reference eigensolvers for discretized operators.

``eig_dense`` is the brute-force oracle.  ``eig_lowest_krylov`` is a
shift-invert Lanczos iteration with full reorthogonalization and a sparse LU
factorization of (L - mu I); it carries an operation counter used as the
classical baseline cost.  ``prolong_state`` interpolates a coarse eigenvector
onto a finer grid by Fourier zero-padding.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .operators import DiscretizedOperator, OperatorError, is_power_of_two

__all__ = [
    "SolverError",
    "ConvergenceError",
    "SingularShiftError",
    "EigenPair",
    "InitialGuess",
    "eig_dense",
    "eig_lowest_krylov",
    "rayleigh_quotient",
    "prolong_state",
    "overlap",
]

DENSE_MAX_SIDE = 4096
RESIDUAL_TOL = 1e-10
MAX_ITER = 500
NORM_TOL = 1e-10


class SolverError(RuntimeError):
    pass


class ConvergenceError(SolverError):
    pass


class SingularShiftError(SolverError):
    pass


@dataclass(frozen=True)
class EigenPair:
    """Eigenvalue, unit eigenvector and bookkeeping from a solve.

    ``index_f`` is the 0-based position in the ascending spectrum (or -1 if
    the solver does not know it).  ``op_count`` is the number of scalar
    multiply-adds charged by the Krylov solver.
    """

    value: float
    vector: np.ndarray = field(repr=False)
    index_f: int = -1
    residual: float = 0.0
    iterations: int = 0
    op_count: int = 0
    shift_used: float | None = None


@dataclass(frozen=True)
class InitialGuess:
    coarse_N0: int
    fine_vector: np.ndarray = field(repr=False)
    predicted_overlap: float
    dimension_D: int = 1

    def __post_init__(self):
        v = np.asarray(self.fine_vector)
        if abs(np.linalg.norm(v) - 1.0) > 1e-12:
            raise SolverError("initial guess must have unit norm")


def _residual(mat, lam, v) -> float:
    return float(np.linalg.norm(mat @ v - lam * v))


def eig_dense(op: DiscretizedOperator) -> list[EigenPair]:
    """Full ascending eigendecomposition.

    For masked operators only the retained block is diagonalized and the
    vectors are embedded back into the full grid with zeros on deleted
    points, so the deleted null modes are skipped.
    """
    if op.side > DENSE_MAX_SIDE:
        raise SolverError(f"dense solve limited to side <= {DENSE_MAX_SIDE}, got {op.side}")
    keep = np.flatnonzero(op.retained)
    block = op.retained_matrix().toarray()
    w, V = np.linalg.eigh(block)
    pairs = []
    for i in range(len(w)):
        vec = np.zeros(op.side)
        vec[keep] = V[:, i]
        pairs.append(EigenPair(float(w[i]), vec, i, _residual(op.matrix, w[i], vec)))
    return pairs


def _factorize(A: sp.csc_matrix):
    with warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        try:
            lu = spla.splu(A)
        except (RuntimeError, spla.MatrixRankWarning):
            return None
    diag_u = np.abs(lu.U.diagonal())
    scale = max(1.0, float(np.max(np.abs(A).sum(axis=1))))
    if diag_u.size and np.min(diag_u) <= 1e-14 * scale:
        return None
    return lu


def eig_lowest_krylov(op: DiscretizedOperator, f: int = 0, mu: float = 0.0, *,
                      tol: float = RESIDUAL_TOL, max_iter: int = MAX_ITER,
                      v0: np.ndarray | None = None, seed: int = 0) -> EigenPair:
    """Eigenpair closest to ``mu`` by shift-invert Lanczos.

    Parameters
    ----------
    op : DiscretizedOperator
    f : int
        Target index recorded on the result; the returned pair is the one
        whose value is nearest to ``mu``.
    mu : float
        Shift.  If (L - mu I) is numerically singular the shift is moved by
        1e-6 max(1, |mu|), a warning is issued and ``shift_used`` records it.
    tol : float
        Residual tolerance, relative to max(1, norm_estimate).

    Raises
    ------
    SingularShiftError
        If the perturbed shift is singular as well.
    ConvergenceError
        If the residual is not reached within ``max_iter`` iterations.
    """
    mat = op.retained_matrix().tocsc()
    n = mat.shape[0]
    keep = np.flatnonzero(op.retained)
    eye = sp.identity(n, format="csc")

    shift = float(mu)
    lu = _factorize((mat - shift * eye).tocsc())
    perturbed = False
    if lu is None:
        shift = float(mu) + 1e-6 * max(1.0, abs(mu))
        lu = _factorize((mat - shift * eye).tocsc())
        if lu is None:
            raise SingularShiftError(f"shift {mu} and perturbed shift {shift} are both singular")
        perturbed = True
        warnings.warn(f"shift {mu} is singular; retried with {shift}", RuntimeWarning, stacklevel=2)

    ops = 0
    lu_nnz = lu.L.nnz + lu.U.nnz
    rng = np.random.default_rng(seed)
    if v0 is None:
        q = rng.standard_normal(n)
    else:
        q = np.asarray(v0, dtype=float)[keep] if np.size(v0) == op.side else np.asarray(v0, dtype=float)
        if not np.any(q):
            q = rng.standard_normal(n)
    q = q / np.linalg.norm(q)

    target = tol * max(1.0, op.norm_estimate)
    Q = np.zeros((n, min(max_iter, n) + 1))
    Q[:, 0] = q
    alphas, betas = [], []
    best = None
    m = min(max_iter, n)
    for j in range(m):
        w = lu.solve(Q[:, j])
        ops += 2 * lu_nnz
        alpha = float(Q[:, j] @ w)
        w -= alpha * Q[:, j]
        if j > 0:
            w -= betas[-1] * Q[:, j - 1]
        # full reorthogonalization, twice for stability
        for _ in range(2):
            w -= Q[:, : j + 1] @ (Q[:, : j + 1].T @ w)
        ops += 4 * n * (j + 1)
        alphas.append(alpha)
        beta = float(np.linalg.norm(w))

        T = np.diag(alphas) + np.diag(betas, 1) + np.diag(betas, -1)
        theta, S = np.linalg.eigh(T)
        k = int(np.argmax(np.abs(theta)))
        if theta[k] == 0.0:
            raise ConvergenceError("degenerate Krylov space")
        y = Q[:, : j + 1] @ S[:, k]
        y /= np.linalg.norm(y)
        lam = float(y @ (mat @ y))
        ops += mat.nnz + n
        res = _residual(mat, lam, y)
        ops += mat.nnz + 2 * n
        best = (lam, y, res, j + 1)
        if res <= target:
            break
        if beta <= 1e-14 * max(1.0, abs(alpha)):
            # invariant subspace found; restart direction
            w = rng.standard_normal(n)
            w -= Q[:, : j + 1] @ (Q[:, : j + 1].T @ w)
            beta = 0.0
            Q[:, j + 1] = w / np.linalg.norm(w)
        else:
            Q[:, j + 1] = w / beta
        betas.append(beta)
    lam, y, res, iters = best
    if res > target:
        raise ConvergenceError(f"Lanczos residual {res:.3e} above {target:.3e} after {iters} iterations")
    vec = np.zeros(op.side)
    vec[keep] = y
    return EigenPair(lam, vec, f, res, iters, int(ops), shift if perturbed else None)


def _as_vector(v) -> np.ndarray:
    if isinstance(v, EigenPair):
        return v.vector
    if isinstance(v, InitialGuess):
        return v.fine_vector
    return np.asarray(v)


def rayleigh_quotient(op: DiscretizedOperator, v) -> float:
    """v^H L v for a unit vector v."""
    v = _as_vector(v)
    if v.shape != (op.side,):
        raise SolverError(f"vector length {v.size} does not match operator side {op.side}")
    nrm = np.linalg.norm(v)
    if abs(nrm - 1.0) > NORM_TOL:
        raise SolverError(f"rayleigh_quotient needs a unit vector, got norm {nrm:.3e}")
    return float(np.real(np.vdot(v, op.matrix @ v)))


def _pad_axis(spec: np.ndarray, axis: int, n_new: int) -> np.ndarray:
    n_old = spec.shape[axis]
    if n_new == n_old:
        return spec
    half = n_old // 2
    shape = list(spec.shape)
    shape[axis] = n_new
    out = np.zeros(shape, dtype=complex)

    def sl(a, b):
        idx = [slice(None)] * spec.ndim
        idx[axis] = slice(a, b)
        return tuple(idx)

    out[sl(0, half)] = spec[sl(0, half)]
    out[sl(n_new - half + 1, n_new)] = spec[sl(half + 1, n_old)]
    # split the Nyquist bin between +k and -k so real inputs stay real
    nyq = spec[sl(half, half + 1)] * 0.5
    out[sl(half, half + 1)] = nyq
    out[sl(n_new - half, n_new - half + 1)] = nyq
    return out


def prolong_state(coarse, fine_N: int, dimension_D: int = 1, N0: int | None = None) -> InitialGuess:
    """Fourier zero-padding interpolation of a coarse-grid vector.

    Parameters
    ----------
    coarse : EigenPair or array
        Vector on an N0^D grid (C-order flattening).
    fine_N : int
        Target points per axis; must be a power-of-two multiple of N0.
    """
    v = _as_vector(coarse)
    if N0 is None:
        N0 = int(round(v.size ** (1.0 / dimension_D)))
    if N0 ** dimension_D != v.size:
        raise SolverError(f"coarse vector of length {v.size} is not an N0^{dimension_D} grid")
    if not (is_power_of_two(N0) and is_power_of_two(fine_N)) or fine_N % N0:
        raise SolverError(f"cannot prolong from N0={N0} to N={fine_N}: need powers of two with N0 | N")
    grid = v.reshape((N0,) * dimension_D)
    spec = np.fft.fftn(grid)
    for axis in range(dimension_D):
        spec = _pad_axis(spec, axis, fine_N)
    fine = np.fft.ifftn(spec).ravel()
    if np.isrealobj(v):
        fine = fine.real
    fine = fine / np.linalg.norm(fine)
    predicted = 1.0 - 1.0 / N0 ** 2 if N0 != fine_N else 1.0
    return InitialGuess(N0, fine, predicted, dimension_D)


def overlap(a, b) -> complex:
    """<a|b> for unit vectors of equal length."""
    a, b = _as_vector(a), _as_vector(b)
    if a.shape != b.shape:
        raise SolverError(f"length mismatch: {a.shape} vs {b.shape}")
    return complex(np.vdot(a, b))
