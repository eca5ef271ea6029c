"""
Periodic finite-difference discretizations of Hermitian differential operators.

A one-dimensional operator of order 2S is described by real coefficient
functions a_0 .. a_S and discretized in its bilinear form

    L = sum_s (Delta_s)^T Diag(a_s) Delta_s,

where Delta_s is the s-th power of the forward difference N (shift - I) on
an N-point periodic grid.  Multi-dimensional operators are sums of Kronecker
products of one-dimensional factors.  Grid flattening is C-order, so axis 0
is the most significant index.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "OperatorError",
    "BudgetError",
    "CoefficientFn",
    "OperatorSpec1D",
    "TensorOperatorSpec",
    "Structure",
    "DiscretizedOperator",
    "DomainMask",
    "is_power_of_two",
    "finite_difference_matrix",
    "sample_coefficients",
    "build_operator_1d",
    "build_operator_tensor",
    "build_operator",
    "apply_domain_mask",
    "reciprocal_matrix",
]

COEFFICIENT_KINDS = ("constant", "fourier-series", "polynomial-in-x")
SAMPLING_MODES = ("spectral", "pointwise")

# Smoothness recorded for analytic families (constant, trigonometric).
ANALYTIC_SMOOTHNESS = 1_000_000

# Largest accumulator register (D log2 N qubits) assembled explicitly.
MAX_GRID_QUBITS = 22

PERIODICITY_TOL = 1e-12


class OperatorError(ValueError):
    """Invalid operator specification or incompatible grid."""


class BudgetError(OperatorError):
    """Requested discretization exceeds the desk-scale memory budget."""


def is_power_of_two(n) -> bool:
    return isinstance(n, (int, np.integer)) and not isinstance(n, bool) and n >= 1 and (n & (n - 1)) == 0


def _check_grid(N) -> int:
    if not is_power_of_two(N) or N < 2:
        raise OperatorError(f"grid size must be a power of two >= 2 (register encoding), got {N!r}")
    return int(N)


def _poly_derivative_gap(params: np.ndarray, order: int) -> float:
    coeffs = np.polynomial.polynomial.polyder(params, order) if order else params
    return abs(np.polynomial.polynomial.polyval(1.0, coeffs) - np.polynomial.polynomial.polyval(0.0, coeffs))


def _poly_fourier(params: np.ndarray, k: np.ndarray) -> np.ndarray:
    # exact int_0^1 x^n exp(-2 pi i k x) dx by the integration-by-parts recursion
    k = np.asarray(k)
    out = np.zeros(k.shape, dtype=complex)
    zero = k == 0
    for n, c in enumerate(params):
        out[zero] += c / (n + 1)
    w = 2.0 * np.pi * k[~zero]
    if w.size:
        moment = np.zeros(w.shape, dtype=complex)
        acc = params[0] * moment
        for n in range(1, len(params)):
            moment = 1j / w - (1j * n / w) * moment
            acc = acc + params[n] * moment
        out[~zero] = acc
    return out


@dataclass(frozen=True)
class CoefficientFn:
    """A real, periodic coefficient function on [0, 1].

    Parameters
    ----------
    kind : {'constant', 'fourier-series', 'polynomial-in-x'}
        ``constant`` takes ``params = (c,)``.  ``fourier-series`` takes
        ``(c0, a1, b1, a2, b2, ...)`` for
        ``c0 + sum_k a_k cos(2 pi k x) + b_k sin(2 pi k x)``.
        ``polynomial-in-x`` takes ascending power coefficients and must be
        periodic (values and derivatives matching at x=0 and x=1) up to
        ``smoothness_order``.
    params : sequence of float
    smoothness_order : int, optional
        Number of derivatives that are finite and periodic.  Defaults to a
        large value for analytic families and to the largest verified order
        for polynomials.
    """

    kind: str
    params: tuple[float, ...]
    smoothness_order: int | None = None

    def __post_init__(self):
        if self.kind not in COEFFICIENT_KINDS:
            raise OperatorError(f"unknown coefficient kind {self.kind!r}; expected one of {COEFFICIENT_KINDS}")
        params = tuple(float(p) for p in np.atleast_1d(np.asarray(self.params, dtype=float)))
        if not params or not all(math.isfinite(p) for p in params):
            raise OperatorError(f"{self.kind} coefficient needs finite parameters, got {self.params!r}")
        if self.kind == "constant" and len(params) != 1:
            raise OperatorError("constant coefficient takes exactly one parameter")
        if self.kind == "fourier-series" and len(params) % 2 != 1:
            raise OperatorError("fourier-series parameters are (c0, a1, b1, a2, b2, ...): odd length required")
        object.__setattr__(self, "params", params)

        if self.kind == "polynomial-in-x":
            arr = np.asarray(params)
            verified = -1
            for t in range(len(params)):
                if _poly_derivative_gap(arr, t) > PERIODICITY_TOL:
                    break
                verified = t
            if verified < 0:
                raise OperatorError("polynomial coefficient is not periodic: p(0) != p(1)")
            # derivatives beyond the degree vanish identically
            if verified == len(params) - 1:
                verified = ANALYTIC_SMOOTHNESS
            if self.smoothness_order is None:
                object.__setattr__(self, "smoothness_order", verified)
            elif self.smoothness_order > verified:
                raise OperatorError(
                    f"polynomial coefficient is periodic only up to derivative order {verified}, "
                    f"smoothness_order={self.smoothness_order} requested"
                )
        elif self.smoothness_order is None:
            object.__setattr__(self, "smoothness_order", ANALYTIC_SMOOTHNESS)

    @classmethod
    def constant(cls, value: float) -> "CoefficientFn":
        return cls("constant", (value,))

    @classmethod
    def fourier(cls, c0: float, *pairs: float) -> "CoefficientFn":
        return cls("fourier-series", (c0, *pairs))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.kind == "constant":
            return np.full(x.shape, p[0])
        if self.kind == "fourier-series":
            out = np.full(x.shape, p[0])
            for k in range(1, (len(p) - 1) // 2 + 1):
                a, b = p[2 * k - 1], p[2 * k]
                out = out + a * np.cos(2 * np.pi * k * x) + b * np.sin(2 * np.pi * k * x)
            return out
        return np.polynomial.polynomial.polyval(x, np.asarray(p))

    def fourier_coefficients(self, kmax: int) -> np.ndarray:
        """Fourier coefficients for k = -kmax .. kmax (index ``k + kmax``)."""
        k = np.arange(-kmax, kmax + 1)
        out = np.zeros(k.shape, dtype=complex)
        p = self.params
        if self.kind == "constant":
            out[kmax] = p[0]
        elif self.kind == "fourier-series":
            out[kmax] = p[0]
            for m in range(1, min((len(p) - 1) // 2, kmax) + 1):
                a, b = p[2 * m - 1], p[2 * m]
                out[kmax + m] = 0.5 * (a - 1j * b)
                out[kmax - m] = 0.5 * (a + 1j * b)
        else:
            out = _poly_fourier(np.asarray(p), k)
        return out

    @property
    def is_constant(self) -> bool:
        if self.kind == "constant":
            return True
        if self.kind == "fourier-series":
            return all(v == 0.0 for v in self.params[1:])
        return all(v == 0.0 for v in self.params[1:])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": list(self.params), "smoothness_order": self.smoothness_order}


@dataclass(frozen=True)
class OperatorSpec1D:
    """Order-2S operator sum_s d^s/dx^s (a_s d^s/dx^s) on the unit circle."""

    order_S: int
    coefficients: tuple[CoefficientFn, ...]

    def __post_init__(self):
        if not isinstance(self.order_S, (int, np.integer)) or self.order_S < 0:
            raise OperatorError(f"order_S must be a non-negative integer, got {self.order_S!r}")
        coeffs = tuple(self.coefficients)
        if len(coeffs) != self.order_S + 1:
            raise OperatorError(f"order_S={self.order_S} needs {self.order_S + 1} coefficients, got {len(coeffs)}")
        for s, c in enumerate(coeffs):
            if not isinstance(c, CoefficientFn):
                raise OperatorError(f"coefficient {s} is not a CoefficientFn")
            if c.smoothness_order < s:
                raise OperatorError(f"coefficient a_{s} needs smoothness order >= {s}, has {c.smoothness_order}")
        object.__setattr__(self, "coefficients", coeffs)

    @classmethod
    def from_constants(cls, *values: float) -> "OperatorSpec1D":
        """``from_constants(a0, a1, ...)`` with every coefficient constant."""
        return cls(len(values) - 1, tuple(CoefficientFn.constant(v) for v in values))

    @property
    def is_constant(self) -> bool:
        return all(c.is_constant for c in self.coefficients)

    def symbol(self, k) -> np.ndarray:
        """Continuous eigenvalue of plane wave k for constant coefficients."""
        k = np.asarray(k, dtype=float)
        return sum(c.params[0] * (2 * np.pi * k) ** (2 * s) for s, c in enumerate(self.coefficients))

    def to_dict(self) -> dict:
        return {"order_S": self.order_S, "coefficients": [c.to_dict() for c in self.coefficients]}


@dataclass(frozen=True)
class TensorOperatorSpec:
    """Sum over terms of Kronecker products of one-dimensional factors."""

    dimension_D: int
    terms: tuple[tuple[OperatorSpec1D, ...], ...]

    def __post_init__(self):
        if not isinstance(self.dimension_D, (int, np.integer)) or self.dimension_D < 1:
            raise OperatorError(f"dimension_D must be >= 1, got {self.dimension_D!r}")
        terms = tuple(tuple(t) for t in self.terms)
        if not terms:
            raise OperatorError("a tensor operator needs at least one term")
        for b, term in enumerate(terms):
            if len(term) != self.dimension_D:
                raise OperatorError(f"term {b} has {len(term)} factors, dimension is {self.dimension_D}")
        object.__setattr__(self, "terms", terms)

    @property
    def orders(self) -> tuple[tuple[int, ...], ...]:
        return tuple(tuple(f.order_S for f in term) for term in self.terms)

    @property
    def total_order_S(self) -> int:
        """S such that 2S = max over terms of the summed factor orders."""
        return max(sum(o) for o in self.orders)

    @property
    def is_constant(self) -> bool:
        return all(f.is_constant for term in self.terms for f in term)

    def to_dict(self) -> dict:
        return {
            "dimension_D": self.dimension_D,
            "terms": [[f.to_dict() for f in term] for term in self.terms],
        }


@dataclass(frozen=True)
class Structure:
    """Per-term, per-axis half-bandwidths S_{beta,alpha} of an assembled operator."""

    kind: str  # 'band' | 'tensor'
    orders: tuple[tuple[int, ...], ...]

    @property
    def bandwidth_volume(self) -> int:
        return max(math.prod(2 * s + 1 for s in term) for term in self.orders)

    @property
    def total_order_S(self) -> int:
        return max(sum(term) for term in self.orders)


@dataclass(frozen=True)
class DiscretizedOperator:
    """Real symmetric N^D x N^D matrix with its grid and band metadata.

    ``deleted`` marks grid points removed by a domain mask; their rows and
    columns are zero and solvers restrict to the retained block.
    """

    N: int
    dimension_D: int
    matrix: sp.csr_matrix
    structure: Structure
    norm_estimate: float
    deleted: np.ndarray | None = None
    sampling: str = "spectral"

    @property
    def side(self) -> int:
        return self.N ** self.dimension_D

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return (self.N,) * self.dimension_D

    @property
    def retained(self) -> np.ndarray:
        if self.deleted is None:
            return np.ones(self.side, dtype=bool)
        return ~self.deleted

    @property
    def order_S(self) -> int:
        return self.structure.total_order_S

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def retained_matrix(self) -> sp.csr_matrix:
        if self.deleted is None:
            return self.matrix
        keep = np.flatnonzero(~self.deleted)
        return self.matrix[keep][:, keep].tocsr()

    def summary(self) -> dict:
        m = self.matrix
        asym = abs(m - m.T).max() if m.nnz else 0.0
        return {
            "N": self.N,
            "dimension_D": self.dimension_D,
            "side": self.side,
            "nnz": int(m.nnz),
            "order_S": self.order_S,
            "bandwidth_volume": self.structure.bandwidth_volume,
            "norm_estimate": float(self.norm_estimate),
            "max_asymmetry": float(asym),
            "retained_points": int(self.retained.sum()),
            "sampling": self.sampling,
        }


def finite_difference_matrix(s: int, N: int) -> sp.csr_matrix:
    """s-th power of the periodic forward difference N (shift - I) on N points."""
    N = _check_grid(N)
    if not isinstance(s, (int, np.integer)) or s < 0:
        raise OperatorError(f"derivative order must be a non-negative integer, got {s!r}")
    eye = sp.identity(N, format="csr", dtype=float)
    if s == 0:
        return eye
    rows = np.arange(N)
    shift = sp.csr_matrix((np.ones(N), (rows, (rows + 1) % N)), shape=(N, N))
    d1 = (N * (shift - eye)).tocsr()
    out = d1
    for _ in range(s - 1):
        out = (d1 @ out).tocsr()
    out.sort_indices()
    return out


def sample_coefficients(c: CoefficientFn, N: int, mode: str = "spectral") -> np.ndarray:
    """Grid values a^(N) of a coefficient function.

    ``spectral`` keeps the Fourier components with |k| <= N/2 and transforms
    back to the grid; ``pointwise`` samples c(x/N) directly.
    """
    N = _check_grid(N)
    if mode == "pointwise":
        return np.asarray(c(np.arange(N) / N), dtype=float)
    if mode != "spectral":
        raise OperatorError(f"sampling mode must be one of {SAMPLING_MODES}, got {mode!r}")
    if c.kind == "constant":
        return np.full(N, c.params[0])
    half = N // 2
    coeffs = c.fourier_coefficients(half)
    folded = np.zeros(N, dtype=complex)
    np.add.at(folded, np.arange(-half, half + 1) % N, coeffs)
    return np.real(np.fft.ifft(folded) * N)


def _symmetrized(mat: sp.spmatrix) -> sp.csr_matrix:
    out = ((mat + mat.T) * 0.5).tocsr()
    out.eliminate_zeros()
    out.sort_indices()
    return out


def _row_sum_bound(mat: sp.csr_matrix) -> float:
    if mat.nnz == 0:
        return 0.0
    return float(np.max(np.asarray(abs(mat).sum(axis=1)).ravel()))


def _assemble_1d(spec: OperatorSpec1D, N: int, mode: str) -> sp.csr_matrix:
    total = sp.csr_matrix((N, N), dtype=float)
    for s, coeff in enumerate(spec.coefficients):
        a = sample_coefficients(coeff, N, mode)
        if not np.any(a):
            continue
        d = finite_difference_matrix(s, N)
        total = total + d.T @ sp.diags(a) @ d
    return total


def build_operator_1d(spec: OperatorSpec1D, N: int, mode: str = "spectral") -> DiscretizedOperator:
    """Assemble sum_s Delta_s^T Diag(a_s) Delta_s for a one-dimensional spec."""
    N = _check_grid(N)
    if not isinstance(spec, OperatorSpec1D):
        raise OperatorError("build_operator_1d needs an OperatorSpec1D")
    if 2 * spec.order_S >= N:
        raise OperatorError(f"stencil of order 2S={2 * spec.order_S} does not fit on N={N} points")
    mat = _symmetrized(_assemble_1d(spec, N, mode))
    structure = Structure("band", ((spec.order_S,),))
    return DiscretizedOperator(N, 1, mat, structure, _row_sum_bound(mat), sampling=mode)


def build_operator_tensor(spec: TensorOperatorSpec, N: int, mode: str = "spectral") -> DiscretizedOperator:
    """Kronecker assembly of sum_beta L_{beta,1} (x) ... (x) L_{beta,D}."""
    N = _check_grid(N)
    D = spec.dimension_D
    qubits = D * int(math.log2(N))
    if qubits > MAX_GRID_QUBITS:
        raise BudgetError(
            f"N^D = {N}^{D} = {N ** D} grid points ({qubits} qubits) exceeds the desk-scale "
            f"budget of 2^{MAX_GRID_QUBITS} points"
        )
    for term in spec.terms:
        for f in term:
            if 2 * f.order_S >= N:
                raise OperatorError(f"stencil of order {2 * f.order_S} does not fit on N={N} points")
    if D == 1 and len(spec.terms) == 1:
        return build_operator_1d(spec.terms[0][0], N, mode)

    side = N ** D
    total = sp.csr_matrix((side, side), dtype=float)
    for term in spec.terms:
        factors = [_assemble_1d(f, N, mode).tocsr() for f in term]
        prod = factors[0]
        for f in factors[1:]:
            prod = sp.kron(prod, f, format="csr")
        total = total + prod
    mat = _symmetrized(total)
    structure = Structure("band" if D == 1 else "tensor", spec.orders)
    return DiscretizedOperator(N, D, mat, structure, _row_sum_bound(mat), sampling=mode)


def build_operator(spec, N: int, mode: str = "spectral") -> DiscretizedOperator:
    if isinstance(spec, OperatorSpec1D):
        return build_operator_1d(spec, N, mode)
    if isinstance(spec, TensorOperatorSpec):
        return build_operator_tensor(spec, N, mode)
    raise OperatorError(f"not an operator spec: {type(spec).__name__}")


@dataclass(frozen=True)
class DomainMask:
    """Grid points kept by a Boolean predicate on multi-indices.

    Use :meth:`from_predicate` to evaluate a predicate; ``retained`` is the
    flattened (C-order) keep mask.
    """

    N: int
    dimension_D: int
    retained: np.ndarray = field(repr=False)

    def __post_init__(self):
        retained = np.asarray(self.retained, dtype=bool).ravel()
        if retained.size != self.N ** self.dimension_D:
            raise OperatorError(f"mask has {retained.size} points, grid has {self.N ** self.dimension_D}")
        retained.setflags(write=False)
        object.__setattr__(self, "retained", retained)

    @property
    def retained_count(self) -> int:
        return int(self.retained.sum())

    @classmethod
    def from_predicate(cls, predicate: Callable[..., bool], N: int, dimension_D: int = 1,
                       vectorized: bool = False) -> "DomainMask":
        """Evaluate ``predicate(x_0, ..., x_{D-1})`` over the grid.

        With ``vectorized=True`` the predicate receives integer coordinate
        arrays and must return a Boolean array.
        """
        N = _check_grid(N)

        def evaluate():
            if vectorized:
                coords = np.indices((N,) * dimension_D).reshape(dimension_D, -1)
                return np.asarray(predicate(*coords), dtype=bool).ravel()
            return np.fromiter(
                (bool(predicate(*idx)) for idx in itertools.product(range(N), repeat=dimension_D)),
                dtype=bool,
                count=N ** dimension_D,
            )

        first = evaluate()
        if not np.array_equal(first, evaluate()):
            raise OperatorError("domain predicate is not pure: two evaluations disagree")
        return cls(N, dimension_D, first)

    @classmethod
    def box(cls, N: int, lower: Sequence[int], upper: Sequence[int]) -> "DomainMask":
        """Keep points with lower[a] <= x_a < upper[a] on every axis."""
        lower, upper = np.asarray(lower), np.asarray(upper)
        return cls.from_predicate(
            lambda *x: np.all([(xa >= lo) & (xa < hi) for xa, lo, hi in zip(x, lower, upper)], axis=0),
            N, len(lower), vectorized=True,
        )


def apply_domain_mask(op: DiscretizedOperator, mask: DomainMask) -> DiscretizedOperator:
    """Remove every coupling into or out of deleted points, keeping the grid."""
    if mask.N != op.N or mask.dimension_D != op.dimension_D:
        raise OperatorError(
            f"mask grid {mask.N}^{mask.dimension_D} does not match operator grid {op.N}^{op.dimension_D}"
        )
    keep = mask.retained & op.retained
    if not keep.any():
        raise OperatorError("domain mask retains no grid points")
    k = sp.diags(keep.astype(float))
    mat = (k @ op.matrix @ k).tocsr()
    mat.eliminate_zeros()
    mat.sort_indices()
    deleted = ~keep
    deleted.setflags(write=False)
    return DiscretizedOperator(op.N, op.dimension_D, mat, op.structure, _row_sum_bound(mat),
                               deleted=deleted, sampling=op.sampling)


def reciprocal_matrix(spec: OperatorSpec1D, N: int) -> np.ndarray:
    """Plane-wave (Galerkin) matrix of the bilinear form on k in [-N/2, N/2).

    Entry (k, k') is sum_s conj(2 pi i k)^s a~_{s,k-k'} (2 pi i k')^s, the
    matrix of phi* L psi between plane waves; it is Hermitian and positive
    semidefinite for non-negative coefficients.
    """
    N = _check_grid(N)
    k = np.arange(-N // 2, N // 2)
    diff = k[:, None] - k[None, :]
    out = np.zeros((N, N), dtype=complex)
    for s, c in enumerate(spec.coefficients):
        coeffs = c.fourier_coefficients(N - 1)
        a = coeffs[diff + (N - 1)]
        d = (2j * np.pi * k) ** s
        out += np.conj(d)[:, None] * a * d[None, :]
    return out
