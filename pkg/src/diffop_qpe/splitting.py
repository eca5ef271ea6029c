"""
Operator splitting into exactly exponentiable parts and product formulas.

A discretized operator is split as a diagonal part plus "pair-coupling"
parts, each a set of disjoint 2x2 blocks, so exp(i theta part) is a product
of independent 2x2 rotations.  Off-diagonal entries are grouped by their
periodic grid offset; within an offset, a two-coloring of the source points
along the axis of least 2-adic valuation makes the pairs disjoint.  For the
1D second-order stencil this gives the familiar diagonal / even / odd split.

Product formulas are stored as an explicit schedule of (part, coefficient)
factors: symmetric Strang (nu=2) and the triple-jump composition (nu=4).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .operators import DiscretizedOperator, OperatorError
from .registers import StateVector

__all__ = [
    "SplittingError",
    "PhaseWrapError",
    "SplitPart",
    "SplitPlan",
    "UnitaryStep",
    "SplittingResult",
    "SUZUKI_GAMMA",
    "split_operator",
    "exp_part",
    "strang_step",
    "suzuki_step",
    "product_step",
    "splitting_error",
    "choose_tau",
    "parity_shift",
]

SUZUKI_GAMMA = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
CLUSTER_RTOL = 1e-8


class SplittingError(ValueError):
    pass


class PhaseWrapError(SplittingError):
    pass


@dataclass(frozen=True)
class SplitPart:
    """One exactly exponentiable part.

    ``kind='diagonal'`` uses ``diagonal``; ``kind='pair-coupling'`` uses
    ``pairs`` (P x 2 index array, pairwise disjoint) and ``couplings``
    (matrix entry of each pair).  ``scale`` is the N^{2S} prefactor the
    entries carry.
    """

    kind: str
    side: int
    scale: float
    diagonal: np.ndarray | None = field(default=None, repr=False)
    pairs: np.ndarray | None = field(default=None, repr=False)
    couplings: np.ndarray | None = field(default=None, repr=False)
    label: str = ""

    def __post_init__(self):
        if self.kind == "diagonal":
            if self.diagonal is None or self.diagonal.shape != (self.side,):
                raise SplittingError("diagonal part needs a diagonal of length side")
        elif self.kind == "pair-coupling":
            pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
            if len(np.unique(pairs)) != pairs.size:
                raise SplittingError(f"pairs in part {self.label!r} are not disjoint")
            if np.any(pairs[:, 0] == pairs[:, 1]):
                raise SplittingError("pair-coupling part cannot couple an index to itself")
            object.__setattr__(self, "pairs", pairs)
            object.__setattr__(self, "couplings", np.asarray(self.couplings, dtype=float))
        else:
            raise SplittingError(f"unknown part kind {self.kind!r}")

    @property
    def n_terms(self) -> int:
        return self.side if self.kind == "diagonal" else len(self.pairs)

    def matrix(self) -> sp.csr_matrix:
        if self.kind == "diagonal":
            return sp.diags(self.diagonal).tocsr()
        i, j = self.pairs[:, 0], self.pairs[:, 1]
        rows = np.concatenate([i, j])
        cols = np.concatenate([j, i])
        vals = np.concatenate([self.couplings, self.couplings])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.side, self.side))


@dataclass(frozen=True)
class SplitPlan:
    parts: tuple[SplitPart, ...]
    order_nu: int
    side: int
    grid_shape: tuple[int, ...]
    bandwidth_volume: int
    tau: float | None = None
    quantization: dict | None = None

    @property
    def R(self) -> int:
        return len(self.parts)

    @property
    def r_qubits(self) -> int:
        return max(0, math.ceil(math.log2(self.bandwidth_volume)))

    def matrix(self) -> sp.csr_matrix:
        total = sp.csr_matrix((self.side, self.side))
        for p in self.parts:
            total = total + p.matrix()
        return total.tocsr()

    def with_tau(self, tau: float) -> "SplitPlan":
        return SplitPlan(self.parts, self.order_nu, self.side, self.grid_shape,
                         self.bandwidth_volume, tau, self.quantization)

    def summary(self) -> dict:
        return {
            "R": self.R,
            "order_nu": self.order_nu,
            "bandwidth_volume": self.bandwidth_volume,
            "r_qubits": self.r_qubits,
            "parts": [{"kind": p.kind, "label": p.label, "terms": p.n_terms} for p in self.parts],
            "quantization": self.quantization,
        }


def _two_adic(v: int) -> int:
    return (v & -v).bit_length() - 1


def _quantize(values: np.ndarray, scale: float, resolution: float) -> np.ndarray:
    return np.round(values / scale / resolution) * resolution * scale


def split_operator(op: DiscretizedOperator, order_nu: int = 2, *, tau: float | None = None,
                   quantize: bool = False, bits: int | None = None,
                   resolution: float | None = None) -> SplitPlan:
    """Split ``op`` into a diagonal part and disjoint pair-coupling parts.

    Parameters
    ----------
    op : DiscretizedOperator
    order_nu : {2, 4}
        Product-formula order the plan is meant for.
    quantize : bool
        Round every entry (divided by the N^{2S} scale) to a multiple of
        ``resolution``, emulating a fixed-point coefficient register.
    bits, resolution : optional
        Register width b and resolution delta.  If neither is given, b is
        the smallest value >= 16 whose worst-case eigenvalue shift is below
        a tenth of the O(1/N^2) truncation scale; delta = max|entry|/(2^b-1).
    """
    if op.structure is None:
        raise SplittingError("operator has no structure metadata")
    if order_nu not in (2, 4):
        raise SplittingError(f"order_nu must be 2 or 4, got {order_nu}")
    N, D = op.N, op.dimension_D
    grid = op.grid_shape
    S = op.order_S
    scale = float(N) ** (2 * S)
    mat = op.matrix.tocoo()
    diag = op.matrix.diagonal().astype(float)

    quant = None
    if quantize:
        offdiag_max = np.max(np.abs(mat.data)) if mat.nnz else 0.0
        vmax = max(offdiag_max, np.max(np.abs(diag))) / scale
        if vmax == 0.0:
            raise SplittingError("cannot quantize the zero operator")
        trunc_scale = op.norm_estimate / N ** (2 * S + 2) if S else op.norm_estimate / N ** 2
        if resolution is None:
            if bits is None:
                row_len = max(1, int(np.max(np.diff(op.matrix.indptr))))
                bits = 16
                while 0.5 * row_len * vmax / (2 ** bits - 1) * scale > 0.1 * trunc_scale and bits < 52:
                    bits += 1
            resolution = vmax / (2 ** bits - 1)
        elif bits is None:
            bits = max(1, math.ceil(math.log2(vmax / resolution + 1)))
        diag = _quantize(diag, scale, resolution)
        quant = {"bits": int(bits), "resolution": float(resolution)}

    parts = [SplitPart("diagonal", op.side, scale, diagonal=diag, label="diagonal")]

    upper = mat.row < mat.col
    rows, cols, vals = mat.row[upper], mat.col[upper], mat.data[upper]
    if rows.size:
        if quantize:
            vals = _quantize(vals, scale, quant["resolution"])
        xi = np.array(np.unravel_index(rows, grid)).T
        xj = np.array(np.unravel_index(cols, grid)).T
        delta = (xj - xi) % N
        neg = (-delta) % N
        groups: dict[tuple, list] = {}
        for k in range(rows.size):
            d, nd = tuple(delta[k]), tuple(neg[k])
            if nd < d:
                d, src, dst, xs = nd, cols[k], rows[k], xj[k]
            else:
                src, dst, xs = rows[k], cols[k], xi[k]
            if d == tuple((-np.asarray(d)) % N):
                color = 0
            else:
                nz = [(_two_adic(int(c)), a) for a, c in enumerate(d) if c]
                v, axis = min(nz)
                color = (int(xs[axis]) >> v) & 1
            groups.setdefault((d, color), []).append((src, dst, vals[k]))
        for (d, color), items in sorted(groups.items()):
            arr = np.array([(s, t) for s, t, _ in items], dtype=np.int64)
            w = np.array([c for _, _, c in items], dtype=float)
            keep = w != 0.0
            if not np.any(keep):
                continue
            label = f"offset{[int(c) for c in d]}-c{color}"
            parts.append(SplitPart("pair-coupling", op.side, scale, pairs=arr[keep], couplings=w[keep], label=label))

    return SplitPlan(tuple(parts), order_nu, op.side, grid, op.structure.bandwidth_volume, tau, quant)


def quantization_error_bound(plan: SplitPlan, op: DiscretizedOperator) -> float:
    """Maximum absolute row sum of (sum of parts - op), bounding eigenvalue shifts."""
    diff = (plan.matrix() - op.matrix).tocsr()
    if diff.nnz == 0:
        return 0.0
    return float(np.max(np.asarray(abs(diff).sum(axis=1)).ravel()))


def exp_part(part: SplitPart, theta: float, psi) -> None:
    """Apply exp(i theta part) in place along the last axis of ``psi``."""
    arr = psi.amplitudes if isinstance(psi, StateVector) else psi
    if arr.shape[-1] != part.side:
        raise SplittingError(f"state has {arr.shape[-1]} accumulator amplitudes, part acts on {part.side}")
    if theta == 0.0:
        return
    if part.kind == "diagonal":
        arr *= np.exp(1j * theta * part.diagonal)
        return
    i, j = part.pairs[:, 0], part.pairs[:, 1]
    c = np.cos(theta * part.couplings)
    s = 1j * np.sin(theta * part.couplings)
    a = arr[..., i]
    b = arr[..., j]
    arr[..., i] = c * a + s * b
    arr[..., j] = s * a + c * b


def _merge(schedule: list[tuple[int, float]]) -> list[tuple[int, float]]:
    out: list[tuple[int, float]] = []
    for p, c in schedule:
        if out and out[-1][0] == p:
            out[-1] = (p, out[-1][1] + c)
        else:
            out.append((p, c))
    return [(p, c) for p, c in out if c != 0.0]


def _strang_schedule(R: int, coef: float) -> list[tuple[int, float]]:
    half = 0.5 * coef
    return _merge([(p, half) for p in range(R)] + [(p, half) for p in reversed(range(R))])


@dataclass
class UnitaryStep:
    """Product-formula approximation of exp(i (L + shift) tau).

    ``schedule`` lists (part index, coefficient) in application order;
    part p is applied as exp(i coefficient tau part_p).
    """

    plan: SplitPlan
    tau: float
    effective_order: int
    schedule: list[tuple[int, float]]
    shift: float = 0.0

    def apply(self, psi, power: int = 1) -> None:
        arr = psi.amplitudes if isinstance(psi, StateVector) else psi
        for _ in range(power):
            for p, c in self.schedule:
                exp_part(self.plan.parts[p], c * self.tau, arr)
            if self.shift:
                arr *= np.exp(1j * self.shift * self.tau)

    def __call__(self, psi) -> None:
        self.apply(psi)

    def matrix(self) -> np.ndarray:
        rows = np.eye(self.plan.side, dtype=complex)
        self.apply(rows)
        return rows.T

    def with_shift(self, shift: float) -> "UnitaryStep":
        return UnitaryStep(self.plan, self.tau, self.effective_order, self.schedule, float(shift))

    @property
    def n_exponentials(self) -> int:
        return len(self.schedule)


def strang_step(plan: SplitPlan, tau: float | None = None, shift: float = 0.0) -> UnitaryStep:
    """Symmetric product: parts 1..R with tau/2, then R..1 with tau/2."""
    if plan.order_nu != 2:
        raise SplittingError(f"strang_step needs a nu=2 plan, got nu={plan.order_nu}")
    tau = plan.tau if tau is None else tau
    if tau is None:
        raise SplittingError("no step length given")
    return UnitaryStep(plan, float(tau), 2, _strang_schedule(plan.R, 1.0), float(shift))


def suzuki_step(plan: SplitPlan, tau: float | None = None, shift: float = 0.0) -> UnitaryStep:
    """Fourth-order triple jump S(g tau) S((1-2g) tau) S(g tau), g = 1/(2-2^(1/3))."""
    if plan.order_nu != 4:
        raise SplittingError(f"suzuki_step needs a nu=4 plan, got nu={plan.order_nu}")
    tau = plan.tau if tau is None else tau
    if tau is None:
        raise SplittingError("no step length given")
    g = SUZUKI_GAMMA
    sched = (_strang_schedule(plan.R, g) + _strang_schedule(plan.R, 1.0 - 2.0 * g)
             + _strang_schedule(plan.R, g))
    return UnitaryStep(plan, float(tau), 4, _merge(sched), float(shift))


def product_step(plan: SplitPlan, tau: float | None = None, shift: float = 0.0) -> UnitaryStep:
    """Strang or triple-jump step according to ``plan.order_nu``."""
    if plan.order_nu == 2:
        return strang_step(plan, tau, shift)
    return suzuki_step(plan, tau, shift)


@dataclass(frozen=True)
class SplittingResult:
    lambda_exact: np.ndarray
    lambda_split: np.ndarray
    deviation: np.ndarray
    tau: float
    vectors: np.ndarray | None = field(default=None, repr=False)

    @property
    def max_deviation(self) -> float:
        return float(np.max(self.deviation))


def _clusters(w: np.ndarray) -> list[np.ndarray]:
    out, start = [], 0
    scale = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
    for k in range(1, len(w) + 1):
        if k == len(w) or w[k] - w[k - 1] > CLUSTER_RTOL * scale:
            out.append(np.arange(start, k))
            start = k
    return out


def splitting_error(plan: SplitPlan, op: DiscretizedOperator, tau: float | None = None,
                    step: UnitaryStep | None = None) -> SplittingResult:
    """Eigenvalue deviations |lambda_Pi - lambda| of the product step.

    The step is assembled densely; its eigenphases divided by tau are
    matched to the eigenvalues of ``op`` by maximal eigenvector overlap,
    with degenerate clusters treated as subspaces.  Deleted points of a
    masked operator are ignored.
    """
    if step is None:
        step = product_step(plan, tau)
    tau = step.tau
    keep = np.flatnonzero(op.retained)
    L = op.retained_matrix().toarray()
    w, V = np.linalg.eigh(L)
    radius = float(np.max(np.abs(w)))
    if radius * tau >= np.pi:
        raise PhaseWrapError(
            f"||L|| tau = {radius * tau:.3g} >= pi: eigenphases wrap; use tau < {np.pi / radius:.3g}"
        )
    U = step.matrix()[np.ix_(keep, keep)]
    T, Z = sla.schur(U, output="complex")
    phases = np.angle(np.diag(T)) / tau - step.shift

    clusters = _clusters(w)
    weights = np.empty((len(phases), len(clusters)))
    for c, idx in enumerate(clusters):
        weights[:, c] = np.sum(np.abs(V[:, idx].T @ Z) ** 2, axis=0)
    capacity = np.array([len(idx) for idx in clusters])
    assigned = -np.ones(len(phases), dtype=int)
    order = np.argsort(-weights, axis=None, kind="stable")
    for flat in order:
        s, c = np.unravel_index(flat, weights.shape)
        if assigned[s] < 0 and capacity[c] > 0:
            assigned[s] = c
            capacity[c] -= 1
    lam_split = np.empty_like(w)
    for c, idx in enumerate(clusters):
        got = np.sort(phases[assigned == c])
        lam_split[idx] = got
    dev = np.abs(lam_split - w)
    return SplittingResult(w, lam_split, dev, tau, V)


def choose_tau(N: int, S: int, nu: int = 2, safety_constant: float = 1.0) -> float:
    """tau = safety_constant / N^{2(S(1+1/nu) + 1/nu)}; 1/N^{3S+1} for nu=2."""
    if N <= 0 or S < 0 or nu <= 0 or safety_constant <= 0:
        raise SplittingError("choose_tau needs positive inputs")
    exponent = 2 * (S * (1 + Fraction(1, nu)) + Fraction(1, nu))
    return float(safety_constant) / float(N) ** float(exponent)


def parity_shift(state, direction: int, axis: int = 0, grid_shape: tuple[int, ...] | None = None):
    """Cyclic shift of the accumulator, x -> x + direction along ``axis``.

    Returns a new StateVector (or array) and leaves the input untouched.
    """
    if direction not in (1, -1):
        raise SplittingError("direction must be +1 or -1")
    if isinstance(state, StateVector):
        grid = state.layout.grid_shape
        arr = state.amplitudes.reshape((state.layout.M,) + grid)
        moved = np.roll(arr, direction, axis=axis + 1).reshape(state.amplitudes.shape)
        return StateVector(moved, state.layout, list(state.stages) + [f"parity{direction:+d}"], dict(state.meta))
    arr = np.asarray(state)
    grid = grid_shape or (arr.shape[-1],)
    lead = arr.shape[:-1]
    moved = np.roll(arr.reshape(lead + tuple(grid)), direction, axis=len(lead) + axis)
    return moved.reshape(arr.shape)
