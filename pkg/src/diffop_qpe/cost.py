"""
Asymptotic cost formulas for the quantum estimator and a classical baseline.

All hidden constants default to 1; the formulas are instantiated, not
measured.  Large counts are carried as base-2 logarithms so they never
overflow; values at or above 2^63 are displayed as ``2^x``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

from .operators import is_power_of_two

__all__ = [
    "CostError",
    "CostInputs",
    "CostReport",
    "order_exponent",
    "threshold_D",
    "derive_M",
    "log2_derived_M",
    "qubit_count",
    "gate_counts",
    "rotation_accuracy",
    "particle_statement",
    "cost_report",
    "format_count",
]

SYMBOLIC_LOG2 = 63


class CostError(ValueError):
    pass


def order_exponent(S: int, nu: int) -> Fraction:
    """2 (S + 1)(1 + 1/nu), the exponent of N in the required M."""
    return 2 * (S + 1) * (1 + Fraction(1, nu))


def threshold_D(S: int, nu: int) -> Fraction:
    """Dimension above which the quantum cost wins asymptotically."""
    return order_exponent(S, nu)


def _as_fraction(x) -> Fraction:
    return Fraction(x) if not isinstance(x, float) else Fraction(x).limit_denominator(10 ** 12)


def log2_derived_M(N, S: int, nu: int, constant=1) -> int:
    """Exact ceil(log2(constant * N^{2(S+1)(1+1/nu)}))."""
    if N < 2 or S < 0 or nu not in (2, 4) or constant <= 0:
        raise CostError("derive_M needs N >= 2, S >= 0, nu in {2, 4}, constant > 0")
    e = order_exponent(S, nu)
    c = _as_fraction(constant)
    # 2^(k q) >= c^q N^p  with e = p / q
    p, q = e.numerator, e.denominator
    lhs_target = c ** q * Fraction(int(N)) ** p
    k = math.floor(float(e) * math.log2(N) + math.log2(float(c))) - 1
    while Fraction(2) ** (k * q) < lhs_target:
        k += 1
    while k > 0 and Fraction(2) ** ((k - 1) * q) >= lhs_target:
        k -= 1
    return max(k, 0)


def derive_M(N, S: int, nu: int, constant=1) -> int:
    """Index register size M = nextpow2(constant * N^{2(S+1)(1+1/nu)})."""
    return 2 ** log2_derived_M(N, S, nu, constant)


def format_count(log2_value: float) -> str | float:
    """Plain number below 2^63, otherwise the string '2^x'."""
    if log2_value >= SYMBOLIC_LOG2:
        return f"2^{log2_value:.6g}"
    value = 2.0 ** log2_value
    return float(round(value)) if abs(value - round(value)) < 1e-9 * max(1.0, value) else value


@dataclass(frozen=True)
class CostInputs:
    """Problem size and model parameters.

    ``M`` is derived from (N, S, nu, constants) when not supplied.
    ``coefficient_bits`` and ``threshold_ancilla`` are the ancilla allowance
    added to the qubit count.
    """

    N: int
    D: int = 1
    S: int = 1
    nu: int = 2
    c: float = 3.0
    M: int | None = None
    N0: int | None = None
    constants: float = 1.0
    coefficient_bits: int = 0
    threshold_ancilla: bool = False

    def __post_init__(self):
        if not is_power_of_two(self.N) or self.N < 2:
            raise CostError(f"N must be a power of two >= 2, got {self.N}")
        if self.N0 is not None and (not is_power_of_two(self.N0) or self.N0 > self.N):
            raise CostError(f"N0 must be a power of two <= N, got {self.N0}")
        if self.M is not None and not is_power_of_two(self.M):
            raise CostError(f"M must be a power of two, got {self.M}")
        if self.nu not in (2, 4):
            raise CostError(f"nu must be 2 or 4, got {self.nu}")
        if self.D < 1 or self.S < 0 or self.c <= 0 or self.constants <= 0 or self.coefficient_bits < 0:
            raise CostError("D >= 1, S >= 0, c > 0, constants > 0 and coefficient_bits >= 0 required")

    @property
    def log2N(self) -> int:
        return int(math.log2(self.N))

    @property
    def log2M(self) -> int:
        if self.M is not None:
            return int(math.log2(self.M))
        return log2_derived_M(self.N, self.S, self.nu, self.constants)

    @property
    def ancillas(self) -> int:
        return self.coefficient_bits + (1 if self.threshold_ancilla else 0)


def qubit_count(inputs: CostInputs) -> int:
    """D log2 N accumulator + log2 M index + ancillas."""
    return inputs.D * inputs.log2N + inputs.log2M + inputs.ancillas


def _log2_M_formula(inputs: CostInputs) -> float:
    if inputs.M is not None:
        return math.log2(inputs.M)
    return float(order_exponent(inputs.S, inputs.nu)) * inputs.log2N + math.log2(inputs.constants)


def gate_counts(inputs: CostInputs) -> dict:
    """Quantum and classical gate-count formulas and their ratio.

    aleph_Q = M log2^c N with M the unrounded formula value (or the supplied
    M); aleph_C = N^D log2 N.  Returned as base-2 logarithms plus display
    values.
    """
    lg = math.log2(inputs.log2N) if inputs.log2N > 1 else 0.0
    log2_q = _log2_M_formula(inputs) + inputs.c * lg
    log2_c = inputs.D * inputs.log2N + lg
    log2_ratio = log2_c - log2_q
    return {
        "log2_aleph_Q": log2_q,
        "log2_aleph_C": log2_c,
        "log2_ratio": log2_ratio,
        "aleph_Q": format_count(log2_q),
        "aleph_C": format_count(log2_c),
        "ratio": 2.0 ** log2_ratio if log2_ratio < 1000 else format_count(log2_ratio),
    }


def rotation_accuracy(N, S: int) -> dict:
    """Required single-qubit rotation accuracy 1/N^{S+3}.

    Also returns the phase magnitude floor 1/N^{S+1} and the relative
    eigenvalue accuracy 1/N^2 it corresponds to.
    """
    if N < 2 or S < 0:
        raise CostError("rotation_accuracy needs N >= 2 and S >= 0")
    return {
        "rotation": float(Fraction(1, int(N) ** (S + 3))),
        "phase_floor": float(Fraction(1, int(N) ** (S + 1))),
        "relative_eigenvalue": float(Fraction(1, int(N) ** 2)),
    }


def particle_statement(S: int, nu: int, coords_per_particle: int = 3) -> str:
    thr = threshold_D(S, nu)
    per = thr / coords_per_particle
    per_s = str(per.numerator) if per.denominator == 1 else f"{float(per):.4g}"
    thr_s = str(thr.numerator) if thr.denominator == 1 else f"{float(thr):.4g}"
    return (f"advantage requires D > {thr_s}, i.e. D/{coords_per_particle} > {per_s} particles "
            f"in {coords_per_particle} dimensions")


@dataclass(frozen=True)
class CostReport:
    inputs: dict
    qubits_quantum: int
    gates_quantum: float | str
    bits_classical: float | str
    gates_classical: float | str
    ratio: float | str
    log2_ratio: float
    threshold_D: str
    advantage: bool
    rotation_accuracy: float
    phase_floor: float
    relative_eigenvalue_accuracy: float
    M: int | str
    line_items: dict = field(default_factory=dict)
    constants_note: str = "all asymptotic constants = 1 unless set in inputs"

    def to_dict(self) -> dict:
        return asdict(self)


def cost_report(inputs: CostInputs) -> CostReport:
    g = gate_counts(inputs)
    thr = threshold_D(inputs.S, inputs.nu)
    rot = rotation_accuracy(inputs.N, inputs.S)
    log2M = inputs.log2M
    items = {
        "index_sweeps": format_count(float(log2M)),
        "threshold_compare_gates": format_count(log2M + math.log2(max(log2M, 1))),
    }
    if inputs.N0 is not None:
        n0 = int(math.log2(inputs.N0))
        lg0 = math.log2(n0) if n0 > 1 else 0.0
        items["initial_state_classical"] = format_count(inputs.D * n0 + lg0)
        items["initial_state_loading"] = format_count(float(inputs.D * n0))
    return CostReport(
        inputs=asdict(inputs),
        qubits_quantum=qubit_count(inputs),
        gates_quantum=g["aleph_Q"],
        bits_classical=format_count(float(inputs.D * inputs.log2N)),
        gates_classical=g["aleph_C"],
        ratio=g["ratio"],
        log2_ratio=g["log2_ratio"],
        threshold_D=str(thr),
        advantage=inputs.D > thr,
        rotation_accuracy=rot["rotation"],
        phase_floor=rot["phase_floor"],
        relative_eigenvalue_accuracy=rot["relative_eigenvalue"],
        M=format_count(float(log2M)) if log2M >= SYMBOLIC_LOG2 else 2 ** log2M,
        line_items=items,
    )
