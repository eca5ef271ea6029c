"""Register layout and state container for the simulated quantum pipeline."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .operators import is_power_of_two

__all__ = ["RegisterError", "RegisterLayout", "StateVector", "MAX_AMPLITUDES"]

MAX_AMPLITUDES = 2 ** 24


class RegisterError(ValueError):
    pass


@dataclass(frozen=True)
class RegisterLayout:
    """Index register (m = log2 M qubits, most significant) then accumulator.

    The accumulator holds n = D log2 N qubits over a C-ordered N^D grid.
    Amplitude (j, x) lives at flat position j * N^D + x.
    """

    N: int
    dimension_D: int
    M: int

    def __post_init__(self):
        if not is_power_of_two(self.N) or self.N < 2:
            raise RegisterError(f"N must be a power of two >= 2, got {self.N}")
        if not is_power_of_two(self.M):
            raise RegisterError(f"M must be a power of two, got {self.M}")
        if self.dimension_D < 1:
            raise RegisterError("dimension_D must be >= 1")
        total = self.N ** self.dimension_D * self.M
        if total > MAX_AMPLITUDES:
            raise RegisterError(
                f"N^D * M = {self.N}^{self.dimension_D} * {self.M} = {total} amplitudes exceeds "
                f"the simulation guard of 2^24; reduce N or M"
            )

    @property
    def side(self) -> int:
        return self.N ** self.dimension_D

    @property
    def accumulator_qubits(self) -> int:
        return self.dimension_D * int(math.log2(self.N))

    @property
    def index_qubits(self) -> int:
        return int(math.log2(self.M))

    @property
    def size(self) -> int:
        return self.side * self.M

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return (self.N,) * self.dimension_D


@dataclass
class StateVector:
    """Complex amplitudes stored as an (M, N^D) array, index-major.

    ``stages`` lists the pipeline steps applied so far; ``meta`` collects
    parameters such as the step length and shift.
    """

    amplitudes: np.ndarray
    layout: RegisterLayout
    stages: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=complex)
        if amp.shape != (self.layout.M, self.layout.side):
            raise RegisterError(f"amplitudes shape {amp.shape} != {(self.layout.M, self.layout.side)}")
        self.amplitudes = amp

    @property
    def flat(self) -> np.ndarray:
        return self.amplitudes.ravel()

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def index_marginal(self) -> np.ndarray:
        return np.sum(np.abs(self.amplitudes) ** 2, axis=1)

    def accumulator_marginal(self) -> np.ndarray:
        return np.sum(np.abs(self.amplitudes) ** 2, axis=0)

    def copy(self) -> "StateVector":
        return StateVector(self.amplitudes.copy(), self.layout, list(self.stages), dict(self.meta))
