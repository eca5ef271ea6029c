"""
Statevector simulation of eigenvalue estimation by phase estimation.

The state is an (M, N^D) array: row j is the accumulator slice paired with
index value j.  The pipeline is

    load -> uniform index superposition -> controlled powers U^j
         -> Fourier transform on the index -> measurement.

The index transform uses the kernel exp(-2 pi i l m / M) / sqrt(M), so an
eigenphase lambda tau lands near bin l = M lambda tau / (2 pi).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .operators import DiscretizedOperator
from .registers import RegisterLayout, StateVector
from .solvers import EigenPair, InitialGuess
from .splitting import SplitPlan, UnitaryStep, product_step

__all__ = [
    "PhaseEstimationError",
    "PhaseEstimateResult",
    "load_accumulator",
    "index_superposition",
    "controlled_powers",
    "controlled_powers_dense",
    "qft_index",
    "index_distribution_analytic",
    "peak_probability_bound",
    "measure_index",
    "decode_phase",
    "run_phase_estimation",
    "reflection_overlap",
]

NORM_TOL = 1e-10


class PhaseEstimationError(ValueError):
    pass


def _check_norm(state: StateVector, stage: str) -> None:
    nrm = state.norm()
    if abs(nrm - 1.0) > NORM_TOL:
        raise PhaseEstimationError(f"norm drifted to {nrm:.12f} after {stage}")


def load_accumulator(guess, layout: RegisterLayout) -> StateVector:
    """Write ``guess`` into the accumulator with the index register in |0>."""
    if isinstance(guess, InitialGuess):
        vec = guess.fine_vector
    elif isinstance(guess, EigenPair):
        vec = guess.vector
    else:
        vec = np.asarray(guess)
    vec = np.asarray(vec, dtype=complex).ravel()
    if vec.size != layout.side:
        raise PhaseEstimationError(f"vector of length {vec.size} does not fit accumulator of {layout.side}")
    nrm = np.linalg.norm(vec)
    if abs(nrm - 1.0) > NORM_TOL:
        raise PhaseEstimationError(f"initial state must be normalized, got norm {nrm:.6g}")
    amp = np.zeros((layout.M, layout.side), dtype=complex)
    amp[0] = vec
    return StateVector(amp, layout, ["load"])


def index_superposition(state: StateVector) -> StateVector:
    """Hadamards on every index qubit, starting from index |0>."""
    if np.any(state.amplitudes[1:]):
        raise PhaseEstimationError("index register is not in |0...0>")
    state.amplitudes[:] = state.amplitudes[0] / math.sqrt(state.layout.M)
    state.stages.append("superpose")
    _check_norm(state, "superpose")
    return state


def controlled_powers(state: StateVector, step: UnitaryStep) -> StateVector:
    """Apply U^j to index slice j by M-1 threshold sweeps.

    Sweep j' applies U once to every slice with j >= j', so slice j receives
    exactly j applications.
    """
    amp = state.amplitudes
    for jp in range(1, state.layout.M):
        step.apply(amp[jp:])
    state.stages.append("controlled-powers")
    state.meta.update(tau=step.tau, order=step.effective_order, shift=step.shift)
    _check_norm(state, "controlled-powers")
    return state


def controlled_powers_dense(state: StateVector, U: np.ndarray) -> StateVector:
    """Reference version using explicit matrix powers U^j per slice."""
    amp = state.amplitudes
    P = np.eye(U.shape[0], dtype=complex)
    for j in range(state.layout.M):
        amp[j] = P @ amp[j]
        P = U @ P
    state.stages.append("controlled-powers")
    return state


def _qft_gates(amp: np.ndarray, inverse: bool) -> np.ndarray:
    M = amp.shape[0]
    m = int(math.log2(M))
    if m == 0:
        return amp
    sign = 1.0 if inverse else -1.0
    rest = amp.shape[1:]
    # axis k of the reshaped array holds qubit m-1-k (most significant first)
    psi = amp.reshape((2,) * m + rest).copy()
    h = 1.0 / math.sqrt(2.0)

    def ax(q):
        return m - 1 - q

    for q in reversed(range(m)):
        a = np.take(psi, 0, axis=ax(q))
        b = np.take(psi, 1, axis=ax(q))
        psi = np.stack([(a + b) * h, (a - b) * h], axis=ax(q))
        for r in reversed(range(q)):
            phase = np.exp(sign * 1j * math.pi / 2 ** (q - r))
            idx = [slice(None)] * psi.ndim
            idx[ax(q)] = 1
            idx[ax(r)] = 1
            psi[tuple(idx)] *= phase
    # qubit order is reversed after the network
    perm = list(reversed(range(m))) + list(range(m, psi.ndim))
    return psi.transpose(perm).reshape(amp.shape)


def qft_index(state: StateVector, method: str = "fft", inverse: bool = False) -> StateVector:
    """Fourier transform of the index register.

    Forward kernel exp(-2 pi i l m / M)/sqrt(M); ``inverse`` uses the
    conjugate.  ``method='gates'`` applies Hadamard and controlled-phase
    gates plus a bit reversal and must agree with ``'fft'``.
    """
    amp = state.amplitudes
    if method == "fft":
        out = np.fft.ifft(amp, axis=0, norm="ortho") if inverse else np.fft.fft(amp, axis=0, norm="ortho")
    elif method == "gates":
        out = _qft_gates(amp, inverse)
    else:
        raise PhaseEstimationError(f"unknown QFT method {method!r}")
    state.amplitudes = np.ascontiguousarray(out)
    state.stages.append("iqft" if inverse else "qft")
    _check_norm(state, "qft")
    return state


def index_distribution_analytic(lambda_pi: float, tau: float, M: int) -> np.ndarray:
    """Closed-form bin probabilities for an eigenstate with phase lambda tau.

    p_l = sin^2(M x / 2) / (M^2 sin^2(x / 2)), x = 2 pi l / M - lambda tau,
    with the removable singularity set to 1.
    """
    phi = float(lambda_pi) * float(tau)
    if abs(phi) >= math.pi:
        raise PhaseEstimationError(f"|lambda tau| = {abs(phi):.4g} must be below pi")
    x = 2.0 * np.pi * np.arange(M) / M - phi
    den = np.sin(0.5 * x)
    num = np.sin(0.5 * M * x)
    out = np.ones(M)
    ok = np.abs(den) > 1e-15
    out[ok] = (num[ok] / (M * den[ok])) ** 2
    return out


def peak_probability_bound(M: int) -> float:
    """Lower bound on the peak-bin probability, 1/(M^2 sin^2(pi/2M))."""
    return 1.0 / (M * M * math.sin(math.pi / (2 * M)) ** 2) if M > 1 else 1.0


def decode_phase(l_prime, M: int, tau: float, shift: float = 0.0):
    """Eigenvalue estimate for bin ``l_prime`` and its half-width pi/(M tau).

    The phase 2 pi l/M is wrapped to (-pi, pi]; bins above M/2 decode to
    negative values.  ``shift`` is subtracted from the estimate.
    """
    if tau <= 0:
        raise PhaseEstimationError("tau must be positive")
    l_arr = np.asarray(l_prime)
    # wrap the integer bin first so on-grid values decode exactly
    l_arr = np.where(2 * l_arr > M, l_arr - M, l_arr)
    theta = 2.0 * np.pi * l_arr / M
    lam = theta / tau - shift
    half = math.pi / (M * tau)
    if np.ndim(lam) == 0:
        return float(lam), half
    return lam, half


def reflection_overlap(vec: np.ndarray, grid_shape: tuple[int, ...], center=0) -> complex:
    """<v | R v> with R: x -> (2 c - x) mod N on every axis."""
    v = np.asarray(vec).reshape(grid_shape)
    N = grid_shape[0]
    centers = np.broadcast_to(np.asarray(center), (len(grid_shape),))
    r = v
    for a, c in enumerate(centers):
        idx = (2 * int(c) - np.arange(N)) % N
        r = np.take(r, idx, axis=a)
    nrm = np.vdot(v, v).real
    return complex(np.vdot(v, r) / nrm) if nrm else 0j


@dataclass
class PhaseEstimateResult:
    """Outcome of one phase-estimation run.

    ``decoded`` holds one estimate per sample, or the argmax estimate when
    no samples were drawn.  ``state`` is the final statevector (kept for
    posterior queries; dropped by :meth:`to_dict`).
    """

    distribution: np.ndarray
    samples: np.ndarray
    seed: int | None
    decoded: np.ndarray
    half_width: float
    run_config: dict
    state: StateVector | None = field(default=None, repr=False)
    symmetry: complex | None = None

    def argmax(self) -> int:
        return int(np.argmax(self.distribution))

    def estimate(self) -> float:
        """Decoded eigenvalue of the most probable bin."""
        cfg = self.run_config
        return decode_phase(self.argmax(), cfg["M"], cfg["tau"], cfg.get("shift", 0.0))[0]

    def posterior_state(self, l: int) -> np.ndarray:
        """Renormalized accumulator after observing bin ``l``."""
        if self.state is None:
            raise PhaseEstimationError("state not retained")
        row = self.state.amplitudes[l]
        nrm = np.linalg.norm(row)
        if nrm == 0:
            raise PhaseEstimationError(f"bin {l} has zero probability")
        return row / nrm

    def to_dict(self) -> dict:
        sym = None if self.symmetry is None else [self.symmetry.real, self.symmetry.imag]
        return {
            "run_config": self.run_config,
            "distribution": self.distribution.tolist(),
            "samples": self.samples.tolist(),
            "seed": self.seed,
            "decoded": np.asarray(self.decoded).tolist(),
            "half_width": self.half_width,
            "argmax": self.argmax(),
            "symmetry": sym,
        }


def measure_index(state: StateVector, mode: str = "exact", count: int = 0, seed: int | None = None,
                  symmetry_center=None) -> PhaseEstimateResult:
    """Index marginal and optional seeded samples (inverse CDF).

    Raises if the index register has not been Fourier transformed.
    """
    if "qft" not in state.stages:
        raise PhaseEstimationError("measure_index called before qft_index")
    dist = state.index_marginal()
    total = dist.sum()
    if abs(total - 1.0) > 1e-9:
        raise PhaseEstimationError(f"distribution sums to {total}")
    dist = dist / total
    M = state.layout.M
    tau = state.meta.get("tau")
    shift = state.meta.get("shift", 0.0)
    if mode == "exact":
        samples = np.zeros(0, dtype=np.int64)
    elif mode == "sample":
        if count <= 0:
            raise PhaseEstimationError("sample mode needs count > 0")
        if seed is None:
            raise PhaseEstimationError("sample mode needs an explicit seed")
        rng = np.random.default_rng(seed)
        cdf = np.cumsum(dist)
        cdf[-1] = 1.0
        samples = np.searchsorted(cdf, rng.random(count), side="right").astype(np.int64)
    else:
        raise PhaseEstimationError(f"unknown measurement mode {mode!r}")
    if tau:
        bins = samples if samples.size else np.array([int(np.argmax(dist))])
        decoded, half = decode_phase(bins, M, tau, shift)
    else:
        decoded, half = np.zeros(0), float("nan")
    config = {"N": state.layout.N, "D": state.layout.dimension_D, "M": M, "tau": tau,
              "nu": state.meta.get("order"), "shift": shift, "mode": mode, "samples": int(count)}
    result = PhaseEstimateResult(dist, samples, seed, np.asarray(decoded), half, config, state)
    if symmetry_center is not None:
        result.symmetry = reflection_overlap(result.posterior_state(result.argmax()),
                                             state.layout.grid_shape, symmetry_center)
    return result


def run_phase_estimation(op: DiscretizedOperator, plan: SplitPlan, guess, M: int, mode: str = "exact", *,
                         tau: float | None = None, samples: int = 0, seed: int | None = None,
                         shift: float = 0.0, symmetry_center=None, step: UnitaryStep | None = None,
                         qft_method: str = "fft") -> PhaseEstimateResult:
    """Full pipeline: load, superpose, controlled powers, QFT, measure.

    ``tau`` defaults to ``plan.tau``.  A diagonal ``shift`` mu runs the
    estimation on L + mu I and is subtracted when decoding.
    """
    layout = RegisterLayout(op.N, op.dimension_D, M)
    if step is None:
        step = product_step(plan, tau if tau is not None else plan.tau, shift)
    state = load_accumulator(guess, layout)
    index_superposition(state)
    controlled_powers(state, step)
    qft_index(state, method=qft_method)
    result = measure_index(state, mode, samples, seed, symmetry_center)
    result.run_config.update(order_S=op.order_S, R=plan.R, qft=qft_method)
    return result

