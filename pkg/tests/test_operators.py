import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from diffop_qpe.operators import (
    BudgetError,
    CoefficientFn,
    DomainMask,
    OperatorError,
    OperatorSpec1D,
    TensorOperatorSpec,
    apply_domain_mask,
    build_operator,
    build_operator_1d,
    build_operator_tensor,
    finite_difference_matrix,
    reciprocal_matrix,
    sample_coefficients,
)
from diffop_qpe.solvers import eig_dense


def circulant_spectrum(N):
    k = np.arange(N)
    return np.sort(4 * N ** 2 * np.sin(np.pi * k / N) ** 2)


def laplacian(N, a1=1.0):
    return build_operator_1d(OperatorSpec1D.from_constants(0.0, a1), N)


def variable_spec():
    return OperatorSpec1D(1, (CoefficientFn.constant(0.0), CoefficientFn.fourier(2.0, 1.0, 0.0)))


# --- finite differences ------------------------------------------------------

def test_fd_zeroth_order_is_identity():
    assert np.array_equal(finite_difference_matrix(0, 4).toarray(), np.eye(4))


def test_fd_first_order_transcription():
    expected = np.array([[-4, 4, 0, 0], [0, -4, 4, 0], [0, 0, -4, 4], [4, 0, 0, -4]], dtype=float)
    assert np.array_equal(finite_difference_matrix(1, 4).toarray(), expected)


def test_fd_plane_wave_multiplier():
    N = 8
    x = np.arange(N) / N
    v = np.exp(2j * np.pi * x)
    out = finite_difference_matrix(1, N) @ v
    mult = N * (np.exp(2j * np.pi / N) - 1)
    assert np.allclose(out, mult * v, atol=1e-12)
    # modulus is 2 pi (1 - O(1/N^2)); the phase carries an O(1/N) term
    rel = abs(abs(mult) / (2 * np.pi) - 1)
    assert rel == pytest.approx(np.pi ** 2 / (6 * N ** 2), rel=0.05)


def test_fd_higher_order_is_power():
    d1 = finite_difference_matrix(1, 16).toarray()
    assert np.allclose(finite_difference_matrix(3, 16).toarray(), d1 @ d1 @ d1)


@pytest.mark.parametrize("N", [0, 1, 3, 6, 12, 2.0])
def test_fd_rejects_non_power_of_two(N):
    with pytest.raises(OperatorError):
        finite_difference_matrix(1, N)


def test_fd_rejects_negative_order():
    with pytest.raises(OperatorError):
        finite_difference_matrix(-1, 8)


# --- coefficients ------------------------------------------------------------

def test_constant_sampling_both_modes():
    c = CoefficientFn.constant(3.0)
    for mode in ("spectral", "pointwise"):
        assert np.array_equal(sample_coefficients(c, 16, mode), np.full(16, 3.0))


def test_bandlimited_spectral_sampling_is_exact():
    c = CoefficientFn.fourier(0.0, 1.0, 0.0)
    assert np.allclose(sample_coefficients(c, 8), np.cos(2 * np.pi * np.arange(8) / 8), atol=1e-14)


def test_triangle_wave_spectral_vs_pointwise_tail_bound():
    # triangle wave |x - 1/2| style series with odd harmonics 1/k^2
    K = 31
    params = [0.25]
    for k in range(1, K + 1):
        params += [2.0 / (np.pi * k) ** 2 if k % 2 else 0.0, 0.0]
    c = CoefficientFn("fourier-series", tuple(params))
    N = 8
    diff = np.abs(sample_coefficients(c, N, "spectral") - sample_coefficients(c, N, "pointwise"))
    tail = sum(abs(params[2 * k - 1]) for k in range(N // 2 + 1, K + 1))
    # aliasing of the discarded tail is bounded by its absolute sum; Nyquist bin counts half
    assert diff.max() <= tail + abs(params[2 * (N // 2) - 1]) / 2 + 1e-14
    assert diff.max() > 0


def test_polynomial_periodicity_check():
    # x^2 (1-x)^2: value and first two derivatives match at 0 and 1, the third does not
    p = CoefficientFn("polynomial-in-x", (0.0, 0.0, 1.0, -2.0, 1.0))
    assert p.smoothness_order == 2
    with pytest.raises(OperatorError):
        CoefficientFn("polynomial-in-x", (0.0, 1.0))
    with pytest.raises(OperatorError):
        CoefficientFn("polynomial-in-x", (0.0, 0.0, 1.0, -2.0, 1.0), smoothness_order=3)


def test_polynomial_fourier_coefficients_match_quadrature():
    p = CoefficientFn("polynomial-in-x", (1.0, 0.0, 1.0, -2.0, 1.0))
    x = (np.arange(4096) + 0.5) / 4096
    vals = p(x)
    got = p.fourier_coefficients(3)
    for k in range(-3, 4):
        ref = np.mean(vals * np.exp(-2j * np.pi * k * x))
        assert abs(got[k + 3] - ref) < 1e-7


def test_coefficient_rejections():
    with pytest.raises(OperatorError):
        CoefficientFn("gaussian", (1.0,))
    with pytest.raises(OperatorError):
        CoefficientFn("fourier-series", (1.0, 2.0))
    with pytest.raises(OperatorError):
        CoefficientFn("constant", (float("nan"),))


def test_spec_requires_matching_coefficients():
    with pytest.raises(OperatorError):
        OperatorSpec1D(1, (CoefficientFn.constant(1.0),))
    x2 = CoefficientFn("polynomial-in-x", (0.0, 0.0, 1.0, -2.0, 1.0))
    with pytest.raises(OperatorError):
        OperatorSpec1D(3, (CoefficientFn.constant(0.0),) * 3 + (x2,))


# --- 1D assembly -------------------------------------------------------------

def test_s0_identity():
    op = build_operator_1d(OperatorSpec1D.from_constants(1.0), 8)
    assert np.array_equal(op.dense(), np.eye(8))


def test_laplacian_closed_form_n8():
    w = np.linalg.eigvalsh(laplacian(8).dense())
    assert np.allclose(w, circulant_spectrum(8), rtol=1e-9, atol=1e-9)
    assert w[1] == pytest.approx(37.49, abs=5e-3)


@pytest.mark.parametrize("N", [4, 8, 16, 32])
def test_circulant_oracle(N):
    w = np.linalg.eigvalsh(laplacian(N).dense())
    ref = circulant_spectrum(N)
    assert np.all(np.abs(w - ref) <= 1e-9 * np.maximum(ref, 1.0))


def test_constant_vector_annihilated():
    op = build_operator_1d(variable_spec(), 16)
    v = np.ones(16) / 4.0
    assert abs(v @ (op.matrix @ v)) < 1e-10


def test_wraparound_corner_entries():
    m = laplacian(8).dense()
    assert m[0, 7] == -64.0 and m[7, 0] == -64.0


def test_spec_grid_mismatch_rejected():
    with pytest.raises(OperatorError):
        build_operator_1d(OperatorSpec1D.from_constants(0, 0, 1), 4)


coef_strategy = st.lists(st.floats(-1.0, 1.0), min_size=1, max_size=5).map(
    lambda xs: [abs(xs[0]) + 1.5] + xs[1:] + ([0.0] if len(xs) % 2 == 0 else []))


@settings(max_examples=40, deadline=None)
@given(a0=coef_strategy, a1=coef_strategy, logN=st.integers(2, 6), mode=st.sampled_from(["spectral", "pointwise"]))
def test_symmetry_and_psd_property(a0, a1, logN, mode):
    spec = OperatorSpec1D(1, (CoefficientFn("fourier-series", tuple(a0)), CoefficientFn("fourier-series", tuple(a1))))
    N = 2 ** logN
    op = build_operator_1d(spec, N, mode)
    m = op.matrix
    scale = max(1.0, abs(m).max())
    assert abs(m - m.T).max() <= 1e-13 * scale
    a0s, a1s = sample_coefficients(spec.coefficients[0], N, mode), sample_coefficients(spec.coefficients[1], N, mode)
    if a0s.min() >= 0 and a1s.min() >= 0:
        assert np.linalg.eigvalsh(op.dense()).min() >= -1e-9 * scale
    # Gershgorin bound dominates the spectral radius
    assert np.abs(np.linalg.eigvalsh(op.dense())).max() <= op.norm_estimate * (1 + 1e-12)


def test_convergence_law_slope():
    Ns = np.array([8, 16, 32, 64, 128])
    err = [abs(np.linalg.eigvalsh(laplacian(N).dense())[1] - (2 * np.pi) ** 2) / (2 * np.pi) ** 2 for N in Ns]
    slope = np.polyfit(np.log(Ns), np.log(err), 1)[0]
    assert abs(slope + 2) <= 0.2
    ratios = np.array(err[:-1]) / np.array(err[1:])
    assert np.all(np.abs(ratios / 4 - 1) <= 0.2)


@pytest.mark.parametrize("S", [1, 2])
def test_spectral_radius_growth(S):
    Ns = np.array([16, 32, 64, 128])
    coeffs = [0.0] * S + [1.0]
    rad = [np.abs(np.linalg.eigvalsh(build_operator_1d(OperatorSpec1D.from_constants(*coeffs), N).dense())).max()
           for N in Ns]
    slope = np.polyfit(np.log(Ns), np.log(rad), 1)[0]
    assert abs(slope - 2 * S) <= 0.1


# --- tensor assembly ---------------------------------------------------------

def lap_2d_spec():
    d2 = OperatorSpec1D.from_constants(0.0, 1.0)
    one = OperatorSpec1D.from_constants(1.0)
    return TensorOperatorSpec(2, ((d2, one), (one, d2)))


def test_kronecker_sum_spectrum():
    N = 4
    w = np.sort(np.linalg.eigvalsh(build_operator_tensor(lap_2d_spec(), N).dense()))
    one_d = circulant_spectrum(N)
    ref = np.sort((one_d[:, None] + one_d[None, :]).ravel())
    assert np.allclose(w, ref, atol=1e-9 * ref.max())


def test_tensor_d1_matches_1d():
    spec = variable_spec()
    a = build_operator_tensor(TensorOperatorSpec(1, ((spec,),)), 16).matrix
    b = build_operator_1d(spec, 16).matrix
    assert abs(a - b).max() == 0


def test_tensor_identity():
    one = OperatorSpec1D.from_constants(1.0)
    op = build_operator_tensor(TensorOperatorSpec(2, ((one, one),)), 4)
    assert np.array_equal(op.dense(), np.eye(16))


def test_tensor_axis_zero_most_significant():
    d2 = OperatorSpec1D.from_constants(0.0, 1.0)
    one = OperatorSpec1D.from_constants(1.0)
    op = build_operator_tensor(TensorOperatorSpec(2, ((d2, one),)), 4)
    # coupling along axis 0 connects flat indices 4 apart
    m = op.dense()
    assert m[0, 4] != 0 and m[0, 1] == 0


def test_tensor_budget_rejection():
    one = OperatorSpec1D.from_constants(1.0)
    spec = TensorOperatorSpec(3, ((one, one, one),))
    with pytest.raises(BudgetError, match="grid points"):
        build_operator_tensor(spec, 256)


def test_tensor_structure_metadata():
    op = build_operator_tensor(lap_2d_spec(), 8)
    assert op.structure.orders == ((1, 0), (0, 1))
    assert op.structure.bandwidth_volume == 3
    assert op.order_S == 1


def test_tensor_spec_validation():
    d2 = OperatorSpec1D.from_constants(0.0, 1.0)
    with pytest.raises(OperatorError):
        TensorOperatorSpec(2, ((d2,),))
    with pytest.raises(OperatorError):
        TensorOperatorSpec(1, ())


# --- masks -------------------------------------------------------------------

def test_mask_all_true_unchanged():
    op = laplacian(8)
    m = apply_domain_mask(op, DomainMask.from_predicate(lambda x: True, 8))
    assert abs(m.matrix - op.matrix).max() == 0
    assert m.retained.all()


def test_mask_half_domain_matches_open_chain():
    op = laplacian(8)
    masked = apply_domain_mask(op, DomainMask.from_predicate(lambda x: x < 4, 8))
    block = masked.retained_matrix().toarray()
    # the retained rows keep their full diagonal from the periodic stencil
    full = op.dense()[:4, :4]
    assert np.array_equal(block, full)
    assert block[0, 3] == 0 and block[3, 0] == 0
    w = [p.value for p in eig_dense(masked)]
    assert np.allclose(w, np.linalg.eigvalsh(full), atol=1e-10)


def test_mask_single_point_principal_submatrix():
    op = build_operator_1d(variable_spec(), 8)
    masked = apply_domain_mask(op, DomainMask.from_predicate(lambda x: x != 5, 8))
    keep = [i for i in range(8) if i != 5]
    assert np.array_equal(masked.retained_matrix().toarray(), op.dense()[np.ix_(keep, keep)])
    assert masked.retained.sum() == 7


def test_mask_no_coupling_across_cut():
    op = build_operator_tensor(lap_2d_spec(), 8)
    mask = DomainMask.from_predicate(lambda x, y: (x - 3.5) ** 2 + (y - 3.5) ** 2 < 9, 8, 2)
    masked = apply_domain_mask(op, mask)
    coo = masked.matrix.tocoo()
    keep = mask.retained
    assert np.all(keep[coo.row] & keep[coo.col])
    assert abs(masked.matrix - masked.matrix.T).max() == 0


def test_mask_errors():
    op = laplacian(8)
    with pytest.raises(OperatorError):
        apply_domain_mask(op, DomainMask.from_predicate(lambda x: False, 8))
    with pytest.raises(OperatorError):
        apply_domain_mask(op, DomainMask.from_predicate(lambda x: True, 16))


def test_mask_impure_predicate_rejected():
    calls = iter(range(10 ** 6))
    with pytest.raises(OperatorError, match="pure"):
        DomainMask.from_predicate(lambda x: next(calls) < 8, 8)


# --- reciprocal space --------------------------------------------------------

def test_reciprocal_identity():
    assert np.allclose(reciprocal_matrix(OperatorSpec1D.from_constants(1.0), 8), np.eye(8))


def test_reciprocal_laplacian_diagonal():
    m = reciprocal_matrix(OperatorSpec1D.from_constants(0.0, 1.0), 8)
    k = np.arange(-4, 4)
    assert np.allclose(m, np.diag((2 * np.pi * k) ** 2))


def test_reciprocal_hermitian_and_rayleigh_crosscheck():
    spec = variable_spec()
    m = reciprocal_matrix(spec, 16)
    assert np.allclose(m, m.conj().T, atol=1e-12)
    # lowest eigenvalues of the Galerkin matrix approach the discretized ones from the continuum side
    w_rec = np.linalg.eigvalsh(m)
    w_fd = np.linalg.eigvalsh(build_operator_1d(spec, 128).dense())
    assert abs(w_rec[1] - w_fd[1]) / w_rec[1] < 1e-3


def test_build_operator_dispatch():
    assert build_operator(OperatorSpec1D.from_constants(1.0), 4).side == 4
    with pytest.raises(OperatorError):
        build_operator("nope", 4)


def test_summary_fields():
    s = laplacian(8).summary()
    assert s["max_asymmetry"] == 0.0 and s["nnz"] == 24 and s["order_S"] == 1
    assert sp.issparse(laplacian(8).matrix)
