"""Classical simulation of quantum phase estimation for periodic differential-operator eigenproblems."""

__version__ = "0.1.0"

from .operators import (  # noqa: E402
    BudgetError,
    CoefficientFn,
    DiscretizedOperator,
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
from .solvers import (  # noqa: E402
    EigenPair,
    InitialGuess,
    eig_dense,
    eig_lowest_krylov,
    overlap,
    prolong_state,
    rayleigh_quotient,
)
from .registers import RegisterLayout, StateVector  # noqa: E402
from .splitting import (  # noqa: E402
    SplitPlan,
    SplitPart,
    UnitaryStep,
    choose_tau,
    exp_part,
    parity_shift,
    split_operator,
    splitting_error,
    strang_step,
    suzuki_step,
)
from .phase_estimation import (  # noqa: E402
    PhaseEstimateResult,
    controlled_powers,
    decode_phase,
    index_distribution_analytic,
    index_superposition,
    load_accumulator,
    measure_index,
    qft_index,
    run_phase_estimation,
)
from .cost import CostInputs, CostReport, cost_report, derive_M, gate_counts, qubit_count, rotation_accuracy  # noqa: E402
