"""Online PCA flows on the orthogonal group.

A library plus CLI around one family of matrix dynamics: the
orthogonality-preserving flow Q' = Q Sigma(A, Q) obtained from streaming
principal component iterations, its weighted-trace Lyapunov structure, the
exact solution through a triangular factorization, the leading-minor rank
scan that predicts which column converges to which eigenvector (and with
which sign), spectral-gap convergence rates, and the stochastic iterations
the flow idealizes.
"""

__version__ = "0.1.0"

from .closed_form import ClosedFormSolution, closed_form_q, diag_consistency_check, g_factor
from .energy import (
    EquilibriumElement,
    StabilityReport,
    classify_equilibrium,
    enumerate_equilibria,
    lyapunov_derivative,
    rayleigh,
    weighted_rayleigh,
    weighted_rayleigh_max,
    wielandt_hoffman_gap,
)
from .errors import (
    ConditioningError,
    ConfigError,
    ConvergenceError,
    DivergenceError,
    IntegrationError,
    MetricDegeneracyError,
    OjaflowError,
    PivotError,
    RankDeficiencyError,
    ShapeError,
    SigmaAmbiguityError,
    SymmetryError,
)
from .flows import (
    LLGField,
    SkewFieldSpec,
    StiefelPoint,
    TangentVector,
    WeightVector,
    brockett_field,
    componentwise_field,
    equilibrium_distance,
    hamiltonian_hat,
    is_equilibrium,
    llg_field_euclid,
    llg_field_tildeg,
    make_flow,
    metric_tildeg,
    nearest_signed_permutation,
    riccati_closed_form,
    riccati_field,
    sga_field,
    sga_update_field,
    sigma_bracket,
    t_matrix,
    tangent_projection,
)
from .integrate import (
    IntegratorConfig,
    LimitResult,
    RiccatiTrajectory,
    Trajectory,
    integrate,
    integrate_riccati,
    integrate_to_limit,
    rate_aware_max_time,
)
from .linalg import (
    SpectralMatrix,
    UpperTriangularFactor,
    gram_schmidt,
    matrix_exp_scaled,
    orthonormalize,
    submatrix_det,
    sym_eigendecomposition,
    ul_factor,
)
from .online import (
    EstimatorState,
    LearningSchedule,
    OnlineDiagnostics,
    SampleStream,
    alignment_error,
    alignment_targets,
    gso_step,
    run_online,
    sga_step,
)
from .stable_manifold import (
    LimitPrediction,
    RateVector,
    convergence_rates,
    is_stable_basin,
    predict_limit,
    rank_identity_check,
    sigma_invariance_check,
    sigma_permutation,
    verify_exponential,
    z_values,
)
