"""amsplit: rare-event probability estimation by adaptive multilevel splitting.

The estimator keeps n replicas above a moving level, resamples the k lowest
at each iteration, and returns C (1 - k/n)^J once the k-th order statistic
crosses the threshold.  Alongside the simulator, the package ships an
analytic engine that reconstructs the estimator's characteristic function
at finite (n, k) and validates its Gaussian limit both numerically and by
simulation.
"""

from .sampling import (
    DistributionModel,
    DomainError,
    RngStream,
    exponential,
    lambda_transform,
    make_distribution,
    normal,
    order_statistic_cdf,
    order_statistic_pdf,
    sample_conditional,
    uniform,
)
from .ams import (
    AmsParams,
    AmsResult,
    BatchResult,
    InvalidParams,
    IterationCapExceeded,
    ReplicaEnsemble,
    expected_iterations,
    run_ams,
    run_ams_batch,
    run_ams_reference,
)
from .analysis import (
    CharacteristicSolution,
    ConvergenceFailure,
    CostComparison,
    DerivativeIdentityReport,
    K1ExactLaw,
    OdeCoefficients,
    RootAsymptoticsReport,
    SingularSystem,
    ThetaFunction,
    asymptotic_root_check,
    asymptotic_variance,
    characteristic_roots,
    confidence_interval,
    cost_comparison,
    derivative_identity_check,
    evaluate_chi,
    evaluate_phi,
    functional_equation_residual,
    k1_exact_law,
    ode_coefficients,
    solve_chi,
    theta_function,
)
from .stats import (
    ExperimentReport,
    NormalizedSample,
    empirical_char_function,
    ks_statistic,
    make_experiment_report,
    normal_cdf,
    normal_quantile,
    qq_data,
)

__version__ = "0.1.0"
