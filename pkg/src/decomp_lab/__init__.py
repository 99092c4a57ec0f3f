"""Two-population mean-difference decompositions and misattribution diagnostics.

The library decomposes the gap in mean outcomes between two populations
into covariate-shift and conditional-outcome components over exact
finite-support distributions, implements measure-weighted functional
ANOVA and accumulated-local-effects decompositions, and provides
numerical diagnostics for when those decompositions blame covariate
shifts on the outcome model.
"""

from .measures import (
    DiscreteJoint,
    Grid,
    GridMismatchError,
    Marginal1D,
    SharedSupportError,
    align_supports,
    embed_on_grid,
    empirical_joint,
    expectation,
    gauss_hermite_marginal,
    hybrid_distribution,
    make_joint_pmf,
    make_product_distribution,
    marginal_of,
)
from .functions import (
    EvaluationError,
    ExpressionModel,
    FunctionModel,
    LinearModel,
    ParseError,
    TabulatedModel,
    differentiate,
    evaluate,
    evaluate_on_grid,
    fit_linear,
    format_expression,
    parse_expression,
    tabulated_model,
)
from .fanova import (
    ConstraintReport,
    Decomposition,
    component_expectation,
    default_subsets,
    fanova_generalized,
    fanova_recursive,
    fanova_uniform,
    reconstruction,
    verify_fanova_constraints,
)
from .ale import ale_decomposition, ale_main_effect
from .population_decomp import (
    BACKENDS,
    ImportanceReport,
    KOBReport,
    decompose,
    delta_x_term,
    importance_decompose,
    kob_decompose,
    verify_telescoping,
)
from .diagnostics import (
    AffineClassGapReport,
    DiagnosticsReport,
    JacobianProbe,
    ExpectedZeroCheck,
    WitnessResult,
    affine_class_gap,
    directional_jacobian_probe,
    expected_zero_check,
    misattribution_delta,
    witness_search,
)

__version__ = "0.1.0"
