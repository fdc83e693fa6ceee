"""Qini-based uplift regression.

Interaction logistic uplift models fitted by maximum likelihood or an
L1-penalized path, evaluated by Qini-type metrics, selected and refined by
two-stage selection, Latin hypercube search and Nelder-Mead search, with a
synthetic-data simulation harness for estimator comparisons.
"""

__version__ = "0.1.0"

from .data import (
    BinConstructionError,
    DataValidationError,
    FoldError,
    NumericalError,
    RandomSeed,
    UpliftCoefficients,
    UpliftDataset,
    UpliftError,
    as_seed,
    load_csv,
    predict_prob,
    predict_uplift,
    read_model,
    save_csv,
    uplift_scores,
    write_model,
)
from .metrics import (
    BinTable,
    EvaluationReport,
    QiniCurve,
    adjusted_qini,
    default_bins,
    evaluate,
    incremental_uplift,
    kendall_uplift_correlation,
    overall_uplift,
    qini_coefficient,
    qini_curve,
    resolve_bins,
    uplift_rmse,
)
from .glm import (
    FitDiagnostics,
    LassoPath,
    coefficient_covariance,
    fit_lasso_path,
    fit_mle,
    group_odds_ratio,
    lambda_sequence,
    odds_ratio,
)
from .search import (
    LhsConfig,
    MetricKind,
    NmOptions,
    SearchResult,
    latin_hypercube,
    lhs_search,
    nelder_mead,
    nelder_mead_search,
)
from .select import (
    CvTable,
    SelectionResult,
    cross_validated_select,
    loglik_cv_select,
    q_lasso_select,
    rank_of_lambda,
    stratified_folds,
)
from .datagen import (
    ESTIMATORS,
    ScenarioConfig,
    SimulationResult,
    SyntheticTruth,
    UpliftTree,
    build_truth,
    fit_uplift_tree,
    generate_synthetic,
    make_base_population,
    run_simulation,
)
