from .metrics import (
    DEFAULT_ALPHA_GRID,
    METRIC_COLUMNS,
    DiagnosticReport,
    ECDFBands,
    QuantileCoverage,
    Recovery,
    calibration_ecdf,
    calibration_ecdf_from_quantiles,
    calibration_error,
    calibration_log_gamma,
    compute_metrics,
    evaluation_grid,
    fractional_ranks,
    log_gamma,
    log_gamma_threshold,
    nrmse,
    posterior_contraction,
    recovery,
    recovery_from_estimates,
    zscore_contraction,
)
from .misspecification import mahalanobis_score, median_bandwidth, summary_mmd
from .plots import Figure, ecdf_figure, loss_figure, pairs_figure, recovery_figure, zscore_figure
