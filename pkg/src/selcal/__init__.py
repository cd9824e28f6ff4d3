"""Calibrated uncertainty thresholds for selective prediction with a bounded failure rate."""

__version__ = "0.1.0"

from .bounds import beta_inv_upper, binomial_log_cdf, cp_upper, hoeffding_upper, upper_bound  # noqa: E402
from .calibration import build_curve, calibrate, ecfr, select_threshold  # noqa: E402
from .model import (  # noqa: E402
    BoundCurve,
    BoundMethod,
    CalibrationOutcome,
    EvidenceRecord,
    RiskConfig,
    ScoredRecord,
    TrialReport,
    validate_record,
)

__all__ = [
    "BoundCurve", "BoundMethod", "CalibrationOutcome", "EvidenceRecord", "RiskConfig",
    "ScoredRecord", "TrialReport", "validate_record", "beta_inv_upper", "binomial_log_cdf",
    "build_curve", "calibrate", "cp_upper", "ecfr", "hoeffding_upper", "select_threshold",
    "upper_bound",
]
