"""Distribution-free signed sequential rank Shiryaev-Roberts and CUSUM change detection."""

from .calibrate import (CalibrationError, CalibrationResult, ControlLimitTable, estimate_icarl,
                        find_control_limit, find_control_limits, misspecification_experiment,
                        reference_value, two_sided_limit)
from .changepoint import ChangePointEstimate, estimate_tau
from .distributions import DistributionSpec, Theta0Value, estimate_theta0_phase1, sample, theta0
from .montecarlo import RunLengthSummary
from .ranks import VAN_DER_WAERDEN, WILCOXON, ScoreFunction, SequentialRankState, XiStream
from .runlength import ChangeScenario, cadt, delay_curve, normal_approx_cadt, sadt
from .schemes import Detector, DetectorConfig, run, sr_closed_form, two_sided_run

__version__ = "0.1.0"
