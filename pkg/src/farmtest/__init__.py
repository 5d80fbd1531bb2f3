"""Factor-adjusted robust multiple testing under heavy tails."""

from .covariance import adaptive_huber_covariance, sample_covariance, utype_covariance
from .exceptions import ConvergenceError, FarmTestError, StageError
from .factor import (EigDecomp, FactorFit, estimate_factors, estimate_loadings,
                     residual_variances, select_num_factors, symmetric_eig)
from .huber import (LocationEstimate, huber_location, huber_location_columns, huber_loss,
                    huber_pairwise_moment, huber_psi, huber_second_moment)
from .testing import (RobustConfig, TestResult, approx_fdp, critical_value, estimate_pi0,
                      farmtest, farmtest_split, farmtest_two_sample, naive_test,
                      std_normal_cdf, std_normal_ppf, test_statistics)
from .tuning import CvPlan, calibrate_config, cv_criterion, robustification_rate, select_constant

__version__ = "0.1.0"
