"""Bivariate REML meta-analysis of diagnostic accuracy with bootstrap inference for the SROC AUC."""

from .bootstrap import (BootstrapConfig, BootstrapRun, DaucTestResult, Variant, bootstrap_auc_ci,
                        bootstrap_compare_auc, bootstrap_influence_distribution, bootstrap_p_value,
                        percentile_interval, resample_replicate)
from .data import Correction, Dataset, LogitOutcome, OutcomeSet, Study2x2, parse_dataset, read_dataset, to_outcomes
from .errors import (BudgetExceededError, ConvergenceError, DataError, InsufficientStudiesError, SrocBootError,
                     SrocUndefinedError)
from .influence import InfluenceRow, flag_influential, leave_one_out_table
from .reml import (BivariateFit, BivariateParams, FitOptions, SummaryAccuracy, confidence_region, fit_reml,
                   gls_mean, restricted_log_likelihood, summary_accuracy, wald_compare_summary)
from .simulate import SimScenario, coverage_study, default_scenario, simulate_dataset
from .sroc import AucResult, SrocCurve, compute_auc, hsroc_params, sroc_sensitivity_at

__version__ = "0.1.0"
