"""Bin-counting chi-squared goodness-of-fit tests on the unit hypercube."""
from .binning import BinSpec, DomainError, SparseCounts, bin_index, count_bins, total_cells
from .calibration import (
    CalibrationConfig,
    Gamma2Statistic,
    MultiscaleMaxStatistic,
    NormalizedStatistic,
    monte_carlo_pvalue,
    one_sample_monte_carlo_test,
    permutation_multiscale,
    permutation_pvalue,
    permutation_test,
)
from .statistics import (
    ContractError,
    MultiscaleResult,
    SmoothnessParams,
    TestResult,
    UnequalSizesError,
    chi_squared_normalized,
    gamma_one,
    gamma_two,
    kappa_for,
    multiscale_test,
    one_sample_test,
    threshold_one,
    threshold_two,
    two_sample_test,
)

__version__ = "0.1.0"
