"""Catastrophic health expenditure and out-of-pocket inequality from pooled survey samples."""

from .data_model import (
    DEFAULT_GROUPINGS,
    EpisodeRecord,
    GroupingSpec,
    HouseholdRecord,
    SurveyDataset,
    load_dataset,
    load_episodes,
    load_households,
    validate_dataset,
)
from .estimation import (
    CheEstimate,
    CheIncidenceEstimator,
    QuintileClassifier,
    QuintileCuts,
    assign_quintile,
    che_by_quintile,
    che_flag,
    che_incidence,
    component_shares,
    coverage_rate,
    quintile_cuts,
    subsample_se,
    weighted_proportion,
)
from .inequality import GiniDecomposer, GiniDecomposition, decompose, district_decomposition_table, weighted_gini
from .pooling import PoolabilityReport, chi_square_homogeneity, pool_datasets, poolability, runs_test, z_test_means
from .stats import across_district_ci, spearman, welch_t

__version__ = "0.1.0"
