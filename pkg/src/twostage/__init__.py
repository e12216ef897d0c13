"""Sequential-design estimation of the location and value of a regression maximum."""

__version__ = "0.1.0"

from twostage.design import Domain, stage1_grid, stage2_design, stage2_zoom_level
from twostage.estimator import (
    DeltaRule,
    EstimateResult,
    EstimatorConfig,
    multi_stage_estimate,
    select_delta,
    two_stage_estimate,
)
from twostage.maximize import MaximizerConfig, maximize_over_cube
from twostage.multiindex import enumerate_index_set, holder_order, index_set_size
from twostage.oracle import SamplingOracle, get_test_function
from twostage.polynomial import PolynomialModel
from twostage.stage1 import SmootherConfig

__all__ = [
    "DeltaRule",
    "Domain",
    "EstimateResult",
    "EstimatorConfig",
    "MaximizerConfig",
    "PolynomialModel",
    "SamplingOracle",
    "SmootherConfig",
    "enumerate_index_set",
    "get_test_function",
    "holder_order",
    "index_set_size",
    "maximize_over_cube",
    "multi_stage_estimate",
    "select_delta",
    "stage1_grid",
    "stage2_design",
    "stage2_zoom_level",
    "two_stage_estimate",
]
