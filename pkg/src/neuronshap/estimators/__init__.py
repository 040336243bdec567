"""Monte-Carlo, truncated and bandit Shapley estimators plus baselines."""

from .baselines import BASELINES, baseline_scores
from .bounds import bernstein_bounds, bernstein_half_width
from .core import (
    METHODS,
    Assignment,
    ConfigError,
    EstimatorConfig,
    ShapleyResult,
    ShapleyRun,
    WalkResult,
    mc_shapley,
    rank_values,
    stream_seeds,
    tmab_shapley,
    truncated_mc_shapley,
)
