"""Deterministic simulator for asynchronous elastic-averaging training.

A single master aggregates the replicas of k workers through elastic
parameter exchanges. Workers run local SGD, momentum SGD, or a
Hessian-diagonal second-order optimizer between exchanges; scheduled
exchanges can be suppressed to model node failure, and a dynamic weighting
law protects the aggregated model from recovering stragglers.
"""

from .data import Dataset, PartitionPlan, load_idx, make_synthetic, next_batch, partition
from .elastic import (
    DistanceHistory,
    ElasticConfig,
    WeightPair,
    default_coeffs,
    elastic_exchange,
    map_h1,
    map_h2,
    raw_score,
    select_weights,
    update_history,
)
from .errors import (
    ConfigError,
    DataConsistencyError,
    FormatError,
    InsufficientHistoryError,
    NumericError,
    ShapeError,
)
from .model import (
    Batch,
    ModelSpec,
    ParamVector,
    gradient,
    hvp,
    init_params,
    logits,
    loss,
)
from .optim import (
    AdaHessianState,
    SgdState,
    adahessian_step,
    hutchinson_diag,
    rademacher_draw,
    sgd_step,
    spatial_average,
)
from .sim import (
    METHODS,
    MlpObjective,
    RoundRecord,
    RunMetrics,
    SimConfig,
    SimState,
    build,
    evaluate,
    iter_rounds,
    run,
)

__version__ = "0.1.0"

__all__ = [
    "AdaHessianState", "Batch", "ConfigError", "DataConsistencyError", "Dataset",
    "DistanceHistory", "ElasticConfig", "FormatError", "InsufficientHistoryError",
    "METHODS", "MlpObjective", "ModelSpec", "NumericError", "ParamVector",
    "PartitionPlan", "RoundRecord", "RunMetrics", "SgdState", "ShapeError",
    "SimConfig", "SimState", "WeightPair", "adahessian_step", "build",
    "default_coeffs", "elastic_exchange", "evaluate", "gradient", "hutchinson_diag",
    "hvp", "init_params", "iter_rounds", "load_idx", "logits", "loss", "make_synthetic",
    "map_h1", "map_h2", "next_batch", "partition", "rademacher_draw", "raw_score",
    "run", "select_weights", "sgd_step", "spatial_average", "update_history",
]
