"""
Team Strength Studio

Week-by-week offensive and defensive team strengths inferred from
football scorelines, with forecasts and baseline comparisons.
"""

__version__ = "0.1.0"

from .config import Config, RunConfig
from .domain import Cardinalities, Hyperparams, MatchRecord, ModelParams, Posterior, PredictionTriple, Schedule
from .graph_engine import build_graph, run_bp
from .ingest import bucket_weeks, parse_matches
from .predictor import predict_match, timeline, wdl
from .trainer import TrainConfig, make_hyperparams, train

__all__ = [
    "Config",
    "RunConfig",
    "Cardinalities",
    "Hyperparams",
    "MatchRecord",
    "ModelParams",
    "Posterior",
    "PredictionTriple",
    "Schedule",
    "build_graph",
    "run_bp",
    "bucket_weeks",
    "parse_matches",
    "predict_match",
    "timeline",
    "wdl",
    "TrainConfig",
    "make_hyperparams",
    "train",
]
