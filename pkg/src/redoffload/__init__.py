"""Trace-driven simulation and control of redundant task offloading to edge servers."""

__version__ = "0.1.0"

from .errors import (BufferNotReadyError, ConfigError, ContractViolationError, DegenerateLabelsError,
                     DimensionError, EmptyInputError, InsufficientHistoryError, IntegrityError,
                     OffloadError, SchemaError, TraceValueError, TrainingDivergenceError)
from .serverset import ServerSet
from .trace import (SyntheticConfig, TraceDataset, calibrated_config, generate_synthetic, load_trace,
                    save_trace, trace_stats)
from .features import FeatureCatalog, FeatureState, StateBuilder, build_state
from .myopic import MyopicController, WindowPredictorConfig, select_min_cardinality, train_predictor
from .drl import CostParams, DRLController, QAgent, TrainSchedule, cost, train_agent
from .sim import SimResult, rtop_accounting, run_episode

__all__ = [
    "BufferNotReadyError", "ConfigError", "ContractViolationError", "DegenerateLabelsError",
    "DimensionError", "EmptyInputError", "InsufficientHistoryError", "IntegrityError", "OffloadError",
    "SchemaError", "TraceValueError", "TrainingDivergenceError", "ServerSet", "SyntheticConfig",
    "TraceDataset", "calibrated_config", "generate_synthetic", "load_trace", "save_trace", "trace_stats",
    "FeatureCatalog", "FeatureState", "StateBuilder", "build_state", "MyopicController",
    "WindowPredictorConfig", "select_min_cardinality", "train_predictor", "CostParams", "DRLController",
    "QAgent", "TrainSchedule", "cost", "train_agent", "SimResult", "rtop_accounting", "run_episode",
]
