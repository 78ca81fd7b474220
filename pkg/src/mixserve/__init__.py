"""Mixed-resolution diffusion serving: patch batching, cache, scheduler, simulator."""

__version__ = "0.1.0"

from .cache import BlockCache, PredictorConfig
from .csp import CSPBatch, STANDARD_CLASSES, reassemble, split
from .engine import Engine, EngineConfig
from .latency import AnalyticPredictor, CostModelParams, MlpPredictor, step_latency
from .model import ModelConfig, denoise_batch, init_weights
from .scheduler import RequestMeta, Scheduler, SchedulerConfig
from .workload import WorkloadConfig, generate_trace

__all__ = [
    "AnalyticPredictor",
    "BlockCache",
    "CSPBatch",
    "CostModelParams",
    "Engine",
    "EngineConfig",
    "MlpPredictor",
    "ModelConfig",
    "PredictorConfig",
    "RequestMeta",
    "STANDARD_CLASSES",
    "Scheduler",
    "SchedulerConfig",
    "WorkloadConfig",
    "denoise_batch",
    "generate_trace",
    "init_weights",
    "reassemble",
    "split",
    "step_latency",
]
