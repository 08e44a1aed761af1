"""Data models for configuration, records and reports."""
from .config_schemas import (
    MODULE_IDS,
    AblationConfig,
    EncoderConfig,
    GenSpec,
    ModelConfig,
    RunConfig,
    TrainConfig,
    VetoConfig,
)
from .data_schemas import DataManifest, NewsRecord, SplitInfo
from .report_schemas import AblationRow, EvalReport, ExplainReport, Metrics, RunSummary, TraceStep

__all__ = [
    "MODULE_IDS",
    "EncoderConfig",
    "ModelConfig",
    "TrainConfig",
    "AblationConfig",
    "VetoConfig",
    "GenSpec",
    "RunConfig",
    "NewsRecord",
    "SplitInfo",
    "DataManifest",
    "Metrics",
    "EvalReport",
    "TraceStep",
    "ExplainReport",
    "RunSummary",
    "AblationRow",
]
