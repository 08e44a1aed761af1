"""Schemas for evaluation reports, decision traces and run summaries."""
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field


class Metrics(BaseModel):
    """Binary classification metrics with class 1 (fake) as the positive class."""

    accuracy: float = Field(..., ge=0.0, le=1.0)
    precision: float = Field(..., ge=0.0, le=1.0)
    recall: float = Field(..., ge=0.0, le=1.0)
    f1: float = Field(..., ge=0.0, le=1.0)
    tp: int = Field(..., ge=0)
    fp: int = Field(..., ge=0)
    tn: int = Field(..., ge=0)
    fn: int = Field(..., ge=0)

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


class EvalReport(BaseModel):
    """Content of ``eval.json``."""

    model: str
    data: str
    use_veto: bool
    records: int
    metrics: Metrics
    modules: Dict[str, Metrics] = Field(
        default_factory=dict, description="Per-module head metrics (sigmoid(O_m) > 0.5)"
    )
    mix: Metrics = Field(..., description="Metrics of sigmoid(O_mix) > 0.5 alone")
    veto_overrides: int = Field(..., ge=0, description="Records where the veto label differs from O_mix")


class TraceStep(BaseModel):
    module: Literal["ip", "is", "t", "mm"]
    confidence: float = Field(..., ge=0.0, le=1.0)
    rule: Literal["R2", "R3", "R4"]
    p_mix_after: float = Field(..., ge=0.0, le=1.0)


class ExplainReport(BaseModel):
    """Machine-readable decision trace for one record."""

    record_id: str
    label: Optional[int] = Field(None, description="Ground-truth label when known")
    predicted_label: int = Field(..., ge=0, le=1)
    theta_high: float
    theta_low: float
    rule3_reading: Literal["prose", "formula"]
    initial_p_mix: float = Field(..., ge=0.0, le=1.0)
    final_p_mix: float = Field(..., ge=0.0, le=1.0)
    majority_class: int = Field(..., ge=0, le=1)
    tie: bool
    module_confidences: Dict[str, float]
    consistency_confidence: float = Field(..., ge=0.0, le=1.0)
    steps: List[TraceStep]
    summary: List[str] = Field(..., description="One human-readable line per rule firing")

    model_config = {
        "json_schema_extra": {
            "example": {
                "record_id": "test-00003",
                "label": 1,
                "predicted_label": 1,
                "theta_high": 0.9,
                "theta_low": 0.1,
                "rule3_reading": "prose",
                "initial_p_mix": 0.7,
                "final_p_mix": 0.95,
                "majority_class": 1,
                "tie": False,
                "module_confidences": {"ip": 0.6, "is": 0.55, "t": 0.95, "mm": 0.5},
                "consistency_confidence": 0.2,
                "steps": [
                    {"module": "ip", "confidence": 0.6, "rule": "R4", "p_mix_after": 0.7},
                    {"module": "is", "confidence": 0.55, "rule": "R4", "p_mix_after": 0.7},
                    {"module": "t", "confidence": 0.95, "rule": "R2", "p_mix_after": 0.95},
                    {"module": "mm", "confidence": 0.5, "rule": "R4", "p_mix_after": 0.95},
                ],
                "summary": ["..."],
            }
        }
    }


class RunSummary(BaseModel):
    """Content of ``run.json`` written by ``train``."""

    config_hash: str = Field(..., pattern=r"^[0-9a-f]{64}$")
    variant: str
    epochs: int = Field(..., ge=0)
    parameters: int = Field(..., gt=0)
    final_train_loss: float = Field(..., ge=0.0)
    val: Metrics
    test: Metrics
    test_without_veto: Metrics
    files: List[str]


class AblationRow(BaseModel):
    variant: str
    acc: float
    p: float
    r: float
    f1: float
