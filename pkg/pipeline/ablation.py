"""Ablation sweeps: one trained-and-evaluated model per variant."""

import logging
from typing import List, Sequence

import pandas as pd

from models.config_schemas import AblationConfig, RunConfig
from models.data_schemas import NewsRecord
from models.report_schemas import AblationRow, Metrics
from pipeline.metrics import evaluate
from pipeline.model import GamedModel
from pipeline.trainer import Trainer
from utils.errors import ConfigError

logger = logging.getLogger(__name__)

SWITCHES = (
    "disable_adain",
    "disable_veto",
    "disable_coarse_constraint",
    "disable_consistency",
    "classic_mmoe_gating",
    "mm_style_only",
    "transformer_block",
)
ABLATION_COLUMNS = ["variant", "acc", "p", "r", "f1"]


def parse_grid_token(token: str) -> AblationConfig:
    """Turn one grid token (``none``, a switch name or ``module_subset=a+b``) into flags."""
    token = token.strip()
    if token in ("none", "full"):
        return AblationConfig()
    if token in SWITCHES:
        return AblationConfig(**{token: True})
    if token.startswith("module_subset="):
        modules = [m for m in token.split("=", 1)[1].split("+") if m]
        try:
            return AblationConfig(module_subset=modules)
        except ValueError as exc:
            raise ConfigError(f"grid token '{token}': {exc}") from exc
    raise ConfigError(f"unknown grid token '{token}' (expected none, module_subset=..., or one of {list(SWITCHES)})")


def parse_grid(text: str) -> List[AblationConfig]:
    tokens = [token for token in text.split(",") if token.strip()]
    if not tokens:
        raise ConfigError("grid is empty")
    return [parse_grid_token(token) for token in tokens]


def with_ablation(cfg: RunConfig, ablation: AblationConfig) -> RunConfig:
    return RunConfig.model_validate({**cfg.model_dump(), "ablation": ablation.model_dump()})


def run_variant(cfg: RunConfig, train: Sequence[NewsRecord], val: Sequence[NewsRecord],
                test: Sequence[NewsRecord]) -> Metrics:
    """Train a fresh model with ``cfg`` and score it on ``test``."""
    model = GamedModel(cfg)
    Trainer(model).fit(train, val)
    return evaluate(model, test, use_veto=not cfg.ablation.disable_veto)


def run_ablation(base: RunConfig, ablations: Sequence[AblationConfig], train: Sequence[NewsRecord],
                 val: Sequence[NewsRecord], test: Sequence[NewsRecord]) -> List[AblationRow]:
    """Train and evaluate each variant with the same seed and data.

    Args:
        base: Configuration shared by all variants (its own ablation is replaced)
        ablations: Variants to run
        train, val, test: Dataset splits

    Returns:
        One row per variant, sorted by test accuracy descending (ties keep grid order)
    """
    rows = []
    for ablation in ablations:
        name = ablation.variant_name()
        logger.info(f"running variant '{name}'")
        metrics = run_variant(with_ablation(base, ablation), train, val, test)
        logger.info(f"variant '{name}': acc {metrics.accuracy:.4f}, f1 {metrics.f1:.4f}")
        rows.append(AblationRow(variant=name, acc=metrics.accuracy, p=metrics.precision,
                                r=metrics.recall, f1=metrics.f1))
    return sorted(rows, key=lambda row: -row.acc)


def ablation_frame(rows: Sequence[AblationRow]) -> pd.DataFrame:
    return pd.DataFrame([row.model_dump() for row in rows], columns=ABLATION_COLUMNS)
