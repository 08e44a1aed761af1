"""Mini-batch AdamW training with per-epoch metrics for the full model and each head."""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from core.optim import AdamW
from core.tensor import NumericDomainError, Tape, backward, bce_with_logits
from data.batching import count_missing_consistency, iterate_batches
from models.config_schemas import MODULE_IDS
from models.data_schemas import NewsRecord
from models.report_schemas import Metrics
from pipeline.loss import compute_loss
from pipeline.metrics import EVAL_BATCH_SIZE, compute_metrics, predict
from pipeline.model import GamedModel
from utils.errors import DataError, NumericDivergenceError

logger = logging.getLogger(__name__)

METRICS_COLUMNS = ["epoch", "split", "module", "loss", "acc", "p", "r", "f1"]
LOG_MODULES = ("full", *MODULE_IDS)


@dataclass
class EpochRow:
    epoch: int
    split: str
    module: str
    loss: float
    acc: float
    p: float
    r: float
    f1: float


@dataclass
class TrainingLog:
    """Per-epoch rows (epoch 0 is the untrained model) and mean batch losses."""

    rows: List[EpochRow] = field(default_factory=list)
    batch_losses: List[float] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(row) for row in self.rows], columns=METRICS_COLUMNS)

    def write_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.6f")

    def loss(self, epoch: int, split: str = "train", module: str = "full") -> float:
        for row in self.rows:
            if (row.epoch, row.split, row.module) == (epoch, split, module):
                return row.loss
        raise KeyError(f"no row for epoch {epoch}, split {split}, module {module}")


class Trainer:
    """Runs the training loop for one model and one configuration."""

    def __init__(self, model: GamedModel):
        self.model = model
        self.cfg = model.cfg
        train = self.cfg.train
        self.optimizer = AdamW(model.named_parameters(), lr=train.lr, beta1=train.beta1,
                               beta2=train.beta2, eps=train.eps, weight_decay=train.weight_decay)
        ablation = self.cfg.ablation
        self.consistency_weight = 0.0 if ablation.disable_consistency else train.consistency_weight
        self.modules = list(ablation.module_subset)

    def train_step(self, batch, rng: np.random.Generator) -> float:
        """One AdamW update on one batch; returns the batch loss."""
        with Tape() as tape:
            tape.watch(*self.model.parameters())
            try:
                outputs = self.model.forward(batch, train_mode=True, rng=rng, vote=False)
            except NumericDomainError as exc:
                raise NumericDivergenceError(f"forward pass left its numeric domain: {exc}") from exc
            loss = compute_loss(outputs, batch.labels, batch.consistency,
                                self.consistency_weight, self.modules)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericDivergenceError(f"training loss became {value}")
            grads = backward(tape, loss)
            self.optimizer.step(grads)
        self.model.constrain()
        return value

    def evaluate_split(self, epoch: int, split: str, records: Sequence[NewsRecord]) -> List[EpochRow]:
        """Loss and metrics for the full model and each module head."""
        predictions = predict(self.model, records, EVAL_BATCH_SIZE)
        labels = predictions.labels
        consistency = np.array([r.consistency_target for r in records], dtype=np.float64)

        def mean_bce(name: str, targets: np.ndarray) -> float:
            return float(bce_with_logits(predictions.logits[name], targets, reduction="mean").item())

        head_loss = {name: mean_bce(name, labels) for name in (*MODULE_IDS, "mix")}
        full_loss = head_loss["mix"] + sum(head_loss[m] for m in self.modules)
        if self.consistency_weight > 0 and "mm" in self.modules:
            full_loss += self.consistency_weight * mean_bce("cons", consistency)
        if not math.isfinite(full_loss):
            raise NumericDivergenceError(f"{split} loss became {full_loss} at epoch {epoch}")

        use_veto = not self.cfg.ablation.disable_veto
        rows = [self._row(epoch, split, "full", full_loss,
                          compute_metrics(predictions.final_labels(use_veto), labels))]
        for name in MODULE_IDS:
            rows.append(self._row(epoch, split, name, head_loss[name],
                                  compute_metrics(predictions.head_labels[name], labels)))
        return rows

    @staticmethod
    def _row(epoch: int, split: str, module: str, loss: float, metrics: Metrics) -> EpochRow:
        return EpochRow(epoch=epoch, split=split, module=module, loss=loss, acc=metrics.accuracy,
                        p=metrics.precision, r=metrics.recall, f1=metrics.f1)

    def fit(self, train: Sequence[NewsRecord], val: Optional[Sequence[NewsRecord]] = None) -> TrainingLog:
        """Train for the configured number of epochs.

        Epoch ``e`` shuffles with the stream ``(seed, e)`` and augments with
        ``(seed, e, 1)``. Every epoch, and the untrained model as epoch 0, is
        scored on the train and validation splits.

        Args:
            train: Training records
            val: Validation records (optional)

        Returns:
            The training log
        """
        if not train:
            raise DataError("training set is empty")
        count_missing_consistency(train)
        cfg = self.cfg
        log = TrainingLog()
        splits = [("train", train)] + ([("val", val)] if val else [])

        for split, records in splits:
            log.rows.extend(self.evaluate_split(0, split, records))
        logger.info(f"epoch 0: train loss {log.loss(0):.4f}")

        for epoch in range(1, cfg.train.epochs + 1):
            shuffle_rng = np.random.default_rng([cfg.seed, epoch])
            augment_rng = np.random.default_rng([cfg.seed, epoch, 1])
            losses = [
                self.train_step(batch, augment_rng)
                for batch in iterate_batches(train, cfg.train.batch_size, cfg.encoder.text_len, shuffle_rng)
            ]
            log.batch_losses.append(float(np.mean(losses)))
            for split, records in splits:
                log.rows.extend(self.evaluate_split(epoch, split, records))
            val_note = ""
            if val:
                val_acc = next(r.acc for r in log.rows if (r.epoch, r.split, r.module) == (epoch, "val", "full"))
                val_note = f", val acc {val_acc:.4f}"
            logger.info(f"epoch {epoch}: mean batch loss {log.batch_losses[-1]:.4f}, "
                        f"train loss {log.loss(epoch):.4f}{val_note}")
        return log


def train(model: GamedModel, train_records: Sequence[NewsRecord],
          val_records: Optional[Sequence[NewsRecord]] = None) -> TrainingLog:
    """Train ``model`` in place with its own configuration."""
    return Trainer(model).fit(train_records, val_records)
