"""Binary metrics, batched prediction and representation similarity."""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from sklearn.metrics import confusion_matrix

from data.batching import iterate_batches
from models.config_schemas import MODULE_IDS
from models.data_schemas import NewsRecord
from models.report_schemas import Metrics
from utils.errors import DataError
from voting.veto import VoteResult

logger = logging.getLogger(__name__)

EVAL_BATCH_SIZE = 256


def compute_metrics(predictions: Sequence[int], labels: Sequence[int]) -> Metrics:
    """Accuracy, precision, recall and F1 with class 1 (fake) as positive.

    Args:
        predictions: Predicted labels in {0, 1}
        labels: True labels in {0, 1}

    Returns:
        Metrics including the confusion counts
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ValueError(f"{predictions.shape[0]} predictions for {labels.shape[0]} labels")
    if labels.size == 0:
        raise DataError("cannot compute metrics on an empty dataset")
    tn, fp, fn, tp = (int(v) for v in confusion_matrix(labels, predictions, labels=[0, 1]).ravel())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return Metrics(
        accuracy=(tp + tn) / labels.size,
        precision=precision,
        recall=recall,
        f1=f1,
        tp=tp, fp=fp, tn=tn, fn=fn,
    )


@dataclass
class Predictions:
    """Per-record outputs of a model over a dataset."""

    ids: List[str]
    labels: np.ndarray
    logits: Dict[str, np.ndarray]
    head_labels: Dict[str, np.ndarray]
    veto_labels: np.ndarray
    votes: List[VoteResult] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ids)

    def final_labels(self, use_veto: bool) -> np.ndarray:
        return self.veto_labels if use_veto else self.head_labels["mix"]

    @property
    def veto_overrides(self) -> int:
        return int(np.sum(self.veto_labels != self.head_labels["mix"]))


def predict(model, records: Sequence[NewsRecord], batch_size: int = EVAL_BATCH_SIZE) -> Predictions:
    """Evaluate ``model`` on every record without augmentation."""
    if not records:
        raise DataError("cannot evaluate an empty dataset")
    names = (*MODULE_IDS, "cons", "mix")
    logits = {name: [] for name in names}
    heads = {name: [] for name in names}
    ids, labels, votes = [], [], []
    for batch in iterate_batches(records, batch_size, model.cfg.encoder.text_len):
        outputs = model.forward(batch, train_mode=False)
        ids.extend(batch.ids)
        labels.append(batch.labels.astype(np.int64))
        votes.extend(outputs.votes)
        for name in names:
            logits[name].append(outputs.logit_array(name))
            heads[name].append(outputs.head_labels(name))
    return Predictions(
        ids=ids,
        labels=np.concatenate(labels),
        logits={name: np.concatenate(values) for name, values in logits.items()},
        head_labels={name: np.concatenate(values) for name, values in heads.items()},
        veto_labels=np.array([vote.label for vote in votes], dtype=np.int64),
        votes=votes,
    )


def evaluate(model, records: Sequence[NewsRecord], use_veto: bool = True,
             predictions: Optional[Predictions] = None) -> Metrics:
    """Metrics of the veto label, or of ``sigmoid(O_mix) > 0.5`` when ``use_veto`` is off."""
    predictions = predictions or predict(model, records)
    return compute_metrics(predictions.final_labels(use_veto), predictions.labels)


def cosine_similarity_matrix(vectors: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity of row vectors; zero rows have similarity 0."""
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    unit = np.divide(vectors, norms, out=np.zeros_like(vectors), where=norms > 0)
    return np.clip(unit @ unit.T, -1.0, 1.0)


REDUCED_SOURCES = {"ip": "ip", "is": "is0", "t": "t0", "mm": "mm0"}


def reduced_representations(model, records: Sequence[NewsRecord]) -> Dict[str, np.ndarray]:
    """64-dim coarse-head reductions of each module's representation and of ``r_mix``."""
    if not records:
        raise DataError("no records selected")
    reduced = {name: [] for name in (*MODULE_IDS, "mix")}
    for batch in iterate_batches(records, EVAL_BATCH_SIZE, model.cfg.encoder.text_len):
        outputs = model.forward(batch, train_mode=False, vote=False)
        for name, source in REDUCED_SOURCES.items():
            reduced[name].append(model.heads[name].reduce(outputs.refined[source]).values)
        reduced["mix"].append(model.heads["mix"].reduce(outputs.r_mix).values)
    return {name: np.concatenate(parts).astype(np.float64) for name, parts in reduced.items()}
