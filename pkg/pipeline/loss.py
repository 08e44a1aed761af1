"""Multi-head training loss."""

from typing import Dict, Sequence

import numpy as np

from core.tensor import Tensor, bce_with_logits
from models.config_schemas import MODULE_IDS
from pipeline.model import ForwardOutputs


def head_losses(outputs: ForwardOutputs, labels: np.ndarray, consistency: np.ndarray) -> Dict[str, Tensor]:
    """Batch-mean BCE per head; the consistency head is scored against ``consistency``."""
    losses = {name: bce_with_logits(outputs.logits[name], labels) for name in (*MODULE_IDS, "mix")}
    losses["cons"] = bce_with_logits(outputs.logits["cons"], consistency)
    return losses


def compute_loss(outputs: ForwardOutputs, labels: np.ndarray, consistency: np.ndarray,
                 consistency_weight: float = 1.0, modules: Sequence[str] = MODULE_IDS) -> Tensor:
    """``sum_m BCE(O_m, y) + BCE(O_mix, y) + lambda * BCE(O_cons, c)``, averaged over the batch.

    Args:
        outputs: Forward outputs of the batch
        labels: Veracity labels ``[B]``
        consistency: Consistency targets ``[B]``
        consistency_weight: lambda; 0 drops the consistency term
        modules: Active module heads; the consistency term needs ``mm``

    Returns:
        Scalar loss tensor
    """
    total = bce_with_logits(outputs.logits["mix"], labels)
    for name in MODULE_IDS:
        if name in modules:
            total = total + bce_with_logits(outputs.logits[name], labels)
    if consistency_weight > 0 and "mm" in modules:
        total = total + bce_with_logits(outputs.logits["cons"], consistency) * consistency_weight
    return total
