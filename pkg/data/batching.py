"""Collation of news records into padded numpy batches."""

import logging
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence

import numpy as np

from models.data_schemas import NewsRecord
from networks.encoders import pad_tokens

logger = logging.getLogger(__name__)


@dataclass
class Batch:
    ids: List[str]
    tokens: np.ndarray
    images: np.ndarray
    labels: np.ndarray
    consistency: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


def collate(records: Sequence[NewsRecord], text_len: int) -> Batch:
    """Stack records; texts are padded/truncated to ``text_len``.

    Records without a consistency bit use ``1 - label``.
    """
    if not records:
        raise ValueError("cannot collate an empty batch")
    shapes = {record.image.shape for record in records}
    if len(shapes) != 1:
        raise ValueError(f"records in one batch have different image shapes: {sorted(shapes)}")
    return Batch(
        ids=[record.id for record in records],
        tokens=np.stack([pad_tokens(record.text, text_len) for record in records]),
        images=np.stack([record.image for record in records]).astype(np.float32),
        labels=np.array([record.label for record in records], dtype=np.float32),
        consistency=np.array([record.consistency_target for record in records], dtype=np.float32),
    )


def iterate_batches(records: Sequence[NewsRecord], batch_size: int, text_len: int,
                    rng: Optional[np.random.Generator] = None) -> Iterator[Batch]:
    """Yield consecutive batches, shuffled first when ``rng`` is given."""
    order = np.arange(len(records))
    if rng is not None:
        order = rng.permutation(len(records))
    for start in range(0, len(records), batch_size):
        yield collate([records[i] for i in order[start:start + batch_size]], text_len)


def count_missing_consistency(records: Sequence[NewsRecord]) -> int:
    missing = sum(1 for record in records if record.consistency is None)
    if missing:
        logger.warning(f"{missing} records carry no consistency bit; using 1 - label as the target")
    return missing
