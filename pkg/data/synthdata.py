"""Synthetic multimodal news records with planted, per-branch signals.

Vocabulary layout (pad id 0 is never emitted): ids ``1 .. K*B`` form K topic
blocks of B words; the remaining ids are split into fake markers (first half)
and real markers (second half). A text draws half its mass from its topic
block and half from the markers of one class, its leaning. A text leans toward
its own class with probability ``0.5 + 1.25 * text_signal`` (capped at 1), so
the text alone never decides a record with more than that confidence.

Images are a smooth per-topic sinusoid template plus two Gaussian blobs. Fake
records add a checkerboard of amplitude ``pattern_signal * u`` with
``u ~ U(0.5, 1)`` and a random sign (phase), so the pixel-wise mean over fake
images stays that of the real ones. Inconsistent records (c = 0) draw the
image topic from the topics other than the text topic.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from models.config_schemas import GenSpec
from models.data_schemas import NewsRecord

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
TEMPLATE_FREQUENCY = 1.5
TEMPLATE_AMPLITUDE = 0.25
BLOB_COUNT = 2
IMAGE_DECIMALS = 6
LEANING_SCALE = 1.25


@dataclass(frozen=True)
class Vocabulary:
    """Token-id blocks derived from the vocabulary size and topic count."""

    topic_words: Tuple[np.ndarray, ...]
    fake_markers: np.ndarray
    real_markers: np.ndarray

    @classmethod
    def build(cls, vocab_size: int, n_topics: int) -> "Vocabulary":
        block = (vocab_size - 1) // (2 * n_topics)
        topics = tuple(np.arange(1 + k * block, 1 + (k + 1) * block) for k in range(n_topics))
        markers = np.arange(1 + n_topics * block, vocab_size)
        half = len(markers) // 2
        return cls(topic_words=topics, fake_markers=markers[:half], real_markers=markers[half:])


def leaning_probability(text_signal: float) -> float:
    """P(a text leans toward the markers of its own class)."""
    return min(1.0, 0.5 + LEANING_SCALE * text_signal)


def token_distribution(vocab: Vocabulary, vocab_size: int, topic: int, leaning: int) -> np.ndarray:
    """Categorical over token ids for a text on ``topic`` leaning toward class ``leaning``."""
    probs = np.zeros(vocab_size)
    probs[vocab.topic_words[topic]] = 0.5 / len(vocab.topic_words[topic])
    target = vocab.fake_markers if leaning == 1 else vocab.real_markers
    probs[target] += 0.5 / len(target)
    return probs


def topic_template(topic: int, n_topics: int, grid: int) -> np.ndarray:
    """Smooth oriented sinusoid in ``[0.25, 0.75]`` for one topic."""
    yy, xx = np.meshgrid(np.linspace(0.0, 1.0, grid), np.linspace(0.0, 1.0, grid), indexing="ij")
    angle = np.pi * topic / n_topics
    phase = 2.0 * np.pi * TEMPLATE_FREQUENCY * (xx * np.cos(angle) + yy * np.sin(angle))
    return 0.5 + TEMPLATE_AMPLITUDE * np.sin(phase + topic)


def checkerboard(grid: int) -> np.ndarray:
    rows, cols = np.indices((grid, grid))
    return np.where((rows + cols) % 2 == 0, 1.0, -1.0)


def render_image(rng: np.random.Generator, topic: int, label: int, spec: GenSpec) -> np.ndarray:
    grid = spec.grid
    image = topic_template(topic, spec.n_topics, grid)
    rows, cols = np.indices((grid, grid))
    for _ in range(BLOB_COUNT):
        cy, cx = rng.uniform(0, grid, size=2)
        width = rng.uniform(2.0, 5.0)
        amplitude = rng.uniform(-0.15, 0.15)
        image = image + amplitude * np.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / (2 * width ** 2))
    strength = rng.uniform(0.5, 1.0)
    sign = 1.0 if rng.random() < 0.5 else -1.0
    if label == 1:
        image = image + sign * spec.pattern_signal * strength * checkerboard(grid)
    return np.round(np.clip(image, 0.0, 1.0), IMAGE_DECIMALS).astype(np.float32)


def _split_plan(rng: np.random.Generator, n: int, spec: GenSpec) -> Tuple[np.ndarray, np.ndarray]:
    n_fake = int(round(n * spec.class_balance))
    labels = rng.permutation(np.array([1] * n_fake + [0] * (n - n_fake), dtype=np.int64))
    consistency = np.ones(n, dtype=np.int64)
    for label in (0, 1):
        members = np.flatnonzero(labels == label)
        n_inconsistent = int(round(len(members) * spec.inconsistency_rate(label)))
        if n_inconsistent:
            consistency[rng.choice(members, size=n_inconsistent, replace=False)] = 0
    return labels, consistency


def generate_split(spec: GenSpec, split: str) -> List[NewsRecord]:
    """Generate one split; every record has its own stream ``(seed, split, index)``."""
    split_index = SPLITS.index(split)
    n = {"train": spec.n_train, "val": spec.n_val, "test": spec.n_test}[split]
    vocab = Vocabulary.build(spec.vocab_size, spec.n_topics)
    labels, consistency = _split_plan(np.random.default_rng([spec.seed, split_index]), n, spec)

    records = []
    for index in range(n):
        rng = np.random.default_rng([spec.seed, split_index, index])
        label, c = int(labels[index]), int(consistency[index])
        text_topic = int(rng.integers(spec.n_topics))
        offset = int(rng.integers(1, spec.n_topics))
        image_topic = text_topic if c == 1 else (text_topic + offset) % spec.n_topics
        length = int(rng.integers(spec.min_text_len, spec.text_len + 1))
        leaning = label if rng.random() < leaning_probability(spec.text_signal) else 1 - label
        probs = token_distribution(vocab, spec.vocab_size, text_topic, leaning)
        tokens = rng.choice(spec.vocab_size, size=length, p=probs)
        records.append(NewsRecord(
            id=f"{split}-{index:05d}",
            text=[int(t) for t in tokens],
            image=render_image(rng, image_topic, label, spec),
            label=label,
            consistency=c,
        ))
    logger.debug(f"generated {split}: {n} records, {int(labels.sum())} fake, {int((consistency == 0).sum())} inconsistent")
    return records


def generate(spec: GenSpec) -> Tuple[List[NewsRecord], List[NewsRecord], List[NewsRecord]]:
    """Generate the train, val and test splits.

    Args:
        spec: Generation settings including the seed

    Returns:
        Tuple of (train, val, test) record lists
    """
    train, val, test = (generate_split(spec, split) for split in SPLITS)
    logger.info(f"generated {len(train)}/{len(val)}/{len(test)} records with seed {spec.seed}")
    return train, val, test


def split_summary(records: List[NewsRecord]) -> Dict[str, int]:
    return {
        "records": len(records),
        "fake": sum(r.label for r in records),
        "inconsistent": sum(1 for r in records if r.consistency == 0),
    }
