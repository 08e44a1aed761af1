"""Synthetic data generation, JSONL storage and batching."""
from .batching import Batch, collate, count_missing_consistency, iterate_batches
from .jsonl_store import file_sha256, read_jsonl, write_jsonl
from .synthdata import SPLITS, Vocabulary, generate, generate_split, split_summary

__all__ = [
    "Batch",
    "collate",
    "iterate_batches",
    "count_missing_consistency",
    "read_jsonl",
    "write_jsonl",
    "file_sha256",
    "SPLITS",
    "Vocabulary",
    "generate",
    "generate_split",
    "split_summary",
]
