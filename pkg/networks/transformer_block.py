"""Single-head transformer encoder block used in place of MMoE-Pro for ablations.

The block normalises each token, mixes tokens with scaled dot-product
self-attention, applies a per-token SiLU MLP (both sublayers residual) and
mean-pools the result. One linear head per task maps the pooled vector to the
task output, so the block returns the same ``MoEOutput`` as ``MMoEPro``.
Vector inputs ``[B, d]`` are treated as a single token.
"""

import logging
import math

import numpy as np

from core.module import MLP, Linear, Module
from core.tensor import (
    ShapeMismatchError,
    Tensor,
    batched_matmul,
    reduce_mean,
    reduce_stats,
    reshape,
    softmax,
    swap_last_axes,
)
from networks.moe_pro import N_TASKS, MoEOutput

logger = logging.getLogger(__name__)


def normalize_tokens(x: Tensor) -> Tensor:
    """Zero-mean, unit-spread features per token (no learned affine)."""
    mu, sigma = reduce_stats(x, axis=-1, keepdims=True)
    return (x - mu) / sigma


class SelfAttention(Module):
    """Scaled dot-product self-attention with one head."""

    def __init__(self, d: int, rng: np.random.Generator, init: str = "xavier"):
        self.query = Linear(d, d, rng, init)
        self.key = Linear(d, d, rng, init)
        self.value = Linear(d, d, rng, init)
        self.scale = 1.0 / math.sqrt(d)

    def weights(self, tokens: Tensor) -> Tensor:
        """Attention matrix ``[B, L, L]``; every row sums to one."""
        scores = batched_matmul(self.query(tokens), swap_last_axes(self.key(tokens)))
        return softmax(scores * self.scale)

    def __call__(self, tokens: Tensor) -> Tensor:
        return batched_matmul(self.weights(tokens), self.value(tokens))


class TransformerBlock(Module):
    """Pre-norm encoder block with ``n_tasks`` linear task heads."""

    def __init__(self, d_in: int, d_out: int, hidden: int, rng: np.random.Generator,
                 init: str = "xavier", n_tasks: int = N_TASKS):
        self.attention = SelfAttention(d_in, rng, init)
        self.mlp = MLP(d_in, hidden, d_in, rng, init)
        self.task_heads = [Linear(d_in, d_out, rng, init) for _ in range(n_tasks)]

    def __call__(self, f: Tensor, classic: bool = False) -> MoEOutput:
        """Run the block on tokens ``[B, L, d]`` or vectors ``[B, d]``; ``classic`` is ignored."""
        if f.ndim == 2:
            f = reshape(f, (f.shape[0], 1, f.shape[1]))
        elif f.ndim != 3:
            raise ShapeMismatchError(f"transformer block expects [B, d] or [B, L, d], got {f.shape}")
        x = f + self.attention(normalize_tokens(f))
        x = x + self.mlp(normalize_tokens(x))
        pooled = reduce_mean(x, axis=1)
        return MoEOutput(outputs=[head(pooled) for head in self.task_heads], beta=None,
                         gate_weights=[], expert_outputs=None)
