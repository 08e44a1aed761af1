"""MMoE-Pro expert network.

Token attention aggregates a token sequence into ``f_tilde``; each task's gate
maps ``f_tilde`` to raw expert weights (no softmax, no clamp); the task output
is ``sum_i w_{t,i}(f_tilde) * E_i(f)``. Experts consume the token mean of ``f``.
The classic MMoE mode swaps token attention for mean pooling and applies a
softmax to the gate outputs.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.module import MLP, Linear, Module
from core.tensor import (
    ShapeMismatchError,
    Tensor,
    reduce_mean,
    reduce_sum,
    reshape,
    softmax,
    softplus,
    stack,
    weighted_sum,
)
from networks.encoders import EmptySequenceError, TaskIndexError

logger = logging.getLogger(__name__)

N_TASKS = 2
BETA_EPS = 1e-8


class TokenAttention(Module):
    """Shared-weight scorer ``A`` mapping each token ``[d]`` to a raw score."""

    def __init__(self, d: int, hidden: int, rng: np.random.Generator, init: str = "xavier"):
        self.mlp = MLP(d, hidden, 1, rng, init)

    def __call__(self, tokens: Tensor) -> Tensor:
        """Raw scores ``[B, L]`` for tokens ``[B, L, d]``."""
        scores = self.mlp(tokens)
        return reshape(scores, scores.shape[:-1])


def _batched(f: Tensor, token_ndim: int) -> Tuple[Tensor, bool]:
    if f.ndim == token_ndim - 1:
        return reshape(f, (1,) + f.shape), True
    return f, False


def _unbatched(t: Tensor) -> Tensor:
    return reshape(t, t.shape[1:])


def token_attention(f: Tensor, att: TokenAttention) -> Tuple[Tensor, Tensor]:
    """Normalised importance weights and the weighted token sum.

    ``beta_i = softplus(alpha_i) / (sum_j softplus(alpha_j) + 1e-8)`` and
    ``f_tilde = sum_i beta_i * token_i``.

    Args:
        f: Tokens ``[L, d]`` or a batch ``[B, L, d]``
        att: Token scorer

    Returns:
        Tuple of (beta ``[L]`` or ``[B, L]``, f_tilde ``[d]`` or ``[B, d]``)
    """
    tokens, single = _batched(f, 3)
    if tokens.ndim != 3 or tokens.shape[1] == 0:
        raise EmptySequenceError(f"token attention needs a non-empty sequence, got shape {f.shape}")
    positive = softplus(att(tokens))
    beta = positive / (reduce_sum(positive, axis=-1, keepdims=True) + BETA_EPS)
    f_tilde = weighted_sum(beta, tokens)
    if single:
        return _unbatched(beta), _unbatched(f_tilde)
    return beta, f_tilde


def mean_pool(f: Tensor) -> Tuple[Tensor, Tensor]:
    """Uniform weights and the token mean; the classic-MMoE stand-in for attention."""
    tokens, single = _batched(f, 3)
    if tokens.ndim != 3 or tokens.shape[1] == 0:
        raise EmptySequenceError(f"mean pooling needs a non-empty sequence, got shape {f.shape}")
    batch, length = tokens.shape[0], tokens.shape[1]
    beta = Tensor(np.full((batch, length), 1.0 / length))
    pooled = reduce_mean(tokens, axis=1)
    if single:
        return _unbatched(beta), _unbatched(pooled)
    return beta, pooled


def gate_weights(f_tilde: Tensor, task: int, gates: Sequence[Linear], classic: bool = False) -> Tensor:
    """Raw per-expert weights ``w_t`` for one task.

    Args:
        f_tilde: Aggregated input ``[d]`` or ``[B, d]``
        task: Task index
        gates: One affine gate per task
        classic: Apply a softmax (classic MMoE) instead of returning raw weights

    Returns:
        Expert weights ``[N]`` or ``[B, N]``
    """
    if not 0 <= task < len(gates):
        raise TaskIndexError(f"task {task} is outside [0, {len(gates)})")
    weights = gates[task](f_tilde)
    return softmax(weights) if classic else weights


@dataclass
class MoEOutput:
    """Task outputs plus the gating diagnostics of one invocation."""

    outputs: List[Tensor]
    beta: Optional[Tensor]
    gate_weights: List[Tensor]
    expert_outputs: Optional[Tensor]


class MMoEPro(Module):
    """``N`` SiLU-MLP experts shared by ``N_TASKS`` gates, with token attention.

    Networks built with ``tokens=False`` only take vectors ``[B, d]`` and own no
    attention parameters.
    """

    def __init__(self, d_in: int, d_out: int, hidden: int, n_experts: int,
                 rng: np.random.Generator, init: str = "xavier", n_tasks: int = N_TASKS,
                 tokens: bool = True):
        self.attention = TokenAttention(d_in, hidden, rng, init) if tokens else None
        self.experts = [MLP(d_in, hidden, d_out, rng, init) for _ in range(n_experts)]
        self.gates = [Linear(d_in, n_experts, rng, init) for _ in range(n_tasks)]

    @property
    def n_experts(self) -> int:
        return len(self.experts)

    def __call__(self, f: Tensor, classic: bool = False) -> MoEOutput:
        """Run the expert network on tokens ``[B, L, d]`` or vectors ``[B, d]``."""
        if f.ndim == 3:
            if self.attention is None:
                raise ShapeMismatchError(f"expert network built for vectors got tokens of shape {f.shape}")
            beta, f_tilde = mean_pool(f) if classic else token_attention(f, self.attention)
            expert_input = reduce_mean(f, axis=1)
        else:
            beta, f_tilde = None, f
            expert_input = f

        experts = stack([expert(expert_input) for expert in self.experts], axis=1)
        weights = [gate_weights(f_tilde, task, self.gates, classic) for task in range(len(self.gates))]
        outputs = [weighted_sum(w, experts) for w in weights]
        return MoEOutput(outputs=outputs, beta=beta, gate_weights=weights, expert_outputs=experts)


def mmoe_pro_forward(f: Tensor, network: MMoEPro, classic: bool = False) -> List[Tensor]:
    """Both task outputs ``[r0, r1]`` for one input (tokens ``[L, d]`` or vector ``[d]``)."""
    batched = reshape(f, (1,) + f.shape)
    return [_unbatched(r) for r in network(batched, classic).outputs]
