"""Tests for the transformer encoder block used by the expert-network ablation."""
import numpy as np
import pytest

from core.tensor import ShapeMismatchError, Tensor, precision
from networks.transformer_block import SelfAttention, TransformerBlock, normalize_tokens


def silu(x):
    return x / (1.0 + np.exp(-x))


def layer(linear, x):
    return x @ linear.weight.values + linear.bias.values


def naive_block(block: TransformerBlock, tokens: np.ndarray):
    """Loop-over-tokens reference for one sample ``[L, d]``."""
    def norm(x):
        return (x - x.mean(axis=-1, keepdims=True)) / x.std(axis=-1, keepdims=True)

    att = block.attention
    h = norm(tokens)
    q, k, v = layer(att.query, h), layer(att.key, h), layer(att.value, h)
    mixed = np.zeros_like(tokens)
    for i in range(len(tokens)):
        scores = np.array([q[i] @ k[j] for j in range(len(tokens))]) / np.sqrt(tokens.shape[1])
        weights = np.exp(scores - scores.max()) / np.exp(scores - scores.max()).sum()
        mixed[i] = sum(w * v[j] for j, w in enumerate(weights))
    x = tokens + mixed
    x = x + layer(block.mlp.output, silu(layer(block.mlp.hidden, norm(x))))
    pooled = x.mean(axis=0)
    return [layer(head, pooled) for head in block.task_heads]


def test_block_matches_token_loop():
    for case in range(20):
        case_rng = np.random.default_rng(500 + case)
        with precision(np.float64):
            block = TransformerBlock(4, 3, 5, case_rng)
            tokens = case_rng.normal(size=(2, 3, 4))
            outputs = block(Tensor(tokens)).outputs
            for sample in range(2):
                expected = naive_block(block, tokens[sample])
                for task in range(2):
                    np.testing.assert_allclose(outputs[task].values[sample], expected[task], atol=1e-8)


def test_attention_rows_are_distributions(rng):
    att = SelfAttention(6, rng)
    weights = att.weights(Tensor(rng.normal(size=(2, 5, 6)))).values
    assert weights.shape == (2, 5, 5)
    assert np.all(weights >= 0.0)
    np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-5)


def test_vector_input_is_a_single_token(rng):
    block = TransformerBlock(6, 4, 4, rng)
    vectors = rng.normal(size=(3, 6))
    out = block(Tensor(vectors))
    assert [r.shape for r in out.outputs] == [(3, 4), (3, 4)]
    assert out.beta is None and out.gate_weights == [] and out.expert_outputs is None
    as_tokens = block(Tensor(vectors[:, None, :])).outputs
    for vector_out, token_out in zip(out.outputs, as_tokens):
        np.testing.assert_array_equal(vector_out.values, token_out.values)


def test_normalized_tokens_have_zero_mean_and_unit_spread(rng):
    x = normalize_tokens(Tensor(rng.normal(2.0, 3.0, size=(2, 4, 16)))).values
    np.testing.assert_allclose(x.mean(axis=-1), 0.0, atol=1e-5)
    np.testing.assert_allclose(x.std(axis=-1), 1.0, atol=1e-4)


def test_block_rejects_higher_rank_input(rng):
    block = TransformerBlock(4, 4, 4, rng)
    with pytest.raises(ShapeMismatchError):
        block(Tensor(rng.normal(size=(1, 2, 3, 4))))
