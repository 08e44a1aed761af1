"""Tests for token attention, raw gating and the MMoE-Pro expert network."""
import numpy as np
import pytest

from core.module import Linear
from core.tensor import ShapeMismatchError, Tensor, precision
from networks.encoders import EmptySequenceError, TaskIndexError
from networks.moe_pro import MMoEPro, TokenAttention, gate_weights, mmoe_pro_forward, token_attention


def softplus(x):
    return np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))


def naive_forward(network: MMoEPro, tokens: np.ndarray, task: int, classic: bool = False) -> np.ndarray:
    """Explicit accumulation loop over experts for one sample ``[L, d]``."""
    if classic:
        f_tilde = tokens.mean(axis=0)
    else:
        scores = np.array([network.attention.mlp(Tensor(token[None])).values[0, 0] for token in tokens])
        beta = softplus(scores) / (softplus(scores).sum() + 1e-8)
        f_tilde = sum(b * token for b, token in zip(beta, tokens))
    gate = network.gates[task]
    w = f_tilde @ gate.weight.values + gate.bias.values
    if classic:
        w = np.exp(w - w.max()) / np.exp(w - w.max()).sum()
    expert_input = tokens.mean(axis=0)
    out = np.zeros(network.experts[0].output.bias.shape)
    for weight, expert in zip(w, network.experts):
        out = out + weight * expert(Tensor(expert_input[None])).values[0]
    return out


def test_identical_tokens_get_uniform_weights(rng):
    att = TokenAttention(4, 4, rng)
    token = rng.normal(size=4)
    beta, f_tilde = token_attention(Tensor(np.tile(token, (5, 1))), att)
    np.testing.assert_allclose(beta.values, 0.2, atol=1e-6)
    np.testing.assert_allclose(f_tilde.values, token, atol=1e-5)


def test_single_token(rng):
    att = TokenAttention(4, 4, rng)
    token = rng.normal(size=(1, 4))
    beta, f_tilde = token_attention(Tensor(token), att)
    np.testing.assert_allclose(beta.values, [1.0], atol=1e-6)
    np.testing.assert_allclose(f_tilde.values, token[0], atol=1e-6)


def test_attention_matches_weighted_loop(rng):
    att = TokenAttention(6, 5, rng)
    tokens = rng.normal(size=(7, 6))
    beta, f_tilde = token_attention(Tensor(tokens), att)
    assert beta.values.sum() == pytest.approx(1.0, abs=1e-5)
    expected = sum(b * t for b, t in zip(beta.values, tokens.astype(np.float32)))
    np.testing.assert_allclose(f_tilde.values, expected, atol=1e-6)


def test_attention_rejects_empty_sequence(rng):
    with pytest.raises(EmptySequenceError):
        token_attention(Tensor(np.zeros((0, 4))), TokenAttention(4, 4, rng))


def test_gate_weights_are_raw(rng):
    gate = Linear(3, 2, rng)
    gate.weight.values = np.zeros((3, 2), dtype=np.float32)
    gate.bias.values = np.array([-0.5, 1.2], dtype=np.float32)
    w = gate_weights(Tensor(rng.normal(size=3)), 0, [gate])
    np.testing.assert_allclose(w.values, [-0.5, 1.2], atol=1e-7)

    gate.bias.values = np.zeros(2, dtype=np.float32)
    np.testing.assert_array_equal(gate_weights(Tensor(np.zeros(3)), 0, [gate]).values, 0.0)


def test_gate_weights_match_matrix_vector_product(rng):
    gate = Linear(5, 3, rng)
    f_tilde = rng.normal(size=5)
    expected = f_tilde.astype(np.float32) @ gate.weight.values + gate.bias.values
    np.testing.assert_allclose(gate_weights(Tensor(f_tilde), 0, [gate]).values, expected, atol=1e-6)


def test_gate_weights_reject_unknown_task(rng):
    with pytest.raises(TaskIndexError):
        gate_weights(Tensor(np.zeros(3)), 2, [Linear(3, 2, rng), Linear(3, 2, rng)])


def test_single_expert_collapses(rng):
    network = MMoEPro(4, 3, 4, 1, rng)
    for gate in network.gates:
        gate.weight.values = np.zeros_like(gate.weight.values)
        gate.bias.values = np.ones(1, dtype=np.float32)
    tokens = rng.normal(size=(5, 4))
    r0, r1 = mmoe_pro_forward(Tensor(tokens), network)
    expected = network.experts[0](Tensor(tokens.mean(axis=0)[None])).values[0]
    np.testing.assert_allclose(r0.values, expected, atol=1e-6)
    np.testing.assert_allclose(r1.values, expected, atol=1e-6)


def test_equal_weights_average_two_experts(rng):
    network = MMoEPro(4, 3, 4, 2, rng)
    gate = network.gates[0]
    gate.weight.values = np.zeros_like(gate.weight.values)
    gate.bias.values = np.array([0.5, 0.5], dtype=np.float32)
    tokens = rng.normal(size=(3, 4))
    mean = Tensor(tokens.mean(axis=0)[None])
    a, b = (expert(mean).values[0] for expert in network.experts)
    r0 = mmoe_pro_forward(Tensor(tokens), network)[0]
    np.testing.assert_allclose(r0.values, 0.5 * a + 0.5 * b, atol=1e-6)


def test_mixture_matches_accumulation_loop():
    for case in range(1000):
        case_rng = np.random.default_rng(case)
        with precision(np.float64):
            network = MMoEPro(4, 3, 5, 4, case_rng)
            for gate in network.gates:
                gate.bias.values = case_rng.normal(size=4)
            tokens = case_rng.normal(size=(int(case_rng.integers(1, 6)), 4))
            outputs = network(Tensor(tokens[None]))
            assert outputs.beta.values.sum() == pytest.approx(1.0, abs=1e-5)
            for task in range(2):
                np.testing.assert_allclose(outputs.outputs[task].values[0], naive_forward(network, tokens, task),
                                           atol=1e-5)


def test_negative_gate_weights_are_preserved(rng):
    network = MMoEPro(4, 3, 4, 2, rng)
    network.gates[0].bias.values = np.array([-2.0, 3.0], dtype=np.float32)
    network.gates[0].weight.values = np.zeros_like(network.gates[0].weight.values)
    weights = network(Tensor(rng.normal(size=(1, 3, 4)))).gate_weights[0].values[0]
    np.testing.assert_allclose(weights, [-2.0, 3.0])


def test_classic_mode_matches_softmax_mmoe():
    for case in range(200):
        case_rng = np.random.default_rng(10_000 + case)
        with precision(np.float64):
            network = MMoEPro(4, 3, 5, 3, case_rng)
            tokens = case_rng.normal(size=(4, 4))
            outputs = network(Tensor(tokens[None]), classic=True)
            np.testing.assert_allclose(outputs.gate_weights[0].values.sum(), 1.0, atol=1e-6)
            for task in range(2):
                np.testing.assert_allclose(outputs.outputs[task].values[0],
                                           naive_forward(network, tokens, task, classic=True), atol=1e-5)


def test_vector_input_skips_attention(rng):
    network = MMoEPro(6, 4, 4, 2, rng)
    out = network(Tensor(rng.normal(size=(3, 6))))
    assert out.beta is None
    assert [r.shape for r in out.outputs] == [(3, 4), (3, 4)]
    assert out.expert_outputs.shape == (3, 2, 4)


def test_vector_only_network_owns_no_attention(rng):
    network = MMoEPro(6, 4, 4, 2, rng, tokens=False)
    assert network.attention is None
    assert not any(".attention" in name or name.startswith("attention") for name in network.named_parameters())
    assert network(Tensor(rng.normal(size=(3, 6)))).beta is None
    with pytest.raises(ShapeMismatchError, match="vectors"):
        network(Tensor(rng.normal(size=(3, 2, 6))))


def test_doubling_gate_parameters_doubles_task_outputs(rng):
    network = MMoEPro(4, 3, 4, 3, rng)
    tokens = Tensor(rng.normal(size=(2, 5, 4)))
    before = [r.values.copy() for r in network(tokens).outputs]
    for gate in network.gates:
        gate.weight.values = gate.weight.values * 2.0
        gate.bias.values = gate.bias.values * 2.0
    after = network(tokens).outputs
    for old, new in zip(before, after):
        np.testing.assert_allclose(new.values, 2.0 * old, rtol=1e-5, atol=1e-6)
