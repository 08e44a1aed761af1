"""Tests for the coarse heads, style generation, AdaIN and the branch adjustment."""
import math

import numpy as np
import pytest

from core.tensor import Tensor, precision
from models.config_schemas import AblationConfig
from networks.refine import (
    REDUCED_DIM,
    SIGMA_FLOOR,
    CoarseHead,
    StyleBank,
    StyleGenerator,
    StyleParams,
    adain,
    adjust_all,
    coarse_predict,
    style_from_output,
)

D = 8


def zero_module(module):
    for param in module.parameters():
        param.values = np.zeros_like(param.values)
    return module


def test_zero_head_predicts_zero(rng):
    head = zero_module(CoarseHead(D, rng))
    assert coarse_predict(Tensor(np.zeros((1, D))), head).values[0] == 0.0


def test_zeroed_reducer_gives_constant_logit(rng):
    head = CoarseHead(D, rng)
    head.reducer.weight.values = np.zeros_like(head.reducer.weight.values)
    head.classifier.bias.values = np.array([0.7], dtype=np.float32)
    logits = head(Tensor(rng.normal(size=(5, D)))).values
    np.testing.assert_allclose(logits, logits[0], atol=1e-7)


def test_head_matches_two_layer_evaluation(rng):
    head = CoarseHead(D, rng)
    head.reducer.bias.values = rng.normal(size=REDUCED_DIM).astype(np.float32)
    r = rng.normal(size=D).astype(np.float32)
    hidden = r @ head.reducer.weight.values + head.reducer.bias.values
    hidden = hidden / (1.0 + np.exp(-hidden))
    expected = hidden @ head.classifier.weight.values[:, 0] + head.classifier.bias.values[0]
    assert head.reduce(Tensor(r)).shape == (REDUCED_DIM,)
    assert coarse_predict(Tensor(r[None]), head).values[0] == pytest.approx(expected, abs=1e-5)


def test_style_inversion_fixed_point_and_symmetry(rng):
    generator = StyleGenerator(D, D, rng)
    plain = style_from_output(Tensor(0.0), False, generator)
    inverted = style_from_output(Tensor(0.0), True, generator)
    np.testing.assert_array_equal(plain.mu.values, inverted.mu.values)

    for value in (-3.7, -0.2, 0.9, 12.0):
        a = style_from_output(Tensor(value), True, generator)
        b = style_from_output(Tensor(-value), False, generator)
        np.testing.assert_array_equal(a.mu.values, b.mu.values)
        np.testing.assert_array_equal(a.sigma.values, b.sigma.values)


def test_sigma_stays_above_floor(rng):
    generator = StyleGenerator(D, D, rng)
    for value in (-10.0, 0.0, 10.0):
        style = style_from_output(Tensor(value), False, generator)
        assert style.mu.shape == style.sigma.shape == (D,)
        assert np.all(style.sigma.values > SIGMA_FLOOR)


def test_adain_examples():
    e = adain(Tensor([1.0, 3.0]), StyleParams(mu=Tensor([0.0, 0.0]), sigma=Tensor([1.0, 1.0])))
    np.testing.assert_allclose(e.values, [-1.0, 1.0], atol=1e-6)

    r = np.array([0.5, -1.0, 2.0, 0.25])
    self_style = StyleParams(mu=Tensor(np.full(4, r.mean())), sigma=Tensor(np.full(4, r.std())))
    np.testing.assert_allclose(adain(Tensor(r), self_style).values, r, atol=1e-5)


def test_adain_elementwise_oracle(rng):
    r = rng.normal(size=(3, D))
    mu, sigma = rng.normal(size=(3, D)), rng.uniform(0.1, 2.0, size=(3, D))
    with precision(np.float64):
        e = adain(Tensor(r), StyleParams(mu=Tensor(mu), sigma=Tensor(sigma))).values
    z = (r - r.mean(axis=-1, keepdims=True)) / r.std(axis=-1, keepdims=True)
    np.testing.assert_allclose(e, sigma * z + mu, atol=1e-5)


def test_adain_transfers_statistics():
    for case in range(1000):
        case_rng = np.random.default_rng(case)
        r = case_rng.normal(scale=case_rng.uniform(0.01, 5.0), size=16)
        if r.std() <= 1e-3:
            continue
        mu = case_rng.normal(size=16)
        sigma = np.full(16, case_rng.uniform(0.1, 3.0))
        with precision(np.float64):
            e = adain(Tensor(r), StyleParams(mu=Tensor(mu), sigma=Tensor(sigma))).values
            shifted = adain(Tensor(r), StyleParams(mu=Tensor(np.full(16, mu[0])), sigma=Tensor(sigma))).values
        assert e.mean() == pytest.approx(mu.mean(), abs=1e-4)
        a, b = shifted - shifted.mean(), r - r.mean()
        assert a @ b / (np.linalg.norm(a) * np.linalg.norm(b)) >= 1 - 1e-6


def branch_inputs(rng, batch=3):
    r = {name: Tensor(rng.normal(size=(batch, D))) for name in ("ip", "is", "t", "mm0", "mm1")}
    o = {name: Tensor(rng.normal(scale=2.0, size=batch)) for name in ("ip", "is", "t", "cons", "mm")}
    return r, o


def run_adjust(r, o, styles, ablation=None):
    return adjust_all(r["ip"], r["is"], r["t"], r["mm0"], r["mm1"], o["ip"], o["is"], o["t"], o["cons"],
                      styles, ablation, o_mm=o["mm"])


def test_zero_styles_give_softplus_zero_spread(rng):
    styles = zero_module(StyleBank(D, D, rng))
    r, _ = branch_inputs(rng)
    zeros = {name: Tensor(np.zeros(3)) for name in ("ip", "is", "t", "cons", "mm")}
    adjusted = run_adjust(r, zeros, styles)
    expected = math.log(2.0) + SIGMA_FLOOR
    for e in (adjusted.e_ip, adjusted.e_is, adjusted.e_t, adjusted.e_x):
        np.testing.assert_allclose(e.values.std(axis=-1), expected, atol=1e-5)


def test_fusion_representation_passes_through(rng):
    r, o = branch_inputs(rng)
    adjusted = run_adjust(r, o, StyleBank(D, D, rng))
    assert adjusted.e_mm is r["mm0"]
    assert len(adjusted.slots()) == 5


def test_consistency_branch_uses_inverted_style(rng):
    styles = StyleBank(D, D, rng)
    r, o = branch_inputs(rng)
    e_x = run_adjust(r, o, styles).e_x.values
    not_inverted = adain(r["mm1"], styles["x"].from_logits(o["cons"], invert=False)).values
    assert not np.allclose(e_x, not_inverted)

    o["cons"] = Tensor(np.zeros(3))
    e_x = run_adjust(r, o, styles).e_x.values
    np.testing.assert_array_equal(e_x, adain(r["mm1"], styles["x"].from_logits(o["cons"])).values)


def test_ablation_switches(rng):
    styles = StyleBank(D, D, rng)
    r, o = branch_inputs(rng)

    plain = run_adjust(r, o, styles, AblationConfig(disable_adain=True))
    assert plain.e_ip is r["ip"] and plain.e_x is r["mm1"]

    no_consistency = run_adjust(r, o, styles, AblationConfig(disable_consistency=True))
    assert no_consistency.e_x is r["mm1"]

    fixed = run_adjust(r, o, styles, AblationConfig(disable_coarse_constraint=True))
    o_other = {name: Tensor(-logit.values) for name, logit in o.items()}
    refixed = run_adjust(r, o_other, styles, AblationConfig(disable_coarse_constraint=True))
    np.testing.assert_array_equal(fixed.e_t.values, refixed.e_t.values)

    mm_only = run_adjust(r, o, styles, AblationConfig(mm_style_only=True))
    expected = adain(r["t"], styles["t"].from_logits(o["mm"])).values
    np.testing.assert_array_equal(mm_only.e_t.values, expected)


def test_mm_style_only_needs_fusion_logit(rng):
    r, o = branch_inputs(rng)
    with pytest.raises(ValueError):
        adjust_all(r["ip"], r["is"], r["t"], r["mm0"], r["mm1"], o["ip"], o["is"], o["t"], o["cons"],
                   StyleBank(D, D, rng), AblationConfig(mm_style_only=True))
