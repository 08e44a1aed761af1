"""Coarse prediction heads, logit-driven style generation and AdaIN adjustment."""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from core.module import MLP, Linear, Module
from core.tensor import Tensor, reduce_stats, reshape, sigmoid, silu, softplus
from models.config_schemas import AblationConfig

logger = logging.getLogger(__name__)

REDUCED_DIM = 64
SIGMA_FLOOR = 1e-4
FIXED_STYLE_INPUT = 0.5
STYLE_BRANCHES = ("ip", "is", "t", "x")


class CoarseHead(Module):
    """64-dim SiLU reduction followed by a scalar logit."""

    def __init__(self, d: int, rng: np.random.Generator, init: str = "xavier"):
        self.reducer = Linear(d, REDUCED_DIM, rng, init)
        self.classifier = Linear(REDUCED_DIM, 1, rng, init)

    def reduce(self, r: Tensor) -> Tensor:
        """Reduced representation ``[..., 64]``."""
        return silu(self.reducer(r))

    def __call__(self, r: Tensor) -> Tensor:
        """Logits ``[B]`` for representations ``[B, d]``."""
        logits = self.classifier(self.reduce(r))
        return reshape(logits, logits.shape[:-1])


def coarse_predict(r: Tensor, head: CoarseHead) -> Tensor:
    """Scalar logit ``O = classifier(SiLU(reducer(r)))`` for one ``r [d]``."""
    return head(r)


@dataclass
class StyleParams:
    """Target statistics for AdaIN; every ``sigma`` entry is positive."""

    mu: Tensor
    sigma: Tensor


class StyleGenerator(Module):
    """``MLP_mu`` and ``MLP_sigma`` from a scalar confidence to ``[d]`` statistics."""

    def __init__(self, d: int, hidden: int, rng: np.random.Generator, init: str = "xavier"):
        self.mlp_mu = MLP(1, hidden, d, rng, init)
        self.mlp_sigma = MLP(1, hidden, d, rng, init)

    def __call__(self, s: Tensor) -> StyleParams:
        """Style for confidences ``s`` of shape ``[B]``."""
        column = reshape(s, s.shape + (1,))
        mu = self.mlp_mu(column)
        sigma = softplus(self.mlp_sigma(column)) + SIGMA_FLOOR
        return StyleParams(mu=mu, sigma=sigma)

    def from_logits(self, logits: Tensor, invert: bool = False) -> StyleParams:
        """Style from logits ``O [B]``; ``invert`` uses ``1 - sigmoid(O)``.

        The inverted confidence is evaluated as ``sigmoid(-O)`` so the inverted
        style of ``O`` is bit-identical to the plain style of ``-O``.
        """
        return self(sigmoid(-logits if invert else logits))


def style_from_output(logit: Tensor, invert: bool, generator: StyleGenerator) -> StyleParams:
    """Style for one scalar logit; ``mu`` and ``sigma`` have shape ``[d]``."""
    style = generator.from_logits(reshape(logit, (1,)), invert=invert)
    return StyleParams(mu=reshape(style.mu, style.mu.shape[1:]),
                       sigma=reshape(style.sigma, style.sigma.shape[1:]))


def adain(r: Tensor, style: StyleParams) -> Tensor:
    """``e = sigma * (r - mu_r) / sigma_r + mu`` with statistics over the feature axis.

    Args:
        r: Representation ``[d]`` or batch ``[B, d]`` (d >= 2)
        style: Target statistics shaped like ``r``

    Returns:
        Adjusted representation, same shape as ``r``
    """
    mu_r, sigma_r = reduce_stats(r, axis=-1, keepdims=True)
    return style.sigma * ((r - mu_r) / sigma_r) + style.mu


@dataclass
class AdjustedSet:
    """Adjusted representations in ``e_mix`` slot order."""

    e_ip: Tensor
    e_is: Tensor
    e_t: Tensor
    e_x: Tensor
    e_mm: Tensor

    def slots(self) -> List[Tensor]:
        return [self.e_ip, self.e_is, self.e_t, self.e_x, self.e_mm]


class StyleBank(Module):
    """One style generator per adjusted branch (ip, is, t and the consistency branch x)."""

    def __init__(self, d: int, hidden: int, rng: np.random.Generator, init: str = "xavier"):
        self.generators: Dict[str, StyleGenerator] = {
            branch: StyleGenerator(d, hidden, rng, init) for branch in STYLE_BRANCHES
        }

    def __getitem__(self, branch: str) -> StyleGenerator:
        return self.generators[branch]


def adjust_all(r_ip: Tensor, r_is: Tensor, r_t: Tensor, r_mm0: Tensor, r_mm1: Tensor,
               o_ip: Tensor, o_is: Tensor, o_t: Tensor, o_cons: Tensor,
               styles: StyleBank, ablation: Optional[AblationConfig] = None,
               o_mm: Optional[Tensor] = None) -> AdjustedSet:
    """Adjust every branch with the style generated from its coarse logit.

    ``e_x`` adjusts ``r_mm1`` with the inverted consistency style and ``e_mm``
    is ``r_mm0`` unchanged. Ablation switches:

    - ``disable_adain``: every ``e`` is its ``r``.
    - ``disable_coarse_constraint``: styles come from the fixed confidence 0.5.
    - ``disable_consistency``: ``e_x`` is ``r_mm1`` unadjusted.
    - ``mm_style_only``: every branch takes its style from ``o_mm``.

    Args:
        r_ip, r_is, r_t, r_mm0, r_mm1: Refined representations ``[B, d]``
        o_ip, o_is, o_t, o_cons: Coarse logits ``[B]``
        styles: Style generators per branch
        ablation: Active switches (defaults to none)
        o_mm: Fusion logit, required by ``mm_style_only``

    Returns:
        The adjusted set
    """
    ablation = ablation or AblationConfig()
    if ablation.disable_adain:
        return AdjustedSet(e_ip=r_ip, e_is=r_is, e_t=r_t, e_x=r_mm1, e_mm=r_mm0)

    if ablation.mm_style_only:
        if o_mm is None:
            raise ValueError("mm_style_only needs the fusion logit o_mm")
        o_ip = o_is = o_t = o_cons = o_mm

    def style(branch: str, logits: Tensor, invert: bool = False) -> StyleParams:
        if ablation.disable_coarse_constraint:
            fixed = Tensor(np.full(logits.shape, FIXED_STYLE_INPUT))
            return styles[branch](fixed)
        return styles[branch].from_logits(logits, invert=invert)

    e_x = r_mm1 if ablation.disable_consistency else adain(r_mm1, style("x", o_cons, invert=True))
    return AdjustedSet(
        e_ip=adain(r_ip, style("ip", o_ip)),
        e_is=adain(r_is, style("is", o_is)),
        e_t=adain(r_t, style("t", o_t)),
        e_x=e_x,
        e_mm=r_mm0,
    )
