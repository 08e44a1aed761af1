"""Veto voting over per-module confidences.

Rule 1 sets ``P_mix = sigmoid(O_mix)``. Each module is then visited in the
order ip, is, t, mm and exactly one rule fires:

- R2: ``P_i > theta_high`` and ``P_i > P_mix``: ``P_mix`` becomes ``P_i``.
- R3: ``P_i < theta_low`` and the module's decision is the majority class:
  ``P_mix`` becomes the average of ``P_mix`` and the largest confidence among
  modules outside the majority class (all modules when none is outside, or
  always all modules under the ``formula`` reading).
- R4: otherwise ``P_mix`` is kept.

The majority class is computed once before the sweep; a tie resolves to the
class implied by the initial ``P_mix``.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

from models.config_schemas import MODULE_IDS
from utils.errors import ConfigError

logger = logging.getLogger(__name__)

RULE_REPLACE = "R2"
RULE_DILUTE = "R3"
RULE_KEEP = "R4"
RULE3_READINGS = ("prose", "formula")


class MalformedVoteError(ConfigError):
    """The vote input violates its invariants."""


def confidence(logit: float) -> float:
    """``sigmoid(O)`` evaluated without overflow."""
    if logit >= 0:
        return 1.0 / (1.0 + math.exp(-logit))
    z = math.exp(logit)
    return z / (1.0 + z)


def majority_class(confidences: Sequence[float], p_mix: float) -> Tuple[int, bool]:
    """Class decided by most modules (``P_i > 0.5`` means class 1).

    Args:
        confidences: One confidence per voting module
        p_mix: Initial ``P_mix``, used to break an even split

    Returns:
        Tuple of (majority class, tie flag)
    """
    ones = sum(1 for p in confidences if p > 0.5)
    zeros = len(confidences) - ones
    if ones == zeros:
        return int(p_mix > 0.5), True
    return int(ones > zeros), False


@dataclass(frozen=True)
class VoteStep:
    module: str
    confidence: float
    rule: str
    p_mix_before: float
    p_mix_after: float


@dataclass
class VoteTrace:
    """Ordered record of the rules fired and the evolving ``P_mix``."""

    steps: List[VoteStep]
    initial_p_mix: float
    final_p_mix: float
    majority_class: int
    tie: bool
    theta_high: float
    theta_low: float

    @property
    def label(self) -> int:
        return int(self.final_p_mix > 0.5)

    def rules(self) -> List[str]:
        return [step.rule for step in self.steps]

    def narrative(self) -> List[str]:
        """One human-readable line per rule firing plus a closing verdict."""
        lines = []
        for step in self.steps:
            if step.rule == RULE_REPLACE:
                lines.append(
                    f"{step.module}: R2 - confidence {step.confidence:.3f} exceeds theta_high "
                    f"{self.theta_high:g} and P_mix {step.p_mix_before:.3f}; its output replaces "
                    f"the concatenated prediction (P_mix -> {step.p_mix_after:.3f})"
                )
            elif step.rule == RULE_DILUTE:
                lines.append(
                    f"{step.module}: R3 - confidence {step.confidence:.3f} is below theta_low "
                    f"{self.theta_low:g} and agrees with majority class {self.majority_class}; "
                    f"P_mix is averaged with the strongest other output "
                    f"({step.p_mix_before:.3f} -> {step.p_mix_after:.3f})"
                )
            else:
                lines.append(
                    f"{step.module}: R4 - confidence {step.confidence:.3f} triggers no veto; "
                    f"P_mix stays {step.p_mix_after:.3f}"
                )
        if all(step.rule == RULE_KEEP for step in self.steps):
            decider = "the concatenated prediction decided"
        else:
            decider = "the veto adjusted the concatenated prediction"
        lines.append(f"final: P_mix {self.final_p_mix:.3f} -> label {self.label} ({decider})")
        return lines


@dataclass(frozen=True)
class VoteInput:
    """Module logits in the fixed order plus the concatenated logit and thresholds.

    ``modules`` lists the voting module ids; it is the full ip, is, t, mm set
    unless a module subset is being evaluated.
    """

    module_logits: Tuple[Tuple[str, float], ...]
    mix_logit: float
    theta_high: float = 0.9
    theta_low: float = 0.1
    rule3_reading: str = "prose"
    modules: Tuple[str, ...] = field(default=MODULE_IDS)

    def validate(self) -> None:
        ids = tuple(module for module, _ in self.module_logits)
        expected = tuple(m for m in MODULE_IDS if m in self.modules)
        if not expected or len(expected) != len(self.modules):
            raise MalformedVoteError(f"unknown voting modules {self.modules}")
        if ids != expected:
            raise MalformedVoteError(f"module logits must be ordered {list(expected)}, got {list(ids)}")
        _check_thresholds(self.theta_high, self.theta_low, self.rule3_reading)
        values = [logit for _, logit in self.module_logits] + [self.mix_logit]
        if not all(math.isfinite(v) for v in values):
            raise MalformedVoteError(f"non-finite logit in {values}")


@dataclass(frozen=True)
class VoteResult:
    label: int
    p_final: float
    trace: VoteTrace


def _check_thresholds(theta_high: float, theta_low: float, rule3_reading: str) -> None:
    if not 0.0 < theta_low < theta_high < 1.0:
        raise MalformedVoteError(
            f"thresholds must satisfy 0 < theta_low < theta_high < 1, got ({theta_low}, {theta_high})"
        )
    if rule3_reading not in RULE3_READINGS:
        raise MalformedVoteError(f"unknown rule3_reading '{rule3_reading}'")


def vote_on_confidences(modules: Sequence[str], confidences: Sequence[float], p_mix: float,
                        theta_high: float = 0.9, theta_low: float = 0.1,
                        rule3_reading: str = "prose") -> VoteResult:
    """Apply Rules 2-4 to confidences that already went through Rule 1.

    Args:
        modules: Module ids in iteration order
        confidences: ``P_i`` per module
        p_mix: Initial ``P_mix``
        theta_high: High-confidence threshold
        theta_low: Low-confidence threshold
        rule3_reading: ``prose`` or ``formula``

    Returns:
        Label, final ``P_mix`` and the trace
    """
    _check_thresholds(theta_high, theta_low, rule3_reading)
    if len(modules) != len(confidences) or not modules:
        raise MalformedVoteError(f"{len(modules)} modules but {len(confidences)} confidences")
    if not all(0.0 <= p <= 1.0 for p in list(confidences) + [p_mix]):
        raise MalformedVoteError("confidences must lie in [0, 1]")

    majority, tie = majority_class(confidences, p_mix)
    decisions = [int(p > 0.5) for p in confidences]
    outside = [p for p, decision in zip(confidences, decisions) if decision != majority]
    if rule3_reading == "prose" and outside:
        dilution_target = max(outside)
    else:
        dilution_target = max(confidences)

    initial = p_mix
    steps = []
    for module, p, decision in zip(modules, confidences, decisions):
        before = p_mix
        if p > theta_high and p > p_mix:
            rule = RULE_REPLACE
            p_mix = p
        elif p < theta_low and decision == majority:
            rule = RULE_DILUTE
            p_mix = 0.5 * (p_mix + dilution_target)
        else:
            rule = RULE_KEEP
        steps.append(VoteStep(module, p, rule, before, p_mix))

    trace = VoteTrace(steps=steps, initial_p_mix=initial, final_p_mix=p_mix, majority_class=majority,
                      tie=tie, theta_high=theta_high, theta_low=theta_low)
    return VoteResult(label=trace.label, p_final=p_mix, trace=trace)


def veto_vote(vote: VoteInput) -> VoteResult:
    """Rule 1 followed by Rules 2-4 over the module logits."""
    vote.validate()
    modules = [module for module, _ in vote.module_logits]
    confidences = [confidence(logit) for _, logit in vote.module_logits]
    return vote_on_confidences(modules, confidences, confidence(vote.mix_logit),
                               vote.theta_high, vote.theta_low, vote.rule3_reading)
