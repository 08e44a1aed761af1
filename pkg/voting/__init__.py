"""Explainable veto voting over module confidences."""
from .veto import (
    RULE_DILUTE,
    RULE_KEEP,
    RULE_REPLACE,
    MalformedVoteError,
    VoteInput,
    VoteResult,
    VoteStep,
    VoteTrace,
    confidence,
    majority_class,
    veto_vote,
    vote_on_confidences,
)

__all__ = [
    "RULE_REPLACE",
    "RULE_DILUTE",
    "RULE_KEEP",
    "MalformedVoteError",
    "VoteInput",
    "VoteResult",
    "VoteStep",
    "VoteTrace",
    "confidence",
    "majority_class",
    "veto_vote",
    "vote_on_confidences",
]
