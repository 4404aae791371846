"""Composite trajectory reward: answer, think (alignment + logic) and
multi-view terms, scored through a pluggable judge."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from . import policy
from .env import ArtifactKind, MultiViewEvidence
from .vocab import (
    ABSTAIN, Token, claimed_artifacts, is_well_formed, think_body,
    think_close_index,
)

LOGIC_DIRECTIONS = ("stability", "sensitivity")
MIN_LOGIC_BODY = 3


@dataclass(frozen=True)
class RewardWeights:
    lambda_s: float = 1.0
    lambda_t: float = 0.5
    lambda_v: float = 0.5

    def __post_init__(self):
        if min(self.lambda_s, self.lambda_t, self.lambda_v) < 0:
            raise ValueError("reward weights must be non-negative")

    @property
    def max_total(self) -> float:
        return self.lambda_s + 2 * self.lambda_t + self.lambda_v

    @property
    def mode(self) -> str:
        return "grpo" if self.lambda_t == 0 and self.lambda_v == 0 else "r-grpo"


@dataclass(frozen=True)
class RewardBreakdown:
    r_sem: int
    a_sem: float
    a_logic: float
    r_think: float
    r_view: float
    total: float


def r_sem(answer: str, gold_answer: str) -> int:
    if gold_answer not in ("REAL", "FAKE"):
        raise ValueError(f"gold answer must be REAL or FAKE, got {gold_answer!r}")
    return int(answer != ABSTAIN and answer == gold_answer)


def lcs_length(a: Sequence, b: Sequence) -> int:
    # single-row DP
    row = [0] * (len(b) + 1)
    for x in a:
        prev_diag = 0
        for j, y in enumerate(b, 1):
            keep = row[j]
            row[j] = prev_diag + 1 if x == y else max(row[j], row[j - 1])
            prev_diag = keep
    return row[-1]


def shuffle_trace(trace: Sequence[int], perturb_seed: int) -> tuple:
    """Fisher-Yates shuffle of the think body; everything else stays put."""
    trace = tuple(Token(int(t)) for t in trace)
    body = list(think_body(trace))
    if len(body) <= 1:
        return trace
    rng = np.random.default_rng(perturb_seed)
    for i in range(len(body) - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        body[i], body[j] = body[j], body[i]
    return trace[:1] + tuple(body) + trace[1 + len(body):]


def oracle_assess_sem(trace: Sequence[int], gold_trace: Sequence[int]) -> float:
    """Dice-style LCS overlap ``2 LCS / (|z| + |z*|)``."""
    if len(trace) == 0 or len(gold_trace) == 0:
        raise ValueError("sequences must be non-empty")
    a = [int(t) for t in trace]
    b = [int(t) for t in gold_trace]
    return 2.0 * lcs_length(a, b) / (len(a) + len(b))


def oracle_assess_logic(trace, shuffled, params, features, direction: str = "stability") -> float:
    if direction not in LOGIC_DIRECTIONS:
        raise ValueError(f"direction must be one of {LOGIC_DIRECTIONS}")
    if len(think_body(trace)) < MIN_LOGIC_BODY or think_close_index(shuffled) is None:
        return 0.0
    a = np.argmax(policy.answer_dist(params, features, trace))
    b = np.argmax(policy.answer_dist(params, features, shuffled))
    same = a == b
    return float(same if direction == "stability" else not same)


def oracle_assess_view(trace: Sequence[int], views: MultiViewEvidence) -> float:
    claims = {ArtifactKind[t.name] for t in claimed_artifacts(trace)}
    evidence = set(views.visible_union())
    if not claims and not evidence:
        return 1.0
    hit = len(claims & evidence)
    if not claims or not evidence or hit == 0:
        return 0.0
    precision, recall = hit / len(claims), hit / len(evidence)
    return 2 * precision * recall / (precision + recall)


class Judge(Protocol):
    def assess(self, trace, gold_trace, shuffled, views, params, features) -> tuple[float, float, float]:
        """(a_sem, a_logic, a_view), each in [0, 1]."""


class OracleJudge:
    """Deterministic metric judge; pure and thread-safe."""

    def __init__(self, logic_direction: str = "stability"):
        if logic_direction not in LOGIC_DIRECTIONS:
            raise ValueError(f"logic_direction must be one of {LOGIC_DIRECTIONS}")
        self.logic_direction = logic_direction

    def assess_sem(self, trace, gold_trace) -> float:
        return oracle_assess_sem(trace, gold_trace)

    def assess_logic(self, trace, shuffled, params, features) -> float:
        return oracle_assess_logic(trace, shuffled, params, features, self.logic_direction)

    def assess_view(self, trace, views) -> float:
        return oracle_assess_view(trace, views)

    def assess(self, trace, gold_trace, shuffled, views, params, features):
        return (
            self.assess_sem(trace, gold_trace),
            self.assess_logic(trace, shuffled, params, features),
            self.assess_view(trace, views),
        )


def _checked(scores) -> tuple[float, float, float]:
    out = tuple(float(s) for s in scores)
    if len(out) != 3 or any(not 0.0 <= s <= 1.0 for s in out):
        raise ValueError(f"judge scores must be three values in [0, 1], got {scores}")
    return out


def r_think(trace, gold_trace, perturb_seed: int, judge, params, features) -> float:
    """A_sem + A_logic; malformed or empty traces score 0."""
    if not trace or not is_well_formed(trace):
        return 0.0
    shuffled = shuffle_trace(trace, perturb_seed)
    if isinstance(judge, OracleJudge):
        return judge.assess_sem(trace, gold_trace) + judge.assess_logic(trace, shuffled, params, features)
    a_sem, a_logic, _ = _checked(judge.assess(trace, gold_trace, shuffled, None, params, features))
    return a_sem + a_logic


def composite_reward(trajectory, instance, weights: RewardWeights, perturb_seed: int,
                     judge, params) -> RewardBreakdown:
    """Weighted sum of answer, think and view rewards for one trajectory.

    ``params`` is the policy the trajectory came from; the oracle logic check
    re-reads its answer distribution on the shuffled trace.
    """
    trace = tuple(trajectory.trace)
    sem = r_sem(trajectory.answer, instance.label)
    if not is_well_formed(trace):
        return RewardBreakdown(sem, 0.0, 0.0, 0.0, 0.0, weights.lambda_s * sem)
    shuffled = shuffle_trace(trace, perturb_seed)
    a_sem, a_logic, a_view = _checked(
        judge.assess(trace, instance.gold_trace, shuffled, instance.views, params, instance.features)
    )
    think = a_sem + a_logic
    total = weights.lambda_s * sem + weights.lambda_t * think + weights.lambda_v * a_view
    return RewardBreakdown(sem, a_sem, a_logic, think, a_view, total)
