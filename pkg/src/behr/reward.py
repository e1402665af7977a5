"""Behavior-consistency reward from likelihood gaps, plus the alternative
reward targets and group-relative advantage normalization.

Given the reference agent's mean per-token log-likelihood of the logged next
action under a candidate state (l_pred) and the real state (l_real), the gap
delta = l_pred - l_real maps to a reward via one of five modes:

    exponential  exp(-c|delta|)        (0, 1]
    cauchy       1 / (1 + c|delta|)    (0, 1]
    linear       max(0, 1 - c|delta|)  [0, 1]
    neg_l1       -|delta|              (-inf, 0]
    neg_l2       -delta^2              (-inf, 0]

Every mode is symmetric in delta and maximal exactly at delta = 0. The
scale coefficient c applies to the bounded modes only. The default mode is
exponential with c = 1.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from statistics import fmean
from typing import Any, Sequence

from behr.core import Observation, TransitionTuple
from behr.metrics import token_f1
from behr.pages import extract_item_ids, extract_prices, try_parse_page
from behr.scorer import (
    RealStateCache,
    ScorerBackend,
    ScorerError,
    build_agent_context,
    cached_real_logprob,
)

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-8


class RewardModeKind(str, Enum):
    EXPONENTIAL = "exponential"
    CAUCHY = "cauchy"
    LINEAR = "linear"
    NEG_L1 = "neg_l1"
    NEG_L2 = "neg_l2"


@dataclass(frozen=True)
class RewardMode:
    kind: RewardModeKind = RewardModeKind.EXPONENTIAL
    coef: float = 1.0

    def __post_init__(self) -> None:
        if not self.coef > 0:
            raise ValueError("coef must be positive")

    @classmethod
    def parse(cls, kind: str, coef: float = 1.0) -> "RewardMode":
        return cls(kind=RewardModeKind(kind), coef=coef)

    @property
    def maximum(self) -> float:
        """Reward at delta = 0."""
        return 0.0 if self.kind in (RewardModeKind.NEG_L1, RewardModeKind.NEG_L2) else 1.0


def behr(l_pred: float, l_real: float, mode: RewardMode) -> float:
    """Behavior-consistency reward for one candidate state."""
    if not (math.isfinite(l_pred) and math.isfinite(l_real)):
        raise ValueError("log-likelihoods must be finite")
    gap = abs(l_pred - l_real)
    if mode.kind is RewardModeKind.EXPONENTIAL:
        return math.exp(-mode.coef * gap)
    if mode.kind is RewardModeKind.CAUCHY:
        return 1.0 / (1.0 + mode.coef * gap)
    if mode.kind is RewardModeKind.LINEAR:
        return max(0.0, 1.0 - mode.coef * gap)
    if mode.kind is RewardModeKind.NEG_L1:
        return -gap
    return -gap * gap


def group_normalize(rewards: Sequence[float], epsilon: float = DEFAULT_EPSILON) -> list[float]:
    """Group-relative advantages: (r - mean) / (std + epsilon) with the
    population standard deviation. A zero-variance group maps to all zeros.
    """
    if not rewards:
        raise ValueError("rewards must be non-empty")
    mean = fmean(rewards)
    var = fmean([(r - mean) ** 2 for r in rewards])
    std = math.sqrt(var)
    if std == 0.0:
        return [0.0] * len(rewards)
    return [(r - mean) / (std + epsilon) for r in rewards]


class RewardBatchError(RuntimeError):
    """Every candidate in a group failed to score."""


@dataclass(frozen=True)
class CandidateScore:
    index: int
    l_pred: float
    l_real: float
    reward: float

    @property
    def delta(self) -> float:
        return self.l_pred - self.l_real


@dataclass(frozen=True)
class RewardBatch:
    """Per-prompt candidate group: rewards and (once normalized) advantages.

    `scores` keeps the original candidate indices so dropped candidates stay
    visible; `advantages` is empty until `with_advantages` runs.
    """

    prompt_id: str
    scores: tuple[CandidateScore, ...]
    advantages: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.advantages and len(self.advantages) != len(self.scores):
            raise ValueError("advantages must match rewards in length")

    @property
    def rewards(self) -> tuple[float, ...]:
        return tuple(s.reward for s in self.scores)

    def with_advantages(self, epsilon: float = DEFAULT_EPSILON) -> "RewardBatch":
        return replace(self, advantages=tuple(group_normalize(self.rewards, epsilon)))


def score_candidates(
    tuple_: TransitionTuple,
    candidates: Sequence[Observation],
    backend: ScorerBackend,
    mode: RewardMode,
    *,
    cache: RealStateCache,
    prompt_id: str = "prompt-0",
    parallelism: int = 1,
) -> RewardBatch:
    """Score a candidate group against one transition tuple.

    The real-state score is computed (or fetched) exactly once per tuple via
    the shared cache; each candidate costs one backend call. Candidates that
    fail to score are dropped from the group with a logged warning; if all
    fail the batch errors out.
    """
    if not candidates:
        raise ValueError("candidates must be non-empty")
    l_real = cached_real_logprob(tuple_, backend, cache)

    def score_one(idx_obs: tuple[int, Observation]) -> CandidateScore | None:
        idx, obs = idx_obs
        ctx = build_agent_context(tuple_.history, obs, tuple_.domain_tag)
        try:
            l_pred = backend.mean_logprob(ctx, tuple_.expert_next_action)
        except ScorerError:
            logger.warning("dropping candidate %d of %s: scoring failed", idx, prompt_id, exc_info=True)
            return None
        return CandidateScore(
            index=idx,
            l_pred=l_pred.value,
            l_real=l_real.value,
            reward=behr(l_pred.value, l_real.value, mode),
        )

    indexed = list(enumerate(candidates))
    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(score_one, indexed))
    else:
        results = [score_one(io) for io in indexed]
    scores = tuple(s for s in results if s is not None)
    if not scores:
        raise RewardBatchError(f"all candidates failed to score for {prompt_id}")
    return RewardBatch(prompt_id=prompt_id, scores=scores)


def surface_f1_reward(candidate: Observation, real: Observation) -> float:
    """Token-level F1 between candidate and real state texts, exposed as the
    surface-similarity reward target."""
    return token_f1(candidate.text, real.text)


@dataclass(frozen=True)
class FactRBreakdown:
    id_f1: float
    price_f1: float
    page_type_match: float
    parse_failure: bool

    @property
    def value(self) -> float:
        if self.parse_failure:
            return 0.0
        return (self.id_f1 + self.price_f1 + self.page_type_match) / 3.0


def _set_f1(pred: set[str], gold: set[str]) -> float:
    if not pred and not gold:
        return 1.0
    if not pred or not gold:
        return 0.0
    overlap = len(pred & gold)
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(gold)
    return 2 * precision * recall / (precision + recall)


def _multiset_f1(pred: Sequence[str], gold: Sequence[str]) -> float:
    if not pred and not gold:
        return 1.0
    if not pred or not gold:
        return 0.0
    from collections import Counter

    overlap = sum((Counter(pred) & Counter(gold)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(gold)
    return 2 * precision * recall / (precision + recall)


def factr_breakdown(candidate: Observation, real: Observation) -> FactRBreakdown:
    """Structured factual accuracy: item-id set F1, price multiset F1 on the
    canonical "$X.YZ" strings, and 0/1 page-type match. A candidate or real
    state that fails to parse scores 0 with the parse-failure flag set."""
    cand_page = candidate.structured or try_parse_page(candidate.text)
    real_page = real.structured or try_parse_page(real.text)
    if cand_page is None or real_page is None:
        return FactRBreakdown(0.0, 0.0, 0.0, parse_failure=True)
    return FactRBreakdown(
        id_f1=_set_f1(extract_item_ids(cand_page), extract_item_ids(real_page)),
        price_f1=_multiset_f1(extract_prices(cand_page), extract_prices(real_page)),
        page_type_match=1.0 if cand_page.page_type == real_page.page_type else 0.0,
        parse_failure=False,
    )


def factr_reward(candidate: Observation, real: Observation) -> float:
    """Mean of the three structured-accuracy F1 components."""
    return factr_breakdown(candidate, real).value


def reward_records(batch: RewardBatch, mode: RewardMode) -> list[dict[str, Any]]:
    """JSONL-ready rows in the shape a training framework ingests."""
    advantages = batch.advantages or (None,) * len(batch.scores)
    return [
        {
            "prompt_id": batch.prompt_id,
            "candidate_index": s.index,
            "l_pred": s.l_pred,
            "l_real": s.l_real,
            "delta": s.delta,
            "reward": s.reward,
            "advantage": adv,
            "mode": mode.kind.value,
            "coef": mode.coef,
        }
        for s, adv in zip(batch.scores, advantages)
    ]
